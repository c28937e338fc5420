//! Run directories, report envelopes and CSV writers.

use std::fs;
use std::path::{Path, PathBuf};

use hclt_core::{HilbertOperator, Result};
use serde::Serialize;

use crate::spec::{SpecFile, SCHEMA_VERSION};

pub const LATEST: &str = "latest";

/// `<root>/<command>/<timestamp>-<seed>`, with a numeric suffix if that
/// directory already exists. Updates the `latest` pointer file.
pub fn create_run_dir(root: &Path, command: &str, seed: u64) -> Result<PathBuf> {
    let parent = root.join(command);
    fs::create_dir_all(&parent)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{seed}");
    let mut name = base.clone();
    let mut k = 1;
    while parent.join(&name).exists() {
        name = format!("{base}-{k}");
        k += 1;
    }
    let dir = parent.join(&name);
    fs::create_dir(&dir)?;
    fs::write(parent.join(LATEST), format!("{name}\n"))?;
    Ok(dir)
}

/// Resolves the `latest` pointer of a command directory.
pub fn latest_run(root: &Path, command: &str) -> Result<PathBuf> {
    let parent = root.join(command);
    let name = fs::read_to_string(parent.join(LATEST))?;
    Ok(parent.join(name.trim()))
}

#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub seed: u64,
    pub complete: bool,
    pub forced: bool,
    pub spec: &'a SpecFile,
    pub result: T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(command: &'a str, seed: u64, spec: &'a SpecFile, result: T) -> Self {
        Self { schema_version: SCHEMA_VERSION, command, seed, complete: true, forced: false, spec, result }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> hclt_core::Error {
    hclt_core::Error::Io(std::io::Error::other(e))
}

/// Writes a header row followed by `rows`.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Long-format `row,col,value` listing of an operator.
pub fn write_operator_csv(path: &Path, op: &HilbertOperator) -> Result<()> {
    let d = op.dim();
    let rows = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| {
        vec![(i + 1).to_string(), (j + 1).to_string(), num(op.get(i, j))]
    });
    write_csv(path, &["row", "col", "value"], rows)
}
