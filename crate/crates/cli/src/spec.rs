//! Experiment spec files (TOML or JSON) and their resolution into library
//! objects.

use std::path::{Path, PathBuf};

use hclt_core::harness::{operator_rank, RANK_MC_SAMPLES};
use hclt_core::hermite::HermiteCoefficients;
use hclt_core::limit::DEFAULT_V_MAX;
use hclt_core::subordination::DEFAULT_MEAN_SAMPLES;
use hclt_core::{Activation, Error, ModelConfig, OperatorG, ProcessModel, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BUDGET_SECS: f64 = 600.0;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    Identity,
    #[serde(alias = "sample_covariance")]
    Covariance,
    #[serde(alias = "eigenvalue_functional")]
    Eigenvalue,
    Neural,
    #[serde(alias = "hermite_defined")]
    Hermite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub kind: OperatorName,
    /// One-based basis index for the eigenvalue functional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    /// Path to a coefficient table, relative to the spec file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub n_values: Vec<usize>,
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub raw_samples: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    /// Largest truncation level `M`.
    pub m: usize,
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub proxy: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discarded_mass: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<Format>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub model: ModelConfig,
    #[serde(default, alias = "G", skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ConditionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

/// A parsed spec together with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub file: SpecFile,
    pub base_dir: PathBuf,
}

pub fn parse_spec(text: &str, json: bool) -> Result<SpecFile> {
    let spec: SpecFile = if json {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_spec(path: &Path) -> Result<LoadedSpec> {
    let text = std::fs::read_to_string(path)?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let file = parse_spec(&text, json)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedSpec { file, base_dir })
}

impl SpecFile {
    /// Schema checks that do not need any computation.
    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        if let Some(e) = &self.experiment {
            if e.replications < hclt_core::harness::MIN_REPLICATIONS {
                return Err(Error::Parse(format!(
                    "experiment.replications must be at least {}",
                    hclt_core::harness::MIN_REPLICATIONS
                )));
            }
            if e.n_values.is_empty() || e.n_values.contains(&0) {
                return Err(Error::Parse("experiment.n_values must be nonempty and positive".into()));
            }
            if let Some(g) = &e.grid {
                if g.is_empty() || g.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(Error::Parse("experiment.grid points must lie in [0, 1]".into()));
                }
            }
            if e.budget_secs.is_some_and(|b| !(b > 0.0)) {
                return Err(Error::Parse("experiment.budget_secs must be positive".into()));
            }
        }
        if let Some(op) = &self.operator {
            match op.kind {
                OperatorName::Eigenvalue if op.j.is_none() => {
                    return Err(Error::Parse("eigenvalue operator needs j".into()))
                }
                OperatorName::Neural if op.rank.is_none() => return Err(Error::Parse("neural operator needs rank".into())),
                OperatorName::Hermite if op.coefficients.is_none() => {
                    return Err(Error::Parse("hermite operator needs a coefficients path".into()))
                }
                _ => {}
            }
        }
        if let Some(b) = &self.bounds {
            if b.n_values.is_empty() || b.n_values.contains(&0) || b.m == 0 {
                return Err(Error::Parse("bounds needs m ≥ 1 and positive n_values".into()));
            }
        }
        if self.condition.as_ref().and_then(|c| c.q) == Some(0) {
            return Err(Error::Parse("condition.q must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed(&self, cli: Option<u64>) -> u64 {
        cli.or(self.experiment.as_ref().and_then(|e| e.seed)).unwrap_or(DEFAULT_SEED)
    }

    pub fn v_max(&self) -> usize {
        self.condition.as_ref().and_then(|c| c.v_max).unwrap_or(DEFAULT_V_MAX)
    }

    pub fn budget_secs(&self) -> f64 {
        self.experiment.as_ref().and_then(|e| e.budget_secs).unwrap_or(DEFAULT_BUDGET_SECS)
    }

    pub fn wants_csv(&self) -> bool {
        self.output.as_ref().and_then(|o| o.formats.as_ref()).is_none_or(|f| f.contains(&Format::Csv))
    }
}

impl LoadedSpec {
    pub fn model(&self) -> Result<ProcessModel> {
        self.file.model.build()
    }

    /// Builds `G` together with the process it consumes (stacked copies for
    /// the neural operator).
    pub fn operator(&self, seed: u64) -> Result<(OperatorG, ProcessModel)> {
        let op = self.file.operator.as_ref().ok_or_else(|| Error::Parse("spec has no operator block".into()))?;
        let model = self.model()?;
        let g = match op.kind {
            OperatorName::Identity => OperatorG::identity(&model),
            OperatorName::Covariance => OperatorG::sample_covariance(&model),
            OperatorName::Eigenvalue => OperatorG::eigenvalue(&model, op.j.unwrap_or(1))?,
            OperatorName::Neural => {
                let rank = op.rank.unwrap_or(1);
                let stacked = model.stacked(2 * rank)?;
                let g = OperatorG::neural(
                    &stacked,
                    rank,
                    op.activation.unwrap_or(Activation::Tanh),
                    op.mc_samples.unwrap_or(DEFAULT_MEAN_SAMPLES),
                    seed,
                )?;
                return Ok((g, stacked));
            }
            OperatorName::Hermite => {
                let rel = op.coefficients.as_deref().expect("validated");
                let path = self.base_dir.join(rel);
                let text = std::fs::read_to_string(&path)?;
                let coeffs: HermiteCoefficients = serde_json::from_str(&text)?;
                OperatorG::hermite_defined(&model, coeffs)?
            }
        };
        Ok((g, model))
    }

    /// Rank for the condition check: the configured override, else the
    /// operator's rank, else one.
    pub fn q(&self, seed: u64) -> Result<usize> {
        if let Some(q) = self.file.condition.as_ref().and_then(|c| c.q) {
            return Ok(q);
        }
        if self.file.operator.is_none() {
            return Ok(1);
        }
        let (g, _) = self.operator(seed)?;
        Ok(operator_rank(&g, RANK_MC_SAMPLES, seed)?.report.rank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[model]\nvariant = \"arh1\"\ndim = 1\nspectrum = [1.0]\nalphas = [0.5]\n";

    #[test]
    fn toml_and_json_agree() {
        let text = format!("{BASE}[operator]\nkind = \"eigenvalue\"\nj = 1\n[experiment]\nn_values = [64]\nreplications = 100\n");
        let a = parse_spec(&text, false).unwrap();
        let b = parse_spec(&serde_json::to_string(&a).unwrap(), true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn operator_alias() {
        let text = format!("{BASE}[G]\nkind = \"identity\"\n");
        assert_eq!(parse_spec(&text, false).unwrap().operator.unwrap().kind, OperatorName::Identity);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(parse_spec(&format!("{BASE}bogus = 1\n"), false).is_err());
        assert!(parse_spec("[model]\nvariant = \"iid\"\ndim = 2\n", false).is_err());
        assert!(parse_spec(&format!("{BASE}[experiment]\nn_values = [64]\nreplications = 10\n"), false).is_err());
        assert!(parse_spec(&format!("{BASE}[operator]\nkind = \"eigenvalue\"\n"), false).is_err());
        assert!(parse_spec(&format!("{BASE}[operator]\nkind = \"nope\"\n"), false).is_err());
        assert!(parse_spec(&format!("{BASE}[condition]\nq = 0\n"), false).is_err());
        assert!(parse_spec(&format!("{BASE}[experiment]\nn_values = [64]\nreplications = 100\ngrid = [1.5]\n"), false).is_err());
    }
}
