use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hclt_core::harness::{
    cosine_proxy, operator_rank, run_clt_experiment, run_continuous_experiment, theoretical_tz, CltReport,
    ExperimentConfig, ProxyEstimate, RankResolution, RANK_MC_SAMPLES,
};
use hclt_core::hermite::to_chaos_coefficients;
use hclt_core::limit::{
    check_condition, compare_conditions, quantitative_bounds_with_defect, BoundReport, ConditionComparison,
    ConditionReport, Verdict,
};
use hclt_core::{Error, Result};
use serde::Serialize;

use crate::output::{create_run_dir, num, write_csv, write_json, write_operator_csv, Envelope};
use crate::spec::{load_spec, LoadedSpec};
use crate::{oracle, CommonArgs, Outcome, DEFAULT_OUT, EXIT_BUDGET, EXIT_CONDITION_FAIL, EXIT_INDETERMINATE, EXIT_OK, OUT_ENV};

pub const DEFAULT_PROXY_REPLICATIONS: usize = 4000;

pub(crate) fn dispatch(name: &str, args: &CommonArgs, started: Instant) -> Result<Outcome> {
    if name == "oracle" {
        let root = out_root(args, None);
        return oracle::run_oracle(&root);
    }
    let path = args.spec.as_ref().ok_or_else(|| Error::Parse("--spec is required".into()))?;
    let spec = load_spec(path)?;
    let root = out_root(args, Some(&spec));
    match name {
        "check" => cmd_check(&spec, args, &root),
        "rank" => cmd_rank(&spec, args, &root),
        "clt" => cmd_experiment(&spec, args, &root, started, false),
        "continuous" => cmd_experiment(&spec, args, &root, started, true),
        "bounds" => cmd_bounds(&spec, args, &root),
        other => Err(Error::Parse(format!("unknown command {other}"))),
    }
}

/// `--out`, then the spec's `output.dir`, then `$HCLT_OUT`, then a local default.
fn out_root(args: &CommonArgs, spec: Option<&LoadedSpec>) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    if let Some(dir) = spec.and_then(|s| s.file.output.as_ref()).and_then(|o| o.dir.as_ref()) {
        return spec.expect("checked").base_dir.join(dir);
    }
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    runtime_secs: f64,
    finished_utc: String,
    threads: usize,
    exit_code: i32,
}

pub(crate) fn write_run_info(dir: &Path, command: &str, started: Instant, threads: usize, code: i32) -> Result<()> {
    let info = RunInfo {
        command,
        runtime_secs: started.elapsed().as_secs_f64(),
        finished_utc: chrono::Utc::now().to_rfc3339(),
        threads,
        exit_code: code,
    };
    write_json(&dir.join("run.json"), &info)
}

#[derive(Serialize)]
struct CheckResult {
    condition: ConditionReport,
    comparison: ConditionComparison,
}

fn cmd_check(spec: &LoadedSpec, args: &CommonArgs, root: &Path) -> Result<Outcome> {
    let seed = spec.file.seed(args.seed);
    let model = spec.model()?;
    let q = spec.q(seed)?;
    let v_max = spec.file.v_max();
    let report = check_condition(&model, q, v_max, model.dim())?;
    let comparison = compare_conditions(&model, q, v_max, model.dim());
    let code = match report.verdict {
        Verdict::Pass => EXIT_OK,
        Verdict::Fail => EXIT_CONDITION_FAIL,
        Verdict::Indeterminate => EXIT_INDETERMINATE,
    };
    println!(
        "verdict {:?}  q={}  theta_sum={:.6}  K={}",
        report.verdict,
        q,
        report.theta_sum,
        report.k.map_or("none".to_string(), |k| k.to_string())
    );
    let dir = create_run_dir(root, "check", seed)?;
    if spec.file.wants_csv() {
        let rows = report.theta_v.iter().map(|(v, t)| vec![v.to_string(), num(*t)]);
        write_csv(&dir.join("theta.csv"), &["v", "theta"], rows)?;
    }
    let env = Envelope::new("check", seed, &spec.file, CheckResult { condition: report, comparison });
    write_json(&dir.join("condition.json"), &env)?;
    Ok(Outcome::new(code, dir))
}

fn cmd_rank(spec: &LoadedSpec, args: &CommonArgs, root: &Path) -> Result<Outcome> {
    let seed = spec.file.seed(args.seed);
    let (g, _) = spec.operator(seed)?;
    let samples = spec.file.operator.as_ref().and_then(|o| o.mc_samples).unwrap_or(RANK_MC_SAMPLES);
    let res: RankResolution = operator_rank(&g, samples, seed)?;
    println!(
        "rank {}  margin {:.3e}  source {}  leading c={:.6e} at output {} index {}",
        res.report.rank,
        res.report.margin,
        match res.source {
            hclt_core::harness::RankSource::ClosedForm => "closed-form",
            hclt_core::harness::RankSource::MonteCarlo => "monte-carlo",
        },
        res.report.leading.c,
        res.report.leading.i,
        res.report.leading.l.label(),
    );
    let dir = create_run_dir(root, "rank", seed)?;
    if let Some(c) = &res.coefficients {
        write_json(&dir.join("coefficients.json"), c)?;
    }
    write_json(&dir.join("report.json"), &Envelope::new("rank", seed, &spec.file, &res))?;
    Ok(Outcome::new(EXIT_OK, dir))
}

fn cmd_experiment(spec: &LoadedSpec, args: &CommonArgs, root: &Path, started: Instant, continuous: bool) -> Result<Outcome> {
    let command = if continuous { "continuous" } else { "clt" };
    let exp = spec.file.experiment.as_ref().ok_or_else(|| Error::Parse("spec has no experiment block".into()))?;
    let seed = spec.file.seed(args.seed);
    let (g, model) = spec.operator(seed)?;
    let mut cfg = ExperimentConfig::new(model, g, exp.n_values.clone(), exp.replications, seed)?;
    if let Some(grid) = &exp.grid {
        cfg.grid = grid.clone();
    }
    cfg.q = spec.file.condition.as_ref().and_then(|c| c.q);
    cfg.v_max = spec.file.v_max();
    cfg.force = args.force;
    cfg.raw_samples = exp.raw_samples;
    cfg.deadline = Some(started + Duration::from_secs_f64(spec.file.budget_secs()));
    eprintln!(
        "hclt {command}: {} with R={} over n={:?}",
        cfg.g.label(),
        cfg.replications,
        cfg.n_values
    );
    let report = if continuous { run_continuous_experiment(&cfg)? } else { run_clt_experiment(&cfg)? };
    let dir = create_run_dir(root, command, seed)?;
    if spec.file.wants_csv() {
        write_experiment_csv(&dir, &report)?;
    }
    let mut env = Envelope::new(command, seed, &spec.file, &report);
    env.complete = report.complete;
    env.forced = args.force;
    write_json(&dir.join("report.json"), &env)?;
    for nr in &report.per_n {
        println!(
            "n={}  R={}  hs_distance={:.4e}  relative={:.4}",
            nr.n, nr.replications, nr.hs_distance_to_tz, nr.relative_hs_distance
        );
    }
    let code = if report.complete { EXIT_OK } else { EXIT_BUDGET };
    Ok(Outcome::new(code, dir))
}

fn write_experiment_csv(dir: &Path, report: &CltReport) -> Result<()> {
    write_operator_csv(&dir.join("target_tz.csv"), &report.target_tz)?;
    let mut rows = Vec::new();
    for nr in &report.per_n {
        write_operator_csv(&dir.join(format!("empirical_cov_n{}.csv", nr.n)), &nr.empirical_cov)?;
        for p in &nr.projections {
            let (ks, ad, ku) = p
                .normality
                .map_or((String::new(), String::new(), String::new()), |s| {
                    (num(s.ks_stat), num(s.anderson_darling_stat), num(s.excess_kurtosis))
                });
            rows.push(vec![
                nr.n.to_string(),
                p.direction.clone(),
                num(p.sigma2_theory),
                num(p.mean),
                num(p.variance),
                ks,
                num(p.ks_critical_1pct),
                ad,
                ku,
            ]);
        }
    }
    write_csv(
        &dir.join("projections.csv"),
        &["n", "direction", "sigma2_theory", "mean", "variance", "ks_stat", "ks_critical_1pct", "anderson_darling", "excess_kurtosis"],
        rows,
    )?;
    if report.per_n.iter().any(|nr| nr.continuous.is_some()) {
        let rows = report.per_n.iter().flat_map(|nr| {
            nr.continuous.iter().flatten().map(move |c| {
                vec![
                    nr.n.to_string(),
                    num(c.s),
                    num(c.t),
                    (c.coordinate + 1).to_string(),
                    num(c.empirical),
                    num(c.predicted),
                    num(c.abs_error),
                    num(c.rel_error),
                ]
            })
        });
        write_csv(
            &dir.join("continuous_cov.csv"),
            &["n", "s", "t", "coordinate", "empirical", "predicted", "abs_error", "rel_error"],
            rows,
        )?;
    }
    if !report.raw.is_empty() {
        let k = report.raw[0].projections.len();
        let mut header = vec!["replication".to_string(), "n".to_string()];
        header.extend((1..=k).map(|i| format!("proj_{i}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = report.raw.iter().map(|r| {
            let mut row = vec![(r.replication + 1).to_string(), r.n.to_string()];
            row.extend(r.projections.iter().map(|x| num(*x)));
            row
        });
        write_csv(&dir.join("raw_samples.csv"), &header, rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BoundsEntry {
    n: usize,
    bound: BoundReport,
    proxy: Option<ProxyEstimate>,
    /// Proxy difference at most the total bound.
    proxy_within_bound: Option<bool>,
}

#[derive(Serialize)]
struct BoundsResult {
    rank_source: hclt_core::harness::RankSource,
    entries: Vec<BoundsEntry>,
}

fn cmd_bounds(spec: &LoadedSpec, args: &CommonArgs, root: &Path) -> Result<Outcome> {
    let b = spec.file.bounds.as_ref().ok_or_else(|| Error::Parse("spec has no bounds block".into()))?;
    let seed = spec.file.seed(args.seed);
    let (g, model) = spec.operator(seed)?;
    let res = operator_rank(&g, RANK_MC_SAMPLES, seed)?;
    let coeffs = res.coefficients.as_ref().expect("rank resolution keeps its table");
    let chaos = to_chaos_coefficients(coeffs);
    let v_max = spec.file.v_max();
    let tz = if b.proxy { Some(theoretical_tz(&g, &model, v_max, seed)?.0) } else { None };
    let mut entries = Vec::new();
    for &n in &b.n_values {
        let bound = quantitative_bounds_with_defect(&chaos, &model, n, b.m, v_max, b.discarded_mass.unwrap_or(0.0))?;
        let proxy = match &tz {
            Some(tz) => Some(cosine_proxy(
                &g,
                &model,
                tz,
                n,
                b.proxy_replications.unwrap_or(DEFAULT_PROXY_REPLICATIONS),
                seed,
            )?),
            None => None,
        };
        println!(
            "n={n}  total={:.4e}  best_M={}  certified={}{}",
            bound.total,
            bound.best_m,
            bound.certified,
            proxy.map_or(String::new(), |p| format!("  proxy={:.3e}±{:.1e}", p.difference, p.stderr))
        );
        let within = proxy.map(|p| p.difference <= bound.total);
        entries.push(BoundsEntry { n, bound, proxy, proxy_within_bound: within });
    }
    let dir = create_run_dir(root, "bounds", seed)?;
    if spec.file.wants_csv() {
        let rows = entries.iter().flat_map(|e| {
            e.bound.per_m.iter().map(move |t| {
                vec![e.n.to_string(), t.m.to_string(), num(t.r1), num(t.r2), num(t.r3), num(t.r4), num(t.total)]
            })
        });
        write_csv(&dir.join("bounds.csv"), &["n", "M", "R1", "R2", "R3", "R4", "total"], rows)?;
    }
    let result = BoundsResult { rank_source: res.source, entries };
    write_json(&dir.join("report.json"), &Envelope::new("bounds", seed, &spec.file, &result))?;
    Ok(Outcome::new(EXIT_OK, dir))
}
