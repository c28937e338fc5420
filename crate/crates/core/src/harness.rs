//! Replicated experiments: covariance convergence of `S_n`, normality of
//! projections, and the time structure of `V_n`.

use std::time::Instant;

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hermite::{estimate_coefficients, rank_report, to_chaos_coefficients, HermiteCoefficients, RankReport};
use crate::hilbert::HilbertOperator;
use crate::limit::{check_condition, limit_covariance_chaos, limit_covariance_mc, Verdict, DEFAULT_V_MAX};
use crate::models::ProcessModel;
use crate::rng::tagged_stream;
use crate::subordination::{grid_stops, score_partial_sums, OperatorG};

pub const MIN_REPLICATIONS: usize = 100;
pub const MAX_PROJECTION_BASIS: usize = 5;
/// Asymptotic Kolmogorov 1% critical value, scaled by `1/√R`.
pub const KS_CRITICAL_1PCT: f64 = 1.63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSource {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResolution {
    pub report: RankReport,
    pub source: RankSource,
    pub samples: Option<usize>,
    #[serde(skip)]
    pub coefficients: Option<HermiteCoefficients>,
}

pub const RANK_MC_SAMPLES: usize = 100_000;

/// Hermite rank of `g`, from closed-form coefficients when available and
/// otherwise from a Monte Carlo coefficient table.
pub fn operator_rank(g: &OperatorG, samples: usize, seed: u64) -> Result<RankResolution> {
    if let Some(c) = g.closed_form(2) {
        let report = rank_report(&c, None)?;
        return Ok(RankResolution { report, source: RankSource::ClosedForm, samples: None, coefficients: Some(c) });
    }
    let cap = if g.input_dim() <= 6 { 3 } else { 2 };
    let c = estimate_coefficients(g, g.spectrum(), cap, g.input_dim(), samples, seed)?;
    let report = rank_report(&c, None)?;
    Ok(RankResolution { report, source: RankSource::MonteCarlo, samples: Some(samples), coefficients: Some(c) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    Chaos,
    MonteCarlo,
    Supplied,
}

/// Replications for the Monte Carlo `T_Z` of operators without a
/// coefficient table.
pub const TARGET_MC_REPLICATIONS: usize = 400;

/// `T_Z` from the chaos expansion when coefficients are known, otherwise by
/// Monte Carlo over lag autocovariances.
pub fn theoretical_tz(g: &OperatorG, model: &ProcessModel, v_max: usize, seed: u64) -> Result<(HilbertOperator, TargetSource)> {
    if let Some(c) = g.closed_form(2) {
        let v = model.max_dependence_lag().unwrap_or(v_max);
        return Ok((limit_covariance_chaos(&to_chaos_coefficients(&c), model, v)?, TargetSource::Chaos));
    }
    let v = model.max_dependence_lag().unwrap_or(v_max.min(64));
    let mc = limit_covariance_mc(g, model, v, TARGET_MC_REPLICATIONS, seed)?;
    Ok((mc.estimate, TargetSource::MonteCarlo))
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ProcessModel,
    pub g: OperatorG,
    pub n_values: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Time grid for continuous experiments.
    pub grid: Vec<f64>,
    pub target: Option<HilbertOperator>,
    /// Rank used for the condition check; resolved from `g` when absent.
    pub q: Option<usize>,
    pub v_max: usize,
    /// Run even if the condition does not pass.
    pub force: bool,
    pub raw_samples: bool,
    pub deadline: Option<Instant>,
}

impl ExperimentConfig {
    pub fn new(model: ProcessModel, g: OperatorG, n_values: Vec<usize>, replications: usize, seed: u64) -> Result<Self> {
        if replications < MIN_REPLICATIONS {
            return Err(Error::InvalidArgument(format!(
                "need at least {MIN_REPLICATIONS} replications, got {replications}"
            )));
        }
        if n_values.is_empty() || n_values.contains(&0) {
            return Err(Error::InvalidArgument("n_values must be a nonempty list of positive lengths".into()));
        }
        if g.input_dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: g.input_dim() });
        }
        Ok(Self {
            model,
            g,
            n_values,
            replications,
            seed,
            grid: vec![0.25, 0.5, 0.75, 1.0],
            target: None,
            q: None,
            v_max: DEFAULT_V_MAX,
            force: false,
            raw_samples: false,
            deadline: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityStats {
    pub ks_stat: f64,
    pub anderson_darling_stat: f64,
    pub excess_kurtosis: f64,
}

/// One-sample statistics of `samples` against `N(0, sigma2)`.
pub fn normality_diagnostics(samples: &[f64], sigma2: f64) -> Result<NormalityStats> {
    if samples.len() < MIN_REPLICATIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_REPLICATIONS} samples, got {}",
            samples.len()
        )));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("degenerate variance {sigma2}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("positive scale");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let cdf: Vec<f64> = sorted.iter().map(|&x| normal.cdf(x)).collect();
    let mut ks = 0.0f64;
    for (i, &f) in cdf.iter().enumerate() {
        ks = ks.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let clamp = |p: f64| p.clamp(1e-300, 1.0 - 1e-16);
    let mut ad = 0.0;
    for i in 0..cdf.len() {
        let w = 2.0 * i as f64 + 1.0;
        ad += w * (clamp(cdf[i]).ln() + (1.0 - clamp(cdf[cdf.len() - 1 - i])).ln());
    }
    let ad = -n - ad / n;
    let mean = sorted.iter().sum::<f64>() / n;
    let m2 = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = sorted.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let excess_kurtosis = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { f64::NAN };
    Ok(NormalityStats { ks_stat: ks, anderson_darling_stat: ad, excess_kurtosis })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionStat {
    pub direction: String,
    pub sigma2_theory: f64,
    pub mean: f64,
    pub variance: f64,
    pub ks_critical_1pct: f64,
    /// Absent when the theoretical variance vanishes.
    pub normality: Option<NormalityStats>,
    pub ks_pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCovariance {
    pub s: f64,
    pub t: f64,
    pub coordinate: usize,
    pub empirical: f64,
    pub predicted: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NReport {
    pub n: usize,
    pub replications: usize,
    pub empirical_cov: HilbertOperator,
    pub hs_distance_to_tz: f64,
    pub relative_hs_distance: f64,
    pub projections: Vec<ProjectionStat>,
    pub continuous: Option<Vec<GridCovariance>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub q: usize,
    pub verdict: Verdict,
    pub theta_total: Option<f64>,
    pub forced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    Clt,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub replication: usize,
    pub n: usize,
    pub projections: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub mode: ExperimentMode,
    pub operator: String,
    pub seed: u64,
    pub replications: usize,
    pub condition: ConditionSummary,
    pub target_tz: HilbertOperator,
    pub target_source: TargetSource,
    pub grid: Vec<f64>,
    pub per_n: Vec<NReport>,
    /// False when the deadline cut replications short.
    pub complete: bool,
    #[serde(skip)]
    pub raw: Vec<RawSample>,
}

pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<CltReport> {
    run(config, ExperimentMode::Clt)
}

pub fn run_continuous_experiment(config: &ExperimentConfig) -> Result<CltReport> {
    run(config, ExperimentMode::Continuous)
}

fn condition_gate(config: &ExperimentConfig) -> Result<ConditionSummary> {
    let q = match config.q {
        Some(q) => q,
        None => operator_rank(&config.g, RANK_MC_SAMPLES, config.seed)?.report.rank,
    };
    let rep = check_condition(&config.model, q, config.v_max, config.model.dim())?;
    match (rep.verdict, config.force) {
        (Verdict::Fail, false) => Err(Error::ConditionFailed(format!(
            "Σ θ(v)^{q} is not summable for this model; use force to run anyway"
        ))),
        (Verdict::Indeterminate, false) => Err(Error::ConditionIndeterminate(format!(
            "Σ θ(v)^{q} could not be certified within {} lags; use force to run anyway",
            config.v_max
        ))),
        _ => Ok(ConditionSummary { q, verdict: rep.verdict, theta_total: rep.theta_total, forced: config.force }),
    }
}

fn directions(out: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut dirs: Vec<(String, Vec<f64>)> = (0..out.min(MAX_PROJECTION_BASIS))
        .map(|i| {
            let mut e = vec![0.0; out];
            e[i] = 1.0;
            (format!("e_{}", i + 1), e)
        })
        .collect();
    let mut rng = tagged_stream(seed, "projection-direction", 0);
    let mut u: Vec<f64> = (0..out).map(|_| rng.sample(StandardNormal)).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        u.iter_mut().for_each(|x| *x /= norm);
        dirs.push(("random".into(), u));
    }
    dirs
}

fn quad_form(t: &HilbertOperator, e: &[f64]) -> f64 {
    let d = t.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += e[i] * t.get(i, j) * e[j];
        }
    }
    acc
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unbiased sample covariance between columns of `xs` and `ys`.
fn sample_cov(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

fn empirical_covariance(samples: &[Vec<f64>], out: usize) -> HilbertOperator {
    let r = samples.len() as f64;
    let mut mean = vec![0.0; out];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x / r;
        }
    }
    let mut cov = HilbertOperator::zeros(out);
    for s in samples {
        for i in 0..out {
            let di = s[i] - mean[i];
            for j in i..out {
                cov.add_to(i, j, di * (s[j] - mean[j]));
            }
        }
    }
    for i in 0..out {
        for j in i..out {
            let v = cov.get(i, j) / (r - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}

type Snapshots = Vec<Vec<f64>>;

fn replicate(config: &ExperimentConfig, n: usize, stops: &[usize]) -> Result<Vec<Snapshots>> {
    let tag = format!("replication-n{n}");
    let results: Vec<Result<Option<Snapshots>>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            if config.deadline.is_some_and(|d| Instant::now() > d) {
                return Ok(None);
            }
            let mut rng = tagged_stream(config.seed, &tag, rep as u64);
            let path = config.model.simulate_path_with(n, &mut rng)?;
            let snaps = score_partial_sums(&config.g, &path, stops, true);
            if snaps.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(rep));
            }
            Ok(Some(snaps))
        })
        .collect();
    let mut done = Vec::with_capacity(config.replications);
    for r in results {
        if let Some(s) = r? {
            done.push(s);
        }
    }
    Ok(done)
}

fn run(config: &ExperimentConfig, mode: ExperimentMode) -> Result<CltReport> {
    let condition = condition_gate(config)?;
    let (target, source) = match &config.target {
        Some(t) => (t.clone(), TargetSource::Supplied),
        None => theoretical_tz(&config.g, &config.model, config.v_max, config.seed)?,
    };
    let out = config.g.output_dim();
    if target.dim() != out {
        return Err(Error::DimensionMismatch { expected: out, got: target.dim() });
    }
    let grid = match mode {
        ExperimentMode::Clt => Vec::new(),
        ExperimentMode::Continuous => config.grid.clone(),
    };
    let dirs = directions(out, config.seed);
    let tz_norm = target.hs_norm();
    let mut per_n = Vec::new();
    let mut raw = Vec::new();
    let mut complete = true;
    for &n in &config.n_values {
        let stops = grid_stops(&grid, n)?;
        let snaps = replicate(config, n, &stops)?;
        if snaps.len() < config.replications {
            complete = false;
        }
        if snaps.len() < 2 {
            break;
        }
        let full: Vec<Vec<f64>> = snaps.iter().map(|s| s.last().expect("full sum").clone()).collect();
        let empirical_cov = empirical_covariance(&full, out);
        let hs = empirical_cov.sub(&target)?.hs_norm();
        let r = full.len();
        let crit = KS_CRITICAL_1PCT / (r as f64).sqrt();
        let mut projections = Vec::new();
        let proj_samples: Vec<Vec<f64>> = dirs.iter().map(|(_, e)| full.iter().map(|s| dot(s, e)).collect()).collect();
        for ((label, e), xs) in dirs.iter().zip(&proj_samples) {
            let sigma2 = quad_form(&target, e);
            let mean = xs.iter().sum::<f64>() / r as f64;
            let variance = sample_cov(xs, xs);
            let normality = if sigma2 > 0.0 && r >= MIN_REPLICATIONS {
                Some(normality_diagnostics(xs, sigma2)?)
            } else {
                None
            };
            projections.push(ProjectionStat {
                direction: label.clone(),
                sigma2_theory: sigma2,
                mean,
                variance,
                ks_critical_1pct: crit,
                ks_pass: normality.map(|s| s.ks_stat < crit),
                normality,
            });
        }
        if config.raw_samples {
            for rep in 0..r {
                raw.push(RawSample { replication: rep, n, projections: proj_samples.iter().map(|p| p[rep]).collect() });
            }
        }
        let continuous = (mode == ExperimentMode::Continuous).then(|| {
            let mut cells = Vec::new();
            for a in 0..grid.len() {
                for b in a..grid.len() {
                    let (s, t) = (grid[a].min(grid[b]), grid[a].max(grid[b]));
                    for i in 0..out.min(MAX_PROJECTION_BASIS) {
                        let xs: Vec<f64> = snaps.iter().map(|v| v[a][i]).collect();
                        let ys: Vec<f64> = snaps.iter().map(|v| v[b][i]).collect();
                        let empirical = sample_cov(&xs, &ys);
                        let predicted = s * target.get(i, i);
                        let abs_error = (empirical - predicted).abs();
                        let rel_error = if predicted != 0.0 { abs_error / predicted.abs() } else { abs_error };
                        cells.push(GridCovariance { s, t, coordinate: i, empirical, predicted, abs_error, rel_error });
                    }
                }
            }
            cells
        });
        per_n.push(NReport {
            n,
            replications: r,
            empirical_cov,
            hs_distance_to_tz: hs,
            relative_hs_distance: if tz_norm > 0.0 { hs / tz_norm } else { hs },
            projections,
            continuous,
        });
        if !complete {
            break;
        }
    }
    Ok(CltReport {
        mode,
        operator: config.g.label(),
        seed: config.seed,
        replications: config.replications,
        condition,
        target_tz: target,
        target_source: source,
        grid,
        per_n,
        complete,
        raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyEstimate {
    pub n: usize,
    pub e_h_sn: f64,
    pub e_h_z: f64,
    /// `exp(-T_Z[0,0] / 2)`, the exact value of `E cos⟨Z, e_1⟩`.
    pub e_h_z_exact: f64,
    pub difference: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of `|E cos⟨S_n, e_1⟩ - E cos⟨Z, e_1⟩|` with
/// `Z ~ N(0, T_Z)` sampled through the eigendecomposition of `tz`.
pub fn cosine_proxy(
    g: &OperatorG,
    model: &ProcessModel,
    tz: &HilbertOperator,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<ProxyEstimate> {
    if replications < 2 || n == 0 {
        return Err(Error::InvalidArgument("proxy needs n ≥ 1 and at least two replications".into()));
    }
    let out = g.output_dim();
    if tz.dim() != out {
        return Err(Error::DimensionMismatch { expected: out, got: tz.dim() });
    }
    let tag = format!("proxy-n{n}");
    let hs: Vec<Result<f64>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = tagged_stream(seed, &tag, rep as u64);
            let path = model.simulate_path_with(n, &mut rng)?;
            let s = score_partial_sums(g, &path, &[], true);
            Ok(s[0][0].cos())
        })
        .collect();
    let hs = hs.into_iter().collect::<Result<Vec<f64>>>()?;

    let eig = SymmetricEigen::new(tz.symmetrized().to_matrix());
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    let first_row: Vec<f64> = (0..out).map(|k| eig.eigenvectors[(0, k)] * roots[k]).collect();
    let hz: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = tagged_stream(seed, "proxy-limit", rep as u64);
            let z0: f64 = first_row.iter().map(|w| w * rng.sample::<f64, _>(StandardNormal)).sum();
            z0.cos()
        })
        .collect();
    let mean_var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, sample_cov(v, v))
    };
    let (ms, vs) = mean_var(&hs);
    let (mz, vz) = mean_var(&hz);
    let r = replications as f64;
    Ok(ProxyEstimate {
        n,
        e_h_sn: ms,
        e_h_z: mz,
        e_h_z_exact: (-tz.get(0, 0) / 2.0).exp(),
        difference: (ms - mz).abs(),
        stderr: (vs / r + vz / r).sqrt(),
    })
}
