//! Stationary Gaussian H-valued processes, parameterized in score coordinates.
//!
//! A model fixes the eigenvalues `λ_1 ≥ … ≥ λ_D > 0` of the covariance
//! operator `Q` and the autocorrelation `ρ_rs(v)` of the standardized scores.
//! Every shipped variant has diagonal `ρ`, so paths are simulated one score
//! column at a time.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::HilbertVector;
use crate::rng::{stream, StreamRng};

/// Eigenvalues below this fraction of `λ_1` are rejected.
const MIN_RELATIVE_EIGENVALUE: f64 = 1e-12;

/// Temporal autocorrelation `β(v)` of a decoupled space-time model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaFn {
    /// `β(v) = ratio^|v|`.
    Geometric(f64),
    /// `β(v) = (1 + |v|)^(-d)`.
    Power(f64),
}

impl BetaFn {
    pub fn eval(&self, v: i64) -> f64 {
        let a = v.unsigned_abs() as f64;
        match *self {
            BetaFn::Geometric(r) => r.powf(a),
            BetaFn::Power(d) => (1.0 + a).powf(-d),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (kind, value) = text
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("beta must look like kind:value, got {text:?}")))?;
        let x: f64 = value.trim().parse().map_err(|e| Error::Parse(format!("beta value {value:?}: {e}")))?;
        let beta = match kind.trim() {
            "geometric" => BetaFn::Geometric(x),
            "power" => BetaFn::Power(x),
            other => return Err(Error::Parse(format!("unknown beta kind {other:?}"))),
        };
        beta.validate()?;
        Ok(beta)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BetaFn::Geometric(r) if !(0.0..1.0).contains(&r) => {
                Err(Error::InvalidModel(format!("geometric beta ratio must lie in [0, 1), got {r}")))
            }
            BetaFn::Power(d) if !(d > 0.0 && d.is_finite()) => {
                Err(Error::InvalidModel(format!("power beta exponent must be positive, got {d}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            BetaFn::Geometric(r) => format!("geometric:{r}"),
            BetaFn::Power(d) => format!("power:{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    Iid,
    /// Moving average of order `m` with `m + 1` weights shared by all coordinates.
    MDependent { m: usize, weights: Vec<f64> },
    /// Diagonal autoregression with one coefficient per basis direction.
    Arh1 { alphas: Vec<f64> },
    DecoupledSpaceTime { beta: BetaFn },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Iid => "iid",
            Variant::MDependent { .. } => "m_dependent",
            Variant::Arh1 { .. } => "arh1",
            Variant::DecoupledSpaceTime { .. } => "decoupled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    variant: Variant,
    /// Eigenvalues of the full (possibly stacked) space.
    spectrum: Vec<f64>,
    /// Dimension of one component; `spectrum` repeats `copies` times.
    base_dim: usize,
    copies: usize,
    /// Normalized MA autocorrelations at lags `0..=m`.
    ma_acf: Vec<f64>,
    /// Eigenvalue mass beyond the truncation, when the spectrum rule knows it.
    truncation_tail: Option<f64>,
}

impl ProcessModel {
    pub fn new(variant: Variant, spectrum: Vec<f64>) -> Result<Self> {
        validate_spectrum(&spectrum)?;
        let dim = spectrum.len();
        let mut ma_acf = Vec::new();
        match &variant {
            Variant::Iid => {}
            Variant::MDependent { m, weights } => {
                if weights.len() != m + 1 {
                    return Err(Error::InvalidModel(format!(
                        "m-dependent model needs m + 1 = {} weights, got {}",
                        m + 1,
                        weights.len()
                    )));
                }
                let energy: f64 = weights.iter().map(|w| w * w).sum();
                if !(energy > 0.0 && energy.is_finite()) {
                    return Err(Error::InvalidModel("moving-average weights must not all vanish".into()));
                }
                ma_acf = (0..=*m)
                    .map(|v| weights.iter().zip(&weights[v..]).map(|(a, b)| a * b).sum::<f64>() / energy)
                    .collect();
            }
            Variant::Arh1 { alphas } => {
                if alphas.len() != dim {
                    return Err(Error::InvalidModel(format!(
                        "ARH(1) model needs {dim} alphas, got {}",
                        alphas.len()
                    )));
                }
                if !alphas.iter().all(|&a| a > 0.0 && a < 1.0) {
                    return Err(Error::InvalidModel("ARH(1) alphas must lie in (0, 1)".into()));
                }
                if alphas.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidModel("ARH(1) alphas must be nonincreasing".into()));
                }
            }
            Variant::DecoupledSpaceTime { beta } => beta.validate()?,
        }
        let base_dim = spectrum.len();
        Ok(Self { variant, spectrum, base_dim, copies: 1, ma_acf, truncation_tail: None })
    }

    /// The Cartesian power `H^copies` carrying `copies` independent copies of
    /// this process, coordinates ordered copy by copy.
    pub fn stacked(&self, copies: usize) -> Result<Self> {
        if copies == 0 || self.copies != 1 {
            return Err(Error::InvalidArgument("can only stack a base model at least once".into()));
        }
        let mut out = self.clone();
        out.copies = copies;
        out.spectrum = self.spectrum.repeat(copies);
        Ok(out)
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    pub fn with_truncation_tail(mut self, tail: Option<f64>) -> Self {
        self.truncation_tail = tail;
        self
    }

    pub fn iid(spectrum: Vec<f64>) -> Result<Self> {
        Self::new(Variant::Iid, spectrum)
    }

    pub fn arh1(alphas: Vec<f64>, spectrum: Vec<f64>) -> Result<Self> {
        Self::new(Variant::Arh1 { alphas }, spectrum)
    }

    pub fn m_dependent(weights: Vec<f64>, spectrum: Vec<f64>) -> Result<Self> {
        let m = weights.len().checked_sub(1).ok_or_else(|| Error::InvalidModel("empty weights".into()))?;
        Self::new(Variant::MDependent { m, weights }, spectrum)
    }

    pub fn decoupled(beta: BetaFn, spectrum: Vec<f64>) -> Result<Self> {
        Self::new(Variant::DecoupledSpaceTime { beta }, spectrum)
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn truncation_tail(&self) -> Option<f64> {
        self.truncation_tail
    }

    /// Largest lag with possibly nonzero autocorrelation, if finite.
    pub fn max_dependence_lag(&self) -> Option<usize> {
        match &self.variant {
            Variant::Iid => Some(0),
            Variant::MDependent { m, .. } => Some(*m),
            _ => None,
        }
    }

    /// Whether `ρ_rs(v) = 0` for all `r ≠ s`.
    pub fn is_diagonal(&self) -> bool {
        true
    }

    /// `ρ_rs(v)` with one-based `r`, `s`.
    pub fn rho(&self, r: usize, s: usize, v: i64) -> Result<f64> {
        let d = self.dim();
        for idx in [r, s] {
            if idx == 0 || idx > d {
                return Err(Error::IndexOutOfRange { index: idx, max: d });
            }
        }
        Ok(self.rho0(r - 1, s - 1, v))
    }

    /// `ρ_rs(v)` with zero-based indices and no bounds check.
    pub fn rho0(&self, r: usize, s: usize, v: i64) -> f64 {
        if r != s {
            return 0.0;
        }
        self.rho_diag0(r, v)
    }

    /// Diagonal autocorrelation `ρ_rr(v)`, zero-based `r`.
    pub fn rho_diag0(&self, r: usize, v: i64) -> f64 {
        let a = v.unsigned_abs();
        match &self.variant {
            Variant::Iid => f64::from(u8::from(a == 0)),
            Variant::MDependent { .. } => self.ma_acf.get(a as usize).copied().unwrap_or(0.0),
            Variant::Arh1 { alphas } => powi_u64(alphas[r % self.base_dim], a),
            Variant::DecoupledSpaceTime { beta } => beta.eval(v),
        }
    }

    /// Draws a stationary score path of length `n` from `stream(seed, 0)`.
    pub fn simulate_path(&self, n: usize, seed: u64) -> Result<ScorePath> {
        let mut rng = stream(seed, 0);
        let mut path = self.simulate_path_with(n, &mut rng)?;
        path.seed = Some(seed);
        Ok(path)
    }

    /// Draws a path from a caller-owned stream. Innovations are consumed one
    /// score column at a time.
    pub fn simulate_path_with(&self, n: usize, rng: &mut StreamRng) -> Result<ScorePath> {
        if n == 0 {
            return Err(Error::InvalidArgument("path length must be at least 1".into()));
        }
        let d = self.dim();
        let mut scores = vec![0.0; n * d];
        let mut column = vec![0.0; n];
        match &self.variant {
            Variant::Iid => {
                for r in 0..d {
                    fill_normal(&mut column, rng);
                    scatter(&mut scores, d, r, &column);
                }
            }
            Variant::Arh1 { alphas } => {
                for r in 0..d {
                    ar1_column(alphas[r % self.base_dim], &mut column, rng);
                    scatter(&mut scores, d, r, &column);
                }
            }
            Variant::DecoupledSpaceTime { beta: BetaFn::Geometric(ratio) } => {
                for r in 0..d {
                    ar1_column(*ratio, &mut column, rng);
                    scatter(&mut scores, d, r, &column);
                }
            }
            Variant::MDependent { m, weights } => {
                let scale = self_energy(weights).sqrt().recip();
                let mut innov = vec![0.0; n + m];
                for r in 0..d {
                    fill_normal(&mut innov, rng);
                    for (k, out) in column.iter_mut().enumerate() {
                        *out = scale * weights.iter().zip(&innov[k..]).map(|(w, e)| w * e).sum::<f64>();
                    }
                    scatter(&mut scores, d, r, &column);
                }
            }
            Variant::DecoupledSpaceTime { beta } => {
                let sampler = CirculantSampler::new(beta, n)?;
                let mut r = 0;
                while r < d {
                    let (re, im) = sampler.sample_pair(rng);
                    scatter(&mut scores, d, r, &re[..n]);
                    if r + 1 < d {
                        scatter(&mut scores, d, r + 1, &im[..n]);
                    }
                    r += 2;
                }
            }
        }
        Ok(ScorePath { n, dim: d, scores, seed: None })
    }

    /// Maps scores to basis coefficients `√λ_r · score_r`.
    pub fn embed_scores(&self, path: &ScorePath) -> Result<Vec<HilbertVector>> {
        embed_scores(path, self)
    }
}

fn self_energy(weights: &[f64]) -> f64 {
    weights.iter().map(|w| w * w).sum()
}

fn powi_u64(x: f64, n: u64) -> f64 {
    if n <= i32::MAX as u64 {
        x.powi(n as i32)
    } else {
        x.powf(n as f64)
    }
}

fn fill_normal(buf: &mut [f64], rng: &mut StreamRng) {
    for b in buf.iter_mut() {
        *b = rng.sample(StandardNormal);
    }
}

fn ar1_column(alpha: f64, column: &mut [f64], rng: &mut StreamRng) {
    let innov_scale = (1.0 - alpha * alpha).sqrt();
    let mut s: f64 = rng.sample(StandardNormal);
    column[0] = s;
    for out in column.iter_mut().skip(1) {
        let e: f64 = rng.sample(StandardNormal);
        s = alpha * s + innov_scale * e;
        *out = s;
    }
}

fn scatter(scores: &mut [f64], d: usize, r: usize, column: &[f64]) {
    for (k, &x) in column.iter().enumerate() {
        scores[k * d + r] = x;
    }
}

/// Exact stationary sampler by circulant embedding of `β(0..n)`.
struct CirculantSampler {
    sqrt_eig: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl CirculantSampler {
    fn new(beta: &BetaFn, n: usize) -> Result<Self> {
        let size = (2 * n.max(2)).next_power_of_two();
        let mut c: Vec<Complex<f64>> = (0..size)
            .map(|j| Complex::new(beta.eval(j.min(size - j) as i64), 0.0))
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        fft.process(&mut c);
        let top = c.iter().map(|z| z.re).fold(0.0_f64, f64::max);
        let low = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if low < -1e-10 * top {
            return Err(Error::InvalidModel(format!(
                "circulant embedding of {} is not nonnegative (min eigenvalue {low:e})",
                beta.label()
            )));
        }
        let sqrt_eig = c.iter().map(|z| (z.re.max(0.0) / size as f64).sqrt()).collect();
        Ok(Self { sqrt_eig, fft })
    }

    /// Two independent stationary sequences of length `size`.
    fn sample_pair(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let mut w: Vec<Complex<f64>> = self
            .sqrt_eig
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(s * a, s * b)
            })
            .collect();
        self.fft.process(&mut w);
        (w.iter().map(|z| z.re).collect(), w.iter().map(|z| z.im).collect())
    }
}

fn validate_spectrum(spectrum: &[f64]) -> Result<()> {
    let first = *spectrum
        .first()
        .ok_or_else(|| Error::InvalidModel("spectrum must contain at least one eigenvalue".into()))?;
    if !(first > 0.0 && first.is_finite()) {
        return Err(Error::InvalidModel(format!("leading eigenvalue must be positive, got {first}")));
    }
    for (j, w) in spectrum.windows(2).enumerate() {
        if w[1] > w[0] {
            return Err(Error::InvalidModel(format!(
                "spectrum must be nonincreasing: λ_{} = {} < λ_{} = {}",
                j + 1,
                w[0],
                j + 2,
                w[1]
            )));
        }
    }
    for (j, &l) in spectrum.iter().enumerate() {
        if !(l >= MIN_RELATIVE_EIGENVALUE * first) {
            return Err(Error::InvalidModel(format!(
                "eigenvalue λ_{} = {l:e} is below {MIN_RELATIVE_EIGENVALUE:e}·λ_1",
                j + 1
            )));
        }
    }
    Ok(())
}

/// An `n x D` matrix of standardized scores, row `k` holding time `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePath {
    n: usize,
    dim: usize,
    scores: Vec<f64>,
    seed: Option<u64>,
}

impl ScorePath {
    pub fn from_rows(dim: usize, scores: Vec<f64>) -> Result<Self> {
        if dim == 0 || scores.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: scores.len() });
        }
        Ok(Self { n: scores.len() / dim, dim, scores, seed: None })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.scores[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks(self.dim)
    }

    pub fn column(&self, r: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |row| row[r])
    }

    /// Sample autocorrelation of column `r` at lag `v`, using the known zero
    /// mean and unit variance.
    pub fn sample_autocorrelation(&self, r: usize, s: usize, v: usize) -> f64 {
        if v >= self.n {
            return 0.0;
        }
        let m = self.n - v;
        (0..m).map(|k| self.row(k)[r] * self.row(k + v)[s]).sum::<f64>() / m as f64
    }

    /// CSV with columns `t,s_1..s_D`, `t` starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for r in 1..=self.dim {
            let _ = write!(out, ",s_{r}");
        }
        out.push('\n');
        for (k, row) in self.rows().enumerate() {
            let _ = write!(out, "{}", k + 1);
            for x in row {
                let _ = write!(out, ",{x:?}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn embed_scores(path: &ScorePath, model: &ProcessModel) -> Result<Vec<HilbertVector>> {
    if path.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: path.dim() });
    }
    let roots: Vec<f64> = model.spectrum().iter().map(|l| l.sqrt()).collect();
    Ok(path
        .rows()
        .map(|row| HilbertVector::new(row.iter().zip(&roots).map(|(s, r)| s * r).collect()))
        .collect())
}

/// Karhunen-Loève eigenvalues of the kernel `s ∧ t` on `[0, 1]`.
pub fn brownian_increment_spectrum(dim: usize) -> Vec<f64> {
    (1..=dim).map(|j| brownian_eigenvalue(j)).collect()
}

pub fn brownian_eigenvalue(j: usize) -> f64 {
    let x = (j as f64 - 0.5) * PI;
    1.0 / (x * x)
}

/// Model block of an experiment spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<String>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ProcessModel> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::InvalidModel("dim must be at least 1".into()));
        }
        let variant = match self.variant.to_ascii_lowercase().replace('-', "_").as_str() {
            "iid" => Variant::Iid,
            "arh1" => Variant::Arh1 {
                alphas: self.alphas.clone().ok_or_else(|| Error::InvalidModel("arh1 requires alphas".into()))?,
            },
            "m_dependent" | "mdependent" => {
                let m = self.m.ok_or_else(|| Error::InvalidModel("m_dependent requires m".into()))?;
                let weights = self.weights.clone().unwrap_or_else(|| vec![1.0; m + 1]);
                Variant::MDependent { m, weights }
            }
            "decoupled" | "decoupled_space_time" => Variant::DecoupledSpaceTime {
                beta: BetaFn::parse(
                    self.beta.as_deref().ok_or_else(|| Error::InvalidModel("decoupled requires beta".into()))?,
                )?,
            },
            other => return Err(Error::InvalidModel(format!("unknown variant {other:?}"))),
        };
        let (spectrum, tail) = match (&self.spectrum, &self.spectrum_rule) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidModel("give either spectrum or spectrum_rule, not both".into()))
            }
            (None, None) => return Err(Error::InvalidModel("missing spectrum or spectrum_rule".into())),
            (Some(list), None) => {
                if list.len() != d {
                    return Err(Error::InvalidModel(format!("spectrum has {} entries, dim is {d}", list.len())));
                }
                (list.clone(), None)
            }
            (None, Some(rule)) => resolve_rule(rule, d, &variant)?,
        };
        Ok(ProcessModel::new(variant, spectrum)?.with_truncation_tail(tail))
    }
}

fn resolve_rule(rule: &str, d: usize, variant: &Variant) -> Result<(Vec<f64>, Option<f64>)> {
    let rule = rule.trim();
    if rule == "brownian" {
        let mu = brownian_increment_spectrum(d);
        if let Variant::Arh1 { alphas } = variant {
            // Stationary variance of a diagonal AR(1) with Brownian-increment noise.
            if alphas.len() != d {
                return Err(Error::InvalidModel(format!("ARH(1) model needs {d} alphas, got {}", alphas.len())));
            }
            let lam = mu.iter().zip(alphas).map(|(m, a)| m / (1.0 - a * a)).collect();
            return Ok((lam, None));
        }
        let tail = 0.5 - mu.iter().sum::<f64>();
        return Ok((mu, Some(tail.max(0.0))));
    }
    if let Some(ratio) = rule.strip_prefix("geometric:") {
        let q: f64 = ratio.trim().parse().map_err(|e| Error::Parse(format!("geometric ratio {ratio:?}: {e}")))?;
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidModel(format!("geometric spectrum ratio must lie in (0, 1], got {q}")));
        }
        let lam = (0..d).map(|j| q.powi(j as i32)).collect();
        let tail = if q < 1.0 { Some(q.powi(d as i32) / (1.0 - q)) } else { None };
        return Ok((lam, tail));
    }
    Err(Error::InvalidModel(format!("unknown spectrum_rule {rule:?}")))
}
