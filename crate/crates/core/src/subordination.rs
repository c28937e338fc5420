//! Operators `G` applied to the process and the resulting partial sums.
//!
//! Outputs are flattened: a vector in `H` uses `D` coordinates, an operator
//! uses `D²` row-major coordinates `(r, s) -> r D + s`, and a scalar uses one.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{
    closed_form_coefficients, ClosedFormKind, GaussianFunctional, HermiteCoefficients,
};
use crate::hilbert::{check_dim, HilbertOperator, HilbertVector};
use crate::models::{ProcessModel, ScorePath};
use crate::rng::tagged_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub fn is_odd(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Identity,
    SampleCovariance,
    /// One-based basis index `j`.
    EigenvalueFunctional(usize),
    /// `σ(Σ_j Φ^(j) ⊗ Ψ^(j))` entrywise, with input `(Φ^(1..r), Ψ^(1..r))`.
    Neural { rank: usize, activation: Activation },
    /// `Σ c_{i,l} H_l(x / √λ)`.
    HermiteDefined(HermiteCoefficients),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "dim")]
pub enum OutputShape {
    Vector(usize),
    Operator(usize),
    Scalar,
    Stacked(usize),
}

impl OutputShape {
    pub fn len(self) -> usize {
        match self {
            OutputShape::Vector(d) | OutputShape::Stacked(d) => d,
            OutputShape::Operator(d) => d * d,
            OutputShape::Scalar => 1,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

/// A typed view of a flattened output.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputValue {
    Vector(HilbertVector),
    Operator(HilbertOperator),
    Scalar(f64),
    Stacked(Vec<f64>),
}

impl OutputValue {
    pub fn from_flat(shape: OutputShape, flat: Vec<f64>) -> Result<Self> {
        check_dim(shape.len(), flat.len())?;
        Ok(match shape {
            OutputShape::Vector(_) => OutputValue::Vector(HilbertVector::new(flat)),
            OutputShape::Operator(d) => OutputValue::Operator(HilbertOperator::from_row_major(d, flat)?),
            OutputShape::Scalar => OutputValue::Scalar(flat[0]),
            OutputShape::Stacked(_) => OutputValue::Stacked(flat),
        })
    }

    pub fn flat(&self) -> Vec<f64> {
        match self {
            OutputValue::Vector(v) => v.coeffs().to_vec(),
            OutputValue::Operator(t) => t.entries().to_vec(),
            OutputValue::Scalar(x) => vec![*x],
            OutputValue::Stacked(v) => v.clone(),
        }
    }
}

/// Draw count used to freeze the mean of operators without a closed form.
pub const DEFAULT_MEAN_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorG {
    kind: OperatorKind,
    /// Eigenvalues of the input Gaussian measure, one per input coordinate.
    spectrum: Vec<f64>,
    /// Dimension `D` of one copy of `H`.
    base_dim: usize,
    mean: Vec<f64>,
    mean_stderr: Vec<f64>,
}

impl OperatorG {
    pub fn identity(model: &ProcessModel) -> Self {
        Self::exact(OperatorKind::Identity, model)
    }

    pub fn sample_covariance(model: &ProcessModel) -> Self {
        Self::exact(OperatorKind::SampleCovariance, model)
    }

    pub fn eigenvalue(model: &ProcessModel, j: usize) -> Result<Self> {
        if j == 0 || j > model.dim() {
            return Err(Error::IndexOutOfRange { index: j, max: model.dim() });
        }
        Ok(Self::exact(OperatorKind::EigenvalueFunctional(j), model))
    }

    /// Neural operator on the stacked input `model` (which must carry
    /// `2 rank` copies). Its mean is estimated from `mean_samples` draws.
    pub fn neural(model: &ProcessModel, rank: usize, activation: Activation, mean_samples: usize, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("neural operator rank must be at least 1".into()));
        }
        if model.copies() != 2 * rank {
            return Err(Error::InvalidArgument(format!(
                "neural operator of rank {rank} needs a model stacked {} times, got {}",
                2 * rank,
                model.copies()
            )));
        }
        let d = model.base_dim();
        let mut g = Self {
            kind: OperatorKind::Neural { rank, activation },
            spectrum: model.spectrum().to_vec(),
            base_dim: d,
            mean: vec![0.0; d * d],
            mean_stderr: vec![0.0; d * d],
        };
        let (mean, se) = g.estimate_mean(mean_samples, seed);
        g.mean = mean;
        g.mean_stderr = se;
        Ok(g)
    }

    pub fn hermite_defined(model: &ProcessModel, coeffs: HermiteCoefficients) -> Result<Self> {
        if coeffs.index_cap() > model.dim() {
            return Err(Error::IndexOutOfRange { index: coeffs.index_cap(), max: model.dim() });
        }
        if coeffs.output_dim() == 0 {
            return Err(Error::InvalidArgument("coefficient table has no outputs".into()));
        }
        let mean = coeffs.mean();
        let n_out = mean.len();
        Ok(Self {
            kind: OperatorKind::HermiteDefined(coeffs),
            spectrum: model.spectrum().to_vec(),
            base_dim: model.base_dim(),
            mean,
            mean_stderr: vec![0.0; n_out],
        })
    }

    fn exact(kind: OperatorKind, model: &ProcessModel) -> Self {
        let mut g = Self {
            kind,
            spectrum: model.spectrum().to_vec(),
            base_dim: model.base_dim(),
            mean: Vec::new(),
            mean_stderr: Vec::new(),
        };
        let n_out = g.output_shape().len();
        g.mean = vec![0.0; n_out];
        g.mean_stderr = vec![0.0; n_out];
        g
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn label(&self) -> String {
        match &self.kind {
            OperatorKind::Identity => "identity".into(),
            OperatorKind::SampleCovariance => "covariance".into(),
            OperatorKind::EigenvalueFunctional(j) => format!("eigenvalue({j})"),
            OperatorKind::Neural { rank, activation } => format!("neural(rank={rank},{activation:?})").to_lowercase(),
            OperatorKind::HermiteDefined(_) => "hermite".into(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn output_shape(&self) -> OutputShape {
        let d = self.base_dim;
        match &self.kind {
            OperatorKind::Identity => OutputShape::Vector(d),
            OperatorKind::SampleCovariance | OperatorKind::Neural { .. } => OutputShape::Operator(d),
            OperatorKind::EigenvalueFunctional(_) => OutputShape::Scalar,
            OperatorKind::HermiteDefined(c) => {
                if c.output_dim() == 1 {
                    OutputShape::Scalar
                } else {
                    OutputShape::Stacked(c.output_dim())
                }
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_shape().len()
    }

    /// `E G[X_1]`; zero for the analytically centered kinds.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_stderr(&self) -> &[f64] {
        &self.mean_stderr
    }

    /// Exact Hermite coefficients where they are known in closed form.
    pub fn closed_form(&self, degree_cap: usize) -> Option<HermiteCoefficients> {
        let kind = match &self.kind {
            OperatorKind::Identity => ClosedFormKind::Identity,
            OperatorKind::SampleCovariance => ClosedFormKind::Covariance,
            OperatorKind::EigenvalueFunctional(j) => ClosedFormKind::Eigenvalue(*j),
            OperatorKind::HermiteDefined(c) => return Some(c.clone()),
            OperatorKind::Neural { .. } => return None,
        };
        closed_form_coefficients(kind, &self.spectrum, degree_cap.max(2)).ok()
    }

    /// Writes `G[x]` into `out` without checks.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.base_dim;
        match &self.kind {
            OperatorKind::Identity => out.copy_from_slice(x),
            OperatorKind::SampleCovariance => {
                for r in 0..d {
                    for s in 0..d {
                        out[r * d + s] = x[r] * x[s];
                    }
                    out[r * d + r] -= self.spectrum[r];
                }
            }
            OperatorKind::EigenvalueFunctional(j) => out[0] = x[j - 1] * x[j - 1] - self.spectrum[j - 1],
            OperatorKind::Neural { rank, activation } => {
                let r = *rank;
                for a in 0..d {
                    for b in 0..d {
                        let mut acc = 0.0;
                        for k in 0..r {
                            acc += x[k * d + a] * x[(r + k) * d + b];
                        }
                        out[a * d + b] = activation.apply(acc);
                    }
                }
            }
            OperatorKind::HermiteDefined(c) => {
                let w: Vec<f64> = x.iter().zip(&self.spectrum).map(|(v, l)| v / l.sqrt()).collect();
                c.evaluate(&w, out).expect("shape checked at construction");
            }
        }
    }

    /// `G[x]` as a flat vector.
    pub fn apply(&self, x: &HilbertVector) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.dim())?;
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(x.coeffs(), &mut out);
        Ok(out)
    }

    fn estimate_mean(&self, samples: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        const CHUNKS: usize = 64;
        let per = samples.max(CHUNKS).div_ceil(CHUNKS);
        let n_out = self.output_dim();
        let roots: Vec<f64> = self.spectrum.iter().map(|l| l.sqrt()).collect();
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..CHUNKS)
            .into_par_iter()
            .map(|c| {
                let mut rng = tagged_stream(seed, "operator-mean", c as u64);
                let mut x = vec![0.0; roots.len()];
                let mut out = vec![0.0; n_out];
                let mut s1 = vec![0.0; n_out];
                let mut s2 = vec![0.0; n_out];
                for _ in 0..per {
                    for (xi, r) in x.iter_mut().zip(&roots) {
                        *xi = r * rng.sample::<f64, _>(StandardNormal);
                    }
                    self.apply_into(&x, &mut out);
                    for k in 0..n_out {
                        s1[k] += out[k];
                        s2[k] += out[k] * out[k];
                    }
                }
                (s1, s2)
            })
            .collect();
        let total = (per * CHUNKS) as f64;
        let mut mean = vec![0.0; n_out];
        let mut se = vec![0.0; n_out];
        for k in 0..n_out {
            let s1: f64 = parts.iter().map(|p| p.0[k]).sum();
            let s2: f64 = parts.iter().map(|p| p.1[k]).sum();
            let m = s1 / total;
            mean[k] = m;
            se[k] = ((s2 / total - m * m).max(0.0) / total).sqrt();
        }
        (mean, se)
    }
}

pub fn apply_g(g: &OperatorG, x: &HilbertVector) -> Result<OutputValue> {
    OutputValue::from_flat(g.output_shape(), g.apply(x)?)
}

impl GaussianFunctional for OperatorG {
    fn input_dim(&self) -> usize {
        OperatorG::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        OperatorG::output_dim(self)
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.apply_into(x, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSumSample {
    pub value: Vec<f64>,
    pub shape: OutputShape,
    pub n: usize,
    pub centered: bool,
}

impl PartialSumSample {
    pub fn typed(&self) -> Result<OutputValue> {
        OutputValue::from_flat(self.shape, self.value.clone())
    }
}

fn scaled(acc: &[f64], n: usize) -> Vec<f64> {
    let s = (n as f64).sqrt();
    acc.iter().map(|a| a / s).collect()
}

/// Streams `G[X_k] - μ` for `k = 1..n` into `acc` and calls `snap(k, acc)`
/// after each step.
fn accumulate<'a>(
    g: &OperatorG,
    rows: impl Iterator<Item = &'a [f64]>,
    center: bool,
    mut snap: impl FnMut(usize, &[f64]),
) -> Vec<f64> {
    let n_out = g.output_dim();
    let mut acc = vec![0.0; n_out];
    let mut out = vec![0.0; n_out];
    for (k, x) in rows.enumerate() {
        g.apply_into(x, &mut out);
        if center {
            for ((a, o), m) in acc.iter_mut().zip(&out).zip(g.mean()) {
                *a += o - m;
            }
        } else {
            for (a, o) in acc.iter_mut().zip(&out) {
                *a += o;
            }
        }
        snap(k + 1, &acc);
    }
    acc
}

/// `(1/√n) Σ_k (G[X_k] - μ_G)`, or without centering when `center` is false.
pub fn partial_sum(g: &OperatorG, path: &[HilbertVector], center: bool) -> Result<PartialSumSample> {
    if path.is_empty() {
        return Err(Error::InvalidArgument("partial sums need n >= 1".into()));
    }
    for x in path {
        check_dim(g.input_dim(), x.dim())?;
    }
    let acc = accumulate(g, path.iter().map(HilbertVector::coeffs), center, |_, _| {});
    Ok(PartialSumSample { value: scaled(&acc, path.len()), shape: g.output_shape(), n: path.len(), centered: center })
}

/// Reusable row buffer turning scores into basis coefficients.
fn embedded_rows<'a>(path: &'a ScorePath, roots: &'a [f64]) -> impl Iterator<Item = Vec<f64>> + 'a {
    path.rows().map(move |row| row.iter().zip(roots).map(|(s, r)| s * r).collect())
}

/// `V_n(t) = (1/√n) Σ_{k ≤ ⌊nt⌋} (G[X_k] - μ_G)` at each grid point.
pub fn continuous_partial_sum(g: &OperatorG, path: &[HilbertVector], grid: &[f64], center: bool) -> Result<Vec<PartialSumSample>> {
    if path.is_empty() {
        return Err(Error::InvalidArgument("partial sums need n >= 1".into()));
    }
    for x in path {
        check_dim(g.input_dim(), x.dim())?;
    }
    let n = path.len();
    let stops = grid_stops(grid, n)?;
    let mut snaps: Vec<Option<Vec<f64>>> = vec![None; grid.len()];
    let zero = vec![0.0; g.output_dim()];
    for (idx, &stop) in stops.iter().enumerate() {
        if stop == 0 {
            snaps[idx] = Some(zero.clone());
        }
    }
    accumulate(g, path.iter().map(HilbertVector::coeffs), center, |k, acc| {
        for (idx, &stop) in stops.iter().enumerate() {
            if stop == k {
                snaps[idx] = Some(scaled(acc, n));
            }
        }
    });
    Ok(snaps
        .into_iter()
        .map(|v| PartialSumSample {
            value: v.expect("every stop lies in 0..=n"),
            shape: g.output_shape(),
            n,
            centered: center,
        })
        .collect())
}

/// `⌊n t⌋` for each grid point, validating `t ∈ [0, 1]`.
pub fn grid_stops(grid: &[f64], n: usize) -> Result<Vec<usize>> {
    grid.iter()
        .map(|&t| {
            if (0.0..=1.0).contains(&t) {
                Ok(((n as f64) * t).floor() as usize)
            } else {
                Err(Error::InvalidArgument(format!("grid point {t} outside [0, 1]")))
            }
        })
        .collect()
}

/// Partial sums straight from a score path, snapshotting at `stops`.
/// The last entry is always the full sum `S_n`.
pub fn score_partial_sums(g: &OperatorG, path: &ScorePath, stops: &[usize], center: bool) -> Vec<Vec<f64>> {
    let roots: Vec<f64> = g.spectrum().iter().map(|l| l.sqrt()).collect();
    let n = path.len();
    let mut snaps: Vec<Vec<f64>> = stops.iter().map(|_| vec![0.0; g.output_dim()]).collect();
    let rows: Vec<Vec<f64>> = embedded_rows(path, &roots).collect();
    let acc = accumulate(g, rows.iter().map(Vec::as_slice), center, |k, acc| {
        for (idx, &stop) in stops.iter().enumerate() {
            if stop == k {
                snaps[idx] = scaled(acc, n);
            }
        }
    });
    snaps.push(scaled(&acc, n));
    snaps
}

/// `Γ_n = (1/n) Σ_k X_k ⊗ X_k`.
pub fn sample_covariance_operator(path: &[HilbertVector]) -> Result<HilbertOperator> {
    let first = path.first().ok_or_else(|| Error::InvalidArgument("need at least one sample".into()))?;
    let d = first.dim();
    let mut gamma = HilbertOperator::zeros(d);
    for x in path {
        check_dim(d, x.dim())?;
        let c = x.coeffs();
        for r in 0..d {
            for s in 0..d {
                gamma.add_to(r, s, c[r] * c[s]);
            }
        }
    }
    Ok(gamma.scaled(1.0 / path.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::MultiIndex;
    use crate::models::embed_scores;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn model3() -> ProcessModel {
        ProcessModel::iid(vec![1.0, 0.5, 0.25]).unwrap()
    }

    #[test]
    fn apply_examples() {
        let m = model3();
        let x = HilbertVector::new(vec![0.3, -1.0, 2.0]);
        assert_eq!(apply_g(&OperatorG::identity(&m), &x).unwrap(), OutputValue::Vector(x.clone()));

        let cov = OperatorG::sample_covariance(&m);
        let at_zero = apply_g(&cov, &HilbertVector::zeros(3)).unwrap();
        assert_eq!(at_zero, OutputValue::Operator(HilbertOperator::diagonal(&[-1.0, -0.5, -0.25])));

        let eig = OperatorG::eigenvalue(&ProcessModel::iid(vec![1.0, 0.5]).unwrap(), 1).unwrap();
        assert_eq!(apply_g(&eig, &HilbertVector::new(vec![2.0, 0.0])).unwrap(), OutputValue::Scalar(3.0));

        assert!(cov.apply(&HilbertVector::zeros(2)).is_err());
        assert!(OperatorG::eigenvalue(&m, 4).is_err());
    }

    #[test]
    fn hermite_defined_matches_closed_forms() {
        let m = model3();
        let coeffs = OperatorG::sample_covariance(&m).closed_form(2).unwrap();
        let h = OperatorG::hermite_defined(&m, coeffs).unwrap();
        let cov = OperatorG::sample_covariance(&m);
        let x = HilbertVector::new(vec![0.4, -1.2, 0.9]);
        let a = h.apply(&x).unwrap();
        let b = cov.apply(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
        // A shifted table carries its own mean.
        let mut t = HermiteCoefficients::new(2, 1, 1);
        t.insert(0, MultiIndex::empty(), 0.75, 0.0).unwrap();
        t.insert(0, MultiIndex::single(1, 1), 1.0, 0.0).unwrap();
        let g = OperatorG::hermite_defined(&m, t).unwrap();
        assert_eq!(g.mean(), &[0.75]);
    }

    #[test]
    fn partial_sum_examples() {
        let m = model3();
        let x = HilbertVector::new(vec![1.0, 2.0, 3.0]);
        let s = partial_sum(&OperatorG::identity(&m), std::slice::from_ref(&x), true).unwrap();
        assert_eq!(s.value, x.coeffs());

        let path = embed_scores(&m.simulate_path(64, 4).unwrap(), &m).unwrap();
        let cov = OperatorG::sample_covariance(&m);
        let s = partial_sum(&cov, &path, true).unwrap();
        let gamma = sample_covariance_operator(&path).unwrap();
        let q = HilbertOperator::diagonal(m.spectrum());
        let expected = gamma.sub(&q).unwrap().scaled(8.0);
        for (a, b) in s.value.iter().zip(expected.entries()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
        let op = match s.typed().unwrap() {
            OutputValue::Operator(t) => t,
            other => panic!("{other:?}"),
        };
        assert!(op.symmetry_defect() < 1e-14);

        let eig = OperatorG::eigenvalue(&m, 2).unwrap();
        let s = partial_sum(&eig, &path, true).unwrap();
        let lam_hat = path.iter().map(|x| x.coeffs()[1].powi(2)).sum::<f64>() / 64.0;
        assert_relative_eq!(s.value[0], 8.0 * (lam_hat - 0.5), epsilon = 1e-12);
    }

    #[test]
    fn continuous_sum_endpoints() {
        let m = ProcessModel::arh1(vec![0.5, 0.2], vec![1.0, 0.4]).unwrap();
        let path = embed_scores(&m.simulate_path(100, 3).unwrap(), &m).unwrap();
        for g in [OperatorG::identity(&m), OperatorG::sample_covariance(&m), OperatorG::eigenvalue(&m, 1).unwrap()] {
            let v = continuous_partial_sum(&g, &path, &[0.0, 0.5, 1.0], true).unwrap();
            assert!(v[0].value.iter().all(|&x| x == 0.0));
            let full = partial_sum(&g, &path, true).unwrap();
            assert_eq!(v[2].value, full.value, "bit-for-bit at t = 1");
            let half = partial_sum(&g, &path[..50], true).unwrap();
            for (a, b) in v[1].value.iter().zip(&half.value) {
                // Same sum, normalized by √n instead of √(n/2).
                assert_relative_eq!(*a, b / 2f64.sqrt(), epsilon = 1e-12);
            }
        }
        assert!(continuous_partial_sum(&OperatorG::identity(&m), &path, &[1.5], true).is_err());
    }

    #[test]
    fn score_path_sums_match_embedded_sums() {
        let m = ProcessModel::arh1(vec![0.5], vec![2.0]).unwrap();
        let sp = m.simulate_path(33, 8).unwrap();
        let path = embed_scores(&sp, &m).unwrap();
        let g = OperatorG::eigenvalue(&m, 1).unwrap();
        let fast = score_partial_sums(&g, &sp, &[16], true);
        let slow = continuous_partial_sum(&g, &path, &[16.0 / 33.0, 1.0], true).unwrap();
        assert_eq!(fast[0], slow[0].value);
        assert_eq!(fast[1], slow[1].value);
    }

    #[test]
    fn sample_covariance_examples() {
        let x = HilbertVector::new(vec![1.0, -2.0]);
        let g = sample_covariance_operator(std::slice::from_ref(&x)).unwrap();
        assert_eq!(g, crate::hilbert::outer_product(&x, &x).unwrap());

        let m = model3();
        let path = embed_scores(&m.simulate_path(50, 1).unwrap(), &m).unwrap();
        let g = sample_covariance_operator(&path).unwrap();
        let norms = path.iter().map(|x| x.norm().powi(2)).sum::<f64>() / 50.0;
        assert_relative_eq!(g.trace(), norms, max_relative = 1e-13);
    }

    #[test]
    fn sample_covariance_is_unbiased() {
        let m = model3();
        let reps = 10_000;
        let mut s1 = [0.0; 9];
        let mut s2 = [0.0; 9];
        for rep in 0..reps {
            let mut rng = stream(42, rep);
            let path = embed_scores(&m.simulate_path_with(50, &mut rng).unwrap(), &m).unwrap();
            let g = sample_covariance_operator(&path).unwrap();
            for (k, e) in g.entries().iter().enumerate() {
                s1[k] += e;
                s2[k] += e * e;
            }
        }
        let q = HilbertOperator::diagonal(m.spectrum());
        let r = reps as f64;
        for k in 0..9 {
            let mean = s1[k] / r;
            let se = ((s2[k] / r - mean * mean) / r).sqrt();
            assert!((mean - q.entries()[k]).abs() < 3.0 * se + 1e-15, "entry {k}: {mean} ± {se}");
        }
    }

    #[test]
    fn iid_second_moment_does_not_depend_on_n() {
        let m = ProcessModel::iid(vec![1.0, 0.25]).unwrap();
        let g = OperatorG::sample_covariance(&m);
        let moment = |n: usize| {
            let reps = 4000;
            let vals: Vec<f64> = (0..reps)
                .map(|rep| {
                    let sp = m.simulate_path_with(n, &mut stream(99 + n as u64, rep)).unwrap();
                    score_partial_sums(&g, &sp, &[], true)[0].iter().map(|v| v * v).sum::<f64>()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / reps as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            (mean, (var / reps as f64).sqrt())
        };
        let (a, sa) = moment(10);
        let (b, sb) = moment(1000);
        assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "{a} ± {sa} vs {b} ± {sb}");
    }

    #[test]
    fn neural_operator_sign_symmetry() {
        let base = ProcessModel::iid(vec![1.0, 0.5]).unwrap();
        let stacked = base.stacked(4).unwrap();
        let g = OperatorG::neural(&stacked, 2, Activation::Tanh, 1000, 1).unwrap();
        let mut rng = stream(5, 0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let mut flipped = x.clone();
            // Flip the pair (Φ^(2), Ψ^(2)).
            for k in 0..2 {
                flipped[2 + k] = -flipped[2 + k];
                flipped[6 + k] = -flipped[6 + k];
            }
            let a = g.apply(&HilbertVector::new(x)).unwrap();
            let b = g.apply(&HilbertVector::new(flipped)).unwrap();
            assert_eq!(a, b);
        }
        assert!(OperatorG::neural(&base, 1, Activation::Tanh, 10, 0).is_err());
    }

    #[test]
    fn neural_output_layout() {
        let base = ProcessModel::iid(vec![1.0, 1.0]).unwrap();
        let g = OperatorG::neural(&base.stacked(2).unwrap(), 1, Activation::Identity, 1000, 2).unwrap();
        // Φ = (1, 2), Ψ = (3, 5) gives Φ Ψᵀ.
        let out = g.apply(&HilbertVector::new(vec![1.0, 2.0, 3.0, 5.0])).unwrap();
        assert_eq!(out, vec![3.0, 5.0, 6.0, 10.0]);
        for (m, se) in g.mean().iter().zip(g.mean_stderr()) {
            assert!(m.abs() < 4.0 * se + 1e-12);
        }
    }
}
