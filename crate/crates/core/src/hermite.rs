//! Probabilists' Hermite polynomials, generalized Hermite coefficients of
//! functionals of a Gaussian vector, Hermite rank, and chaos kernels.
//!
//! Basis positions inside a [`MultiIndex`] are one-based, matching `u_1..u_D`.
//! Output indices `i` are zero-based positions in the flattened output space.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// `H_n(x)` by the three-term recurrence.
pub fn hermite_eval(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `H_0(x)..H_nmax(x)` written into `out[0..=nmax]`.
pub fn hermite_table(nmax: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if nmax == 0 {
        return;
    }
    out[1] = x;
    for k in 1..nmax {
        out[k + 1] = x * out[k] - k as f64 * out[k - 1];
    }
}

/// Gauss-Hermite rule for the standard normal density: `E f(Z) ≈ Σ w_k f(x_k)`.
/// Nodes are increasing and the weights sum to one.
pub fn gauss_hermite(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = nalgebra::DMatrix::from_fn(nodes, nodes, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..nodes)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E H_n(X) H_m(Y)` for standard Gaussians with correlation `rho`, by
/// tensor Gauss-Hermite quadrature with `Y = ρ Z_1 + √(1-ρ²) Z_2`.
pub fn bivariate_hermite_moment(n: usize, m: usize, rho: f64, nodes: usize) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    let c = (1.0 - rho * rho).max(0.0).sqrt();
    let mut total = 0.0;
    for (a, wa) in x.iter().zip(&w) {
        let hn = hermite_eval(n, *a);
        let mut inner = 0.0;
        for (b, wb) in x.iter().zip(&w) {
            inner += wb * hermite_eval(m, rho * a + c * b);
        }
        total += wa * hn * inner;
    }
    total
}

/// Finitely supported exponent sequence `l`, keyed by one-based position.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<usize, u32>", into = "BTreeMap<usize, u32>")]
pub struct MultiIndex {
    support: BTreeMap<usize, u32>,
}

impl TryFrom<BTreeMap<usize, u32>> for MultiIndex {
    type Error = Error;

    fn try_from(map: BTreeMap<usize, u32>) -> Result<Self> {
        if map.contains_key(&0) {
            return Err(Error::Parse("multi-index positions are one-based".into()));
        }
        Ok(Self { support: map.into_iter().filter(|&(_, e)| e > 0).collect() })
    }
}

impl From<MultiIndex> for BTreeMap<usize, u32> {
    fn from(l: MultiIndex) -> Self {
        l.support
    }
}

impl MultiIndex {
    pub fn empty() -> Self {
        Self::default()
    }

    /// From `(position, exponent)` pairs; zero exponents are dropped.
    pub fn new<I: IntoIterator<Item = (usize, u32)>>(pairs: I) -> Result<Self> {
        let mut support = BTreeMap::new();
        for (pos, exp) in pairs {
            if pos == 0 {
                return Err(Error::InvalidArgument("multi-index positions are one-based".into()));
            }
            if exp > 0 {
                *support.entry(pos).or_insert(0) += exp;
            }
        }
        Ok(Self { support })
    }

    pub fn single(pos: usize, exp: u32) -> Self {
        Self::new([(pos, exp)]).expect("position must be one-based")
    }

    pub fn degree(&self) -> usize {
        self.support.values().map(|&e| e as usize).sum()
    }

    /// Highest position with a nonzero exponent, 0 for the empty index.
    pub fn max_pos(&self) -> usize {
        self.support.keys().next_back().copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.support.iter().map(|(&p, &e)| (p, e))
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// `Π l_m!`.
    pub fn factorial_product(&self) -> f64 {
        self.support.values().map(|&e| factorial(e as usize)).product()
    }

    /// Sorted zero-based tuple with each position repeated by its exponent.
    pub fn sorted_tuple(&self) -> Vec<usize> {
        self.iter().flat_map(|(p, e)| std::iter::repeat_n(p - 1, e as usize)).collect()
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.iter().map(|(p, e)| format!("{p}:{e}")).collect();
        format!("{{{}}}", parts.join(","))
    }
}

/// All nonempty multi-indices over positions `1..=positions` with degree at
/// most `max_degree`, ordered by degree and then lexicographically.
pub fn enumerate_multi_indices(positions: usize, max_degree: usize) -> Vec<MultiIndex> {
    fn rec(pos: usize, positions: usize, left: usize, cur: &mut Vec<(usize, u32)>, out: &mut Vec<MultiIndex>) {
        if pos > positions {
            if !cur.is_empty() {
                out.push(MultiIndex::new(cur.iter().copied()).expect("one-based"));
            }
            return;
        }
        for e in 0..=left {
            if e > 0 {
                cur.push((pos, e as u32));
            }
            rec(pos + 1, positions, left - e, cur, out);
            if e > 0 {
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(1, positions, max_degree, &mut Vec::new(), &mut out);
    out.sort_by(|a, b| a.degree().cmp(&b.degree()).then_with(|| a.sorted_tuple().cmp(&b.sorted_tuple())));
    out
}

/// `H_l(w) = Π_m H_{l_m}(w_m)` for one-based positions into `scores`.
pub fn hermite_product_eval(l: &MultiIndex, scores: &[f64]) -> Result<f64> {
    if l.max_pos() > scores.len() {
        return Err(Error::DimensionMismatch { expected: l.max_pos(), got: scores.len() });
    }
    Ok(l.iter().map(|(p, e)| hermite_eval(e as usize, scores[p - 1])).product())
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// A square-integrable map from basis coefficients of a Gaussian vector to a
/// flattened real output.
pub trait GaussianFunctional: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Evaluates at basis coefficients `x`, writing `output_dim` values.
    fn eval_into(&self, x: &[f64], out: &mut [f64]);
}

/// Adapter turning a closure into a [`GaussianFunctional`].
pub struct FnFunctional<F> {
    pub input_dim: usize,
    pub output_dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> GaussianFunctional for FnFunctional<F> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

const JACKKNIFE_BLOCKS: usize = 50;

/// Monte Carlo estimate of `c_{i,l} = E[G_i(X) H_l(W)] / Π l_m!` from
/// `n_samples` evaluations in antithetic pairs, with a delete-one-block
/// jackknife standard error.
pub fn estimate_hermite_coefficient(
    g: &dyn GaussianFunctional,
    spectrum: &[f64],
    i: usize,
    l: &MultiIndex,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if i >= g.output_dim() {
        return Err(Error::IndexOutOfRange { index: i, max: g.output_dim() });
    }
    let table = estimate_table(g, spectrum, std::slice::from_ref(l), n_samples, seed)?;
    Ok(table[0][i])
}

/// Estimates all `(i, l)` cells for the given multi-indices from one shared
/// sample. Returns `out[index of l][i]`.
pub fn estimate_table(
    g: &dyn GaussianFunctional,
    spectrum: &[f64],
    indices: &[MultiIndex],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<Estimate>>> {
    let d = g.input_dim();
    if spectrum.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: spectrum.len() });
    }
    if let Some(l) = indices.iter().find(|l| l.max_pos() > d) {
        return Err(Error::DimensionMismatch { expected: l.max_pos(), got: d });
    }
    let pairs = (n_samples / 2).max(JACKKNIFE_BLOCKS);
    let per_block = pairs.div_ceil(JACKKNIFE_BLOCKS);
    let out_dim = g.output_dim();
    let max_exp = indices
        .iter()
        .flat_map(|l| l.iter().map(|(_, e)| e as usize))
        .max()
        .unwrap_or(0);
    let roots: Vec<f64> = spectrum.iter().map(|l| l.sqrt()).collect();
    let cells = indices.len() * out_dim;

    let block_means: Vec<Result<Vec<f64>>> = (0..JACKKNIFE_BLOCKS)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let mut sums = vec![0.0; cells];
            let mut w = vec![0.0; d];
            let mut x = vec![0.0; d];
            let mut gp = vec![0.0; out_dim];
            let mut gm = vec![0.0; out_dim];
            let mut htab = vec![0.0; d * (max_exp + 1)];
            for k in 0..per_block {
                for r in 0..d {
                    w[r] = rng.sample(StandardNormal);
                    x[r] = roots[r] * w[r];
                }
                g.eval_into(&x, &mut gp);
                for v in x.iter_mut() {
                    *v = -*v;
                }
                g.eval_into(&x, &mut gm);
                if gp.iter().chain(&gm).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(b * per_block + k));
                }
                for r in 0..d {
                    hermite_table(max_exp, w[r], &mut htab[r * (max_exp + 1)..(r + 1) * (max_exp + 1)]);
                }
                for (li, l) in indices.iter().enumerate() {
                    let h: f64 = l.iter().map(|(p, e)| htab[(p - 1) * (max_exp + 1) + e as usize]).product();
                    let sign = if l.degree() % 2 == 0 { 1.0 } else { -1.0 };
                    for i in 0..out_dim {
                        sums[li * out_dim + i] += 0.5 * h * (gp[i] + sign * gm[i]);
                    }
                }
            }
            Ok(sums.into_iter().map(|s| s / per_block as f64).collect())
        })
        .collect();
    let block_means = block_means.into_iter().collect::<Result<Vec<_>>>()?;

    let nb = JACKKNIFE_BLOCKS as f64;
    let mut out = Vec::with_capacity(indices.len());
    for (li, l) in indices.iter().enumerate() {
        let norm = l.factorial_product();
        let mut row = Vec::with_capacity(out_dim);
        for i in 0..out_dim {
            let cell = li * out_dim + i;
            let total: f64 = block_means.iter().map(|m| m[cell]).sum();
            let mean = total / nb;
            let loo: Vec<f64> = block_means.iter().map(|m| (total - m[cell]) / (nb - 1.0)).collect();
            let loo_mean = loo.iter().sum::<f64>() / nb;
            let var = (nb - 1.0) / nb * loo.iter().map(|t| (t - loo_mean).powi(2)).sum::<f64>();
            row.push(Estimate { value: mean / norm, stderr: var.sqrt() / norm });
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub i: usize,
    pub l: MultiIndex,
    pub c: f64,
    #[serde(default)]
    pub stderr: f64,
}

/// Sparse table `(i, l) -> c_{i,l}`, with standard errors when estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoefficientsJson", into = "CoefficientsJson")]
pub struct HermiteCoefficients {
    degree_cap: usize,
    index_cap: usize,
    output_dim: usize,
    table: BTreeMap<(usize, MultiIndex), Estimate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientsJson {
    degree_cap: usize,
    #[serde(default)]
    index_cap: Option<usize>,
    #[serde(default)]
    output_dim: Option<usize>,
    entries: Vec<CoefficientEntry>,
}

impl TryFrom<CoefficientsJson> for HermiteCoefficients {
    type Error = Error;

    fn try_from(raw: CoefficientsJson) -> Result<Self> {
        let index_cap = raw
            .index_cap
            .unwrap_or_else(|| raw.entries.iter().map(|e| e.l.max_pos()).max().unwrap_or(0));
        let output_dim = raw
            .output_dim
            .unwrap_or_else(|| raw.entries.iter().map(|e| e.i + 1).max().unwrap_or(0));
        let mut out = Self::new(raw.degree_cap, index_cap, output_dim);
        for e in raw.entries {
            out.insert(e.i, e.l, e.c, e.stderr)?;
        }
        Ok(out)
    }
}

impl From<HermiteCoefficients> for CoefficientsJson {
    fn from(c: HermiteCoefficients) -> Self {
        CoefficientsJson {
            degree_cap: c.degree_cap,
            index_cap: Some(c.index_cap),
            output_dim: Some(c.output_dim),
            entries: c.entries().collect(),
        }
    }
}

impl HermiteCoefficients {
    pub fn new(degree_cap: usize, index_cap: usize, output_dim: usize) -> Self {
        Self { degree_cap, index_cap, output_dim, table: BTreeMap::new() }
    }

    pub fn insert(&mut self, i: usize, l: MultiIndex, c: f64, stderr: f64) -> Result<()> {
        if l.degree() > self.degree_cap {
            return Err(Error::InvalidArgument(format!(
                "multi-index {} exceeds degree cap {}",
                l.label(),
                self.degree_cap
            )));
        }
        if l.max_pos() > self.index_cap {
            return Err(Error::IndexOutOfRange { index: l.max_pos(), max: self.index_cap });
        }
        if i >= self.output_dim {
            return Err(Error::IndexOutOfRange { index: i, max: self.output_dim });
        }
        if !c.is_finite() || !stderr.is_finite() {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        self.table.insert((i, l), Estimate { value: c, stderr });
        Ok(())
    }

    pub fn degree_cap(&self) -> usize {
        self.degree_cap
    }

    pub fn index_cap(&self) -> usize {
        self.index_cap
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, i: usize, l: &MultiIndex) -> Option<Estimate> {
        self.table.get(&(i, l.clone())).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = CoefficientEntry> + '_ {
        self.table
            .iter()
            .map(|((i, l), e)| CoefficientEntry { i: *i, l: l.clone(), c: e.value, stderr: e.stderr })
    }

    /// Degree-zero coefficients, i.e. the mean `E G_i`.
    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.output_dim];
        for ((i, l), e) in &self.table {
            if l.is_empty() {
                mu[*i] = e.value;
            }
        }
        mu
    }

    /// `Σ (Π l_m!) c²` over positive degrees: the centered second moment
    /// captured by the table.
    pub fn parseval_mass(&self) -> f64 {
        self.table
            .iter()
            .filter(|((_, l), _)| !l.is_empty())
            .map(|((_, l), e)| l.factorial_product() * e.value * e.value)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for e in out.table.values_mut() {
            e.value *= factor;
            e.stderr *= factor.abs();
        }
        out
    }

    /// `Σ_l c_{i,l} H_l(w)` for every output `i`.
    pub fn evaluate(&self, scores: &[f64], out: &mut [f64]) -> Result<()> {
        if out.len() != self.output_dim {
            return Err(Error::DimensionMismatch { expected: self.output_dim, got: out.len() });
        }
        if scores.len() < self.index_cap {
            return Err(Error::DimensionMismatch { expected: self.index_cap, got: scores.len() });
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((i, l), e) in &self.table {
            out[*i] += e.value * hermite_product_eval(l, scores)?;
        }
        Ok(())
    }

    /// Keeps only the listed degrees.
    pub fn restricted(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = Self::new(self.degree_cap, self.index_cap, self.output_dim);
        out.table = self.table.iter().filter(|((_, l), _)| keep(l.degree())).map(|(k, v)| (k.clone(), *v)).collect();
        out
    }
}

/// Operators with analytically known coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedFormKind {
    Identity,
    /// `x ⊗ x - Q` with output `(r, s)` at flattened index `r D + s`.
    Covariance,
    /// `⟨x, u_j⟩² - λ_j` with one-based `j`.
    Eigenvalue(usize),
}

pub fn closed_form_coefficients(kind: ClosedFormKind, spectrum: &[f64], degree_cap: usize) -> Result<HermiteCoefficients> {
    if degree_cap < 2 {
        return Err(Error::InvalidArgument(format!("degree cap must be at least 2, got {degree_cap}")));
    }
    let d = spectrum.len();
    let out = match kind {
        ClosedFormKind::Identity => {
            let mut t = HermiteCoefficients::new(degree_cap, d, d);
            for (i, l) in spectrum.iter().enumerate() {
                t.insert(i, MultiIndex::single(i + 1, 1), l.sqrt(), 0.0)?;
            }
            t
        }
        ClosedFormKind::Covariance => {
            let mut t = HermiteCoefficients::new(degree_cap, d, d * d);
            for r in 0..d {
                for s in 0..d {
                    let (l, c) = if r == s {
                        (MultiIndex::single(r + 1, 2), spectrum[r])
                    } else {
                        (MultiIndex::new([(r + 1, 1), (s + 1, 1)])?, (spectrum[r] * spectrum[s]).sqrt())
                    };
                    t.insert(r * d + s, l, c, 0.0)?;
                }
            }
            t
        }
        ClosedFormKind::Eigenvalue(j) => {
            if j == 0 || j > d {
                return Err(Error::IndexOutOfRange { index: j, max: d });
            }
            let mut t = HermiteCoefficients::new(degree_cap, d, 1);
            t.insert(0, MultiIndex::single(j, 2), spectrum[j - 1], 0.0)?;
            t
        }
    };
    Ok(out)
}

/// Estimates the full table up to `degree_cap` over positions
/// `1..=index_cap`, including the degree-zero mean.
pub fn estimate_coefficients(
    g: &dyn GaussianFunctional,
    spectrum: &[f64],
    degree_cap: usize,
    index_cap: usize,
    n_samples: usize,
    seed: u64,
) -> Result<HermiteCoefficients> {
    if index_cap > g.input_dim() {
        return Err(Error::IndexOutOfRange { index: index_cap, max: g.input_dim() });
    }
    let mut indices = vec![MultiIndex::empty()];
    indices.extend(enumerate_multi_indices(index_cap, degree_cap));
    let est = estimate_table(g, spectrum, &indices, n_samples, seed)?;
    let mut table = HermiteCoefficients::new(degree_cap, index_cap, g.output_dim());
    for (l, row) in indices.into_iter().zip(est) {
        for (i, e) in row.into_iter().enumerate() {
            table.insert(i, l.clone(), e.value, e.stderr)?;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub threshold: f64,
    /// Largest `|c|` of the rank degree divided by its acceptance cutoff.
    pub margin: f64,
    /// Largest `|c|` among all lower positive degrees divided by the cutoff.
    pub lower_degree_ratio: f64,
    pub leading: CoefficientEntry,
    pub l2_norm: f64,
}

/// Cutoff multiple of the standard error for estimated coefficients.
pub const RANK_STDERR_MULTIPLE: f64 = 4.0;
/// Default threshold relative to `‖G‖_{L²}`.
pub const RANK_RELATIVE_THRESHOLD: f64 = 1e-6;

/// Minimum positive degree carrying a coefficient with `|c| > threshold`.
pub fn hermite_rank(coeffs: &HermiteCoefficients, threshold: f64) -> Result<usize> {
    Ok(rank_report(coeffs, Some(threshold))?.rank)
}

/// Rank with diagnostics. Without an explicit threshold, uses
/// `1e-6 · ‖G‖_{L²}` from the table's Parseval mass. Estimated entries must
/// also exceed four standard errors.
pub fn rank_report(coeffs: &HermiteCoefficients, threshold: Option<f64>) -> Result<RankReport> {
    let l2_norm = coeffs.parseval_mass().sqrt();
    let threshold = threshold.unwrap_or(RANK_RELATIVE_THRESHOLD * l2_norm);
    let ratio = |e: &CoefficientEntry| {
        let cut = threshold.max(RANK_STDERR_MULTIPLE * e.stderr);
        if cut > 0.0 {
            e.c.abs() / cut
        } else if e.c != 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let scored: Vec<(f64, CoefficientEntry)> =
        coeffs.entries().filter(|e| !e.l.is_empty()).map(|e| (ratio(&e), e)).collect();
    let rank = scored
        .iter()
        .filter(|(r, _)| *r > 1.0 && l2_norm > 0.0)
        .map(|(_, e)| e.l.degree())
        .min()
        .ok_or(Error::RankUndetermined { threshold })?;
    let (margin, leading) = scored
        .iter()
        .filter(|(_, e)| e.l.degree() == rank)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(r, e)| (*r, e.clone()))
        .expect("rank degree has an entry");
    let lower = scored.iter().filter(|(_, e)| e.l.degree() < rank).map(|(r, _)| *r).fold(0.0, f64::max);
    Ok(RankReport { rank, threshold, margin, lower_degree_ratio: lower, leading, l2_norm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosEntry {
    pub i: usize,
    /// Sorted zero-based positions.
    pub tuple: Vec<usize>,
    pub b: f64,
    /// Number of distinct permutations of `tuple`, all carrying `b`.
    pub multiplicity: f64,
}

/// Symmetric chaos kernels `b_{i,j}` per order, stored once per sorted tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosCoefficients {
    pub output_dim: usize,
    pub input_dim: usize,
    pub mean: Vec<f64>,
    /// `orders[p - 1]` holds the order-`p` kernel entries.
    pub orders: Vec<Vec<ChaosEntry>>,
}

impl ChaosCoefficients {
    pub fn order_cap(&self) -> usize {
        self.orders.len()
    }

    pub fn order(&self, p: usize) -> &[ChaosEntry] {
        if p == 0 || p > self.orders.len() {
            &[]
        } else {
            &self.orders[p - 1]
        }
    }

    /// `E‖G^p‖² = p! Σ_{i,j} b²_{i,j}` over the full index set.
    pub fn chaos_moment(&self, p: usize) -> f64 {
        factorial(p) * self.order(p).iter().map(|e| e.multiplicity * e.b * e.b).sum::<f64>()
    }

    pub fn chaos_moments(&self) -> Vec<f64> {
        (1..=self.order_cap()).map(|p| self.chaos_moment(p)).collect()
    }

    /// Lowest order with a nonzero kernel.
    pub fn rank(&self) -> Option<usize> {
        (1..=self.order_cap()).find(|&p| self.order(p).iter().any(|e| e.b != 0.0))
    }

    pub fn truncated(&self, max_order: usize) -> Self {
        let mut out = self.clone();
        out.orders.truncate(max_order);
        out
    }

    /// Evaluates the kernel `b_{i,j}` at an arbitrary ordered tuple.
    pub fn kernel(&self, i: usize, tuple: &[usize]) -> f64 {
        let mut sorted = tuple.to_vec();
        sorted.sort_unstable();
        self.order(tuple.len())
            .iter()
            .find(|e| e.i == i && e.tuple == sorted)
            .map_or(0.0, |e| e.b)
    }
}

/// Number of distinct orderings of a sorted tuple.
pub fn permutation_count(sorted: &[usize]) -> f64 {
    let mut denom = 1.0;
    let mut run = 1;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            denom *= factorial(run);
            run = 1;
        }
    }
    denom *= factorial(run);
    factorial(sorted.len()) / denom
}

/// Maps `c_{i,l}` to symmetric kernels with `b = c · Π l_m! / p!` on every
/// permutation of the tuple of `l`.
pub fn to_chaos_coefficients(coeffs: &HermiteCoefficients) -> ChaosCoefficients {
    let mut orders = vec![Vec::new(); coeffs.degree_cap()];
    let mut mean = vec![0.0; coeffs.output_dim()];
    for e in coeffs.entries() {
        let p = e.l.degree();
        if p == 0 {
            mean[e.i] = e.c;
            continue;
        }
        let b = e.c * e.l.factorial_product() / factorial(p);
        let tuple = e.l.sorted_tuple();
        let multiplicity = permutation_count(&tuple);
        orders[p - 1].push(ChaosEntry { i: e.i, tuple, b, multiplicity });
    }
    while orders.last().is_some_and(Vec::is_empty) {
        orders.pop();
    }
    ChaosCoefficients { output_dim: coeffs.output_dim(), input_dim: coeffs.index_cap(), mean, orders }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::oracle;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn hermite_examples() {
        for x in [-3.0, 0.0, 0.7, 12.0] {
            assert_eq!(hermite_eval(0, x), 1.0);
            assert_eq!(hermite_eval(1, x), x);
        }
        assert_eq!(hermite_eval(2, 0.0), -1.0);
        let x = 1.3_f64;
        // x^5 - 10x^3 + 15x
        let by_hand = x.powi(5) - 10.0 * x.powi(3) + 15.0 * x;
        assert_relative_eq!(hermite_eval(5, x), by_hand, max_relative = 1e-12);
        assert_relative_eq!(hermite_eval(5, x), oracle::hermite_explicit(5, x), max_relative = 1e-12);
    }

    #[test]
    fn recurrence_matches_explicit_formula() {
        for n in 0..=12 {
            for &x in &[-2.5, -1.0, -0.1, 0.0, 0.4, 1.3, 3.7] {
                let a = hermite_eval(n, x);
                let b = oracle::hermite_explicit(n, x);
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "n={n} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(64);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        let m = |k: i32| x.iter().zip(&w).map(|(a, b)| b * a.powi(k)).sum::<f64>();
        assert_relative_eq!(m(2), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m(4), 3.0, epsilon = 1e-11);
        assert_relative_eq!(m(6), 15.0, epsilon = 1e-10);
        assert!(m(3).abs() < 1e-12);
    }

    #[test]
    fn bivariate_orthogonality() {
        for &rho in &[0.0, 0.3, -0.3, 0.9, -0.9] {
            for n in 0..=6 {
                for m in 0..=6 {
                    let q = bivariate_hermite_moment(n, m, rho, 64);
                    let expected = if n == m { factorial(n) * rho.powi(n as i32) } else { 0.0 };
                    assert!((q - expected).abs() <= 1e-8, "n={n} m={m} rho={rho}: {q}");
                }
            }
        }
    }

    #[test]
    fn product_eval_examples() {
        assert_eq!(hermite_product_eval(&MultiIndex::empty(), &[]).unwrap(), 1.0);
        assert_eq!(hermite_product_eval(&MultiIndex::single(1, 1), &[0.37, 9.0]).unwrap(), 0.37);
        let l = MultiIndex::new([(1, 1), (2, 2)]).unwrap();
        let (a, b) = (0.8, -1.7);
        assert_relative_eq!(hermite_product_eval(&l, &[a, b]).unwrap(), a * (b * b - 1.0), max_relative = 1e-15);
        assert!(hermite_product_eval(&l, &[a]).is_err());
    }

    #[test]
    fn multi_index_bookkeeping() {
        let l = MultiIndex::new([(3, 2), (1, 1), (2, 0)]).unwrap();
        assert_eq!(l.degree(), 3);
        assert_eq!(l.max_pos(), 3);
        assert_eq!(l.sorted_tuple(), vec![0, 2, 2]);
        assert_eq!(l.factorial_product(), 2.0);
        assert!(MultiIndex::new([(0, 1)]).is_err());
        let all = enumerate_multi_indices(3, 2);
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], MultiIndex::single(1, 1));
        assert_eq!(enumerate_multi_indices(4, 4).len(), 69);
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(json, r#"{"1":1,"3":2}"#);
        assert_eq!(serde_json::from_str::<MultiIndex>(&json).unwrap(), l);
    }

    fn identity_functional(d: usize) -> FnFunctional<impl Fn(&[f64], &mut [f64]) + Sync> {
        FnFunctional { input_dim: d, output_dim: d, f: |x: &[f64], out: &mut [f64]| out.copy_from_slice(x) }
    }

    #[test]
    fn estimated_identity_coefficients() {
        let lam = [1.0, 0.5, 0.25];
        let g = identity_functional(3);
        for i in 0..3 {
            let e = estimate_hermite_coefficient(&g, &lam, i, &MultiIndex::single(i + 1, 1), 20_000, 1).unwrap();
            // Antithetic pairing makes the linear case exact.
            assert!((e.value - lam[i].sqrt()).abs() <= (3.0 * e.stderr).max(1e-12), "{e:?}");
            let e2 = estimate_hermite_coefficient(&g, &lam, i, &MultiIndex::single(i + 1, 2), 20_000, 1).unwrap();
            assert!(e2.value.abs() <= (3.0 * e2.stderr).max(1e-12), "{e2:?}");
        }
    }

    #[test]
    fn estimated_covariance_cross_coefficient() {
        let lam = [1.0, 0.5];
        let g = FnFunctional {
            input_dim: 2,
            output_dim: 4,
            f: move |x: &[f64], out: &mut [f64]| {
                for r in 0..2 {
                    for s in 0..2 {
                        out[r * 2 + s] = x[r] * x[s] - if r == s { lam[r] } else { 0.0 };
                    }
                }
            },
        };
        let l = MultiIndex::new([(1, 1), (2, 1)]).unwrap();
        let e = estimate_hermite_coefficient(&g, &lam, 1, &l, 200_000, 5).unwrap();
        assert!((e.value - 0.5_f64.sqrt()).abs() <= 3.0 * e.stderr, "{e:?}");
        let exact = closed_form_coefficients(ClosedFormKind::Covariance, &lam, 4).unwrap();
        let est = estimate_coefficients(&g, &lam, 3, 2, 100_000, 8).unwrap();
        for entry in est.entries() {
            let want = exact.get(entry.i, &entry.l).map_or(0.0, |e| e.value);
            assert!((entry.c - want).abs() <= 4.0 * entry.stderr + 1e-12, "{entry:?} want {want}");
        }
    }

    #[test]
    fn non_finite_outputs_are_reported() {
        let g = FnFunctional { input_dim: 1, output_dim: 1, f: |_: &[f64], out: &mut [f64]| out[0] = f64::NAN };
        assert!(matches!(
            estimate_hermite_coefficient(&g, &[1.0], 0, &MultiIndex::single(1, 1), 100, 0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn closed_form_examples() {
        let lam = [1.0, 0.5, 0.25];
        let cov = closed_form_coefficients(ClosedFormKind::Covariance, &lam, 2).unwrap();
        assert_eq!(cov.get(4, &MultiIndex::single(2, 2)).unwrap().value, 0.5);
        let cross = cov.get(1, &MultiIndex::new([(1, 1), (2, 1)]).unwrap()).unwrap().value;
        assert_relative_eq!(cross, 0.5_f64.sqrt(), max_relative = 1e-15);
        let eig = closed_form_coefficients(ClosedFormKind::Eigenvalue(3), &lam, 2).unwrap();
        assert_eq!(eig.len(), 1);
        assert_eq!(eig.get(0, &MultiIndex::single(3, 2)).unwrap().value, 0.25);
        let id = closed_form_coefficients(ClosedFormKind::Identity, &lam, 2).unwrap();
        assert_eq!(id.len(), 3);
        assert_eq!(id.get(1, &MultiIndex::single(2, 1)).unwrap().value, 0.5_f64.sqrt());
        assert!(closed_form_coefficients(ClosedFormKind::Identity, &lam, 1).is_err());
        assert!(closed_form_coefficients(ClosedFormKind::Eigenvalue(4), &lam, 2).is_err());
    }

    #[test]
    fn parseval_matches_wick_oracle() {
        for lam in [vec![1.0], vec![1.0, 0.5], vec![1.0, 0.6, 0.3], vec![2.0, 1.0, 0.5, 0.125]] {
            let d = lam.len();
            let id = closed_form_coefficients(ClosedFormKind::Identity, &lam, 2).unwrap();
            assert_relative_eq!(id.parseval_mass(), oracle::wick_identity_second_moment(&lam), max_relative = 1e-10);
            let cov = closed_form_coefficients(ClosedFormKind::Covariance, &lam, 2).unwrap();
            assert_relative_eq!(cov.parseval_mass(), oracle::wick_covariance_second_moment(&lam), max_relative = 1e-10);
            for j in 1..=d {
                let e = closed_form_coefficients(ClosedFormKind::Eigenvalue(j), &lam, 2).unwrap();
                assert_relative_eq!(e.parseval_mass(), oracle::wick_eigenvalue_second_moment(&lam, j), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn rank_examples() {
        let lam = [1.0, 0.5, 0.25];
        let id = closed_form_coefficients(ClosedFormKind::Identity, &lam, 2).unwrap();
        assert_eq!(rank_report(&id, None).unwrap().rank, 1);
        let cov = closed_form_coefficients(ClosedFormKind::Covariance, &lam, 2).unwrap();
        assert_eq!(rank_report(&cov, None).unwrap().rank, 2);
        let eig = closed_form_coefficients(ClosedFormKind::Eigenvalue(2), &lam, 2).unwrap();
        assert_eq!(hermite_rank(&eig, 1e-9).unwrap(), 2);
        assert!(matches!(hermite_rank(&eig, 1.0), Err(Error::RankUndetermined { .. })));
        assert!(rank_report(&HermiteCoefficients::new(2, 3, 1), None).is_err());
    }

    #[test]
    fn chaos_conversion_examples() {
        let a = 0.7;
        let mut t = HermiteCoefficients::new(3, 2, 1);
        t.insert(0, MultiIndex::single(1, 1), a, 0.0).unwrap();
        let b = to_chaos_coefficients(&t);
        assert_eq!(b.order(1)[0].b, a);

        let mut t = HermiteCoefficients::new(3, 2, 1);
        t.insert(0, MultiIndex::single(1, 2), a, 0.0).unwrap();
        let b = to_chaos_coefficients(&t);
        assert_eq!(b.order(2)[0].b, a);
        assert_relative_eq!(b.chaos_moment(2), 2.0 * a * a, max_relative = 1e-15);

        let mut t = HermiteCoefficients::new(3, 2, 1);
        t.insert(0, MultiIndex::new([(1, 1), (2, 1)]).unwrap(), a, 0.0).unwrap();
        let b = to_chaos_coefficients(&t);
        assert_eq!(b.kernel(0, &[0, 1]), a / 2.0);
        assert_eq!(b.kernel(0, &[1, 0]), a / 2.0);
        assert_relative_eq!(b.chaos_moment(2), a * a, max_relative = 1e-15);
    }

    #[test]
    fn chaos_moments_match_parseval() {
        let lam = [1.0, 0.5, 0.25];
        let mut t = HermiteCoefficients::new(4, 3, 2);
        t.insert(0, MultiIndex::new([(1, 2), (3, 1)]).unwrap(), 0.3, 0.0).unwrap();
        t.insert(0, MultiIndex::new([(1, 1), (2, 1), (3, 1)]).unwrap(), -0.2, 0.0).unwrap();
        t.insert(1, MultiIndex::single(2, 4), 0.1, 0.0).unwrap();
        t.insert(1, MultiIndex::single(1, 1), 1.5, 0.0).unwrap();
        let b = to_chaos_coefficients(&t);
        let total: f64 = b.chaos_moments().iter().sum();
        assert_relative_eq!(total, t.parseval_mass(), max_relative = 1e-13);
        let _ = lam;
    }

    #[test]
    fn chaos_round_trip_variance() {
        // Variance of Σ c H_l against the chaos sum rebuilt from kernels.
        let mut t = HermiteCoefficients::new(3, 2, 1);
        t.insert(0, MultiIndex::new([(1, 1), (2, 1)]).unwrap(), 0.9, 0.0).unwrap();
        t.insert(0, MultiIndex::single(1, 2), -0.4, 0.0).unwrap();
        t.insert(0, MultiIndex::new([(1, 2), (2, 1)]).unwrap(), 0.25, 0.0).unwrap();
        let b = to_chaos_coefficients(&t);
        let n = 1_000_000;
        let mut rng = stream(77, 0);
        let (mut s1, mut s2, mut c1, mut c2) = (0.0, 0.0, 0.0, 0.0);
        let mut out = [0.0];
        for _ in 0..n {
            let w: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            t.evaluate(&w, &mut out).unwrap();
            s1 += out[0];
            s2 += out[0] * out[0];
            let chaos = oracle::chaos_sum_from_kernels(&b, 0, &w);
            c1 += chaos;
            c2 += chaos * chaos;
        }
        let nf = n as f64;
        let var_h = s2 / nf - (s1 / nf).powi(2);
        let var_c = c2 / nf - (c1 / nf).powi(2);
        let exact = t.parseval_mass();
        let se = exact * (2.0 / nf).sqrt() * 3.0;
        assert!((var_h - var_c).abs() < 1e-9, "{var_h} vs {var_c}");
        assert!((var_c - exact).abs() < 3.0 * se, "{var_c} vs {exact}");
    }

    #[test]
    fn coefficient_json_round_trip() {
        let lam = [1.0, 0.5];
        let cov = closed_form_coefficients(ClosedFormKind::Covariance, &lam, 2).unwrap();
        let json = serde_json::to_string(&cov).unwrap();
        assert!(json.starts_with(r#"{"degree_cap":2,"#));
        assert!(json.contains(r#""l":{"1":1,"2":1}"#));
        let back: HermiteCoefficients = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cov);
        let minimal = r#"{"degree_cap":2,"entries":[{"i":0,"l":{"1":2},"c":1.0}]}"#;
        let parsed: HermiteCoefficients = serde_json::from_str(minimal).unwrap();
        assert_eq!((parsed.output_dim(), parsed.index_cap()), (1, 1));
        assert!(serde_json::from_str::<HermiteCoefficients>(r#"{"degree_cap":1,"entries":[{"i":0,"l":{"1":2},"c":1.0}]}"#).is_err());
    }

    fn table_strategy() -> impl Strategy<Value = HermiteCoefficients> {
        let idx = enumerate_multi_indices(3, 3);
        prop::collection::vec((0..2_usize, 0..idx.len(), -2.0..2.0_f64), 1..8).prop_map(move |cells| {
            let mut t = HermiteCoefficients::new(3, 3, 2);
            for (i, li, c) in cells {
                t.insert(i, idx[li].clone(), c, 0.0).unwrap();
            }
            t
        })
    }

    proptest! {
        #[test]
        fn rank_is_scale_invariant(t in table_strategy(), scale in 1e-3..1e3_f64) {
            let a = rank_report(&t, None);
            let b = rank_report(&t.scaled(scale), None);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.rank, b.rank),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn chaos_keeps_parseval_mass(t in table_strategy()) {
            let b = to_chaos_coefficients(&t);
            let total: f64 = b.chaos_moments().iter().sum();
            prop_assert!((total - t.parseval_mass()).abs() <= 1e-12 * (1.0 + total));
        }

        #[test]
        fn chaos_kernels_are_symmetric(t in table_strategy()) {
            let b = to_chaos_coefficients(&t);
            for p in 1..=b.order_cap() {
                for e in b.order(p) {
                    let mut perm = e.tuple.clone();
                    perm.reverse();
                    prop_assert_eq!(b.kernel(e.i, &perm), e.b);
                }
            }
        }
    }
}
