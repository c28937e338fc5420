//! Slow, independent reference computations used to validate the fast paths.
//!
//! Nothing here is tuned. Each function follows the defining formula as
//! literally as is practical so that agreement with the production code is
//! meaningful.

use nalgebra::DMatrix;
use num_bigint::BigUint;

use crate::hermite::{hermite_eval, ChaosCoefficients};
use crate::models::ProcessModel;

/// `H_n(x) = n! Σ_m (-1)^m x^(n-2m) / (m! (n-2m)! 2^m)`.
pub fn hermite_explicit(n: usize, x: f64) -> f64 {
    let fact = |k: usize| (1..=k).map(|j| j as f64).product::<f64>();
    let mut total = 0.0;
    for m in 0..=n / 2 {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * x.powi((n - 2 * m) as i32) / (fact(m) * fact(n - 2 * m) * 2f64.powi(m as i32));
    }
    fact(n) * total
}

/// `E[Π_k Z_{a_k}]` for a centered Gaussian vector with covariance `cov`, by
/// summing over all perfect pairings.
pub fn wick_moment(indices: &[usize], cov: &dyn Fn(usize, usize) -> f64) -> f64 {
    if indices.is_empty() {
        return 1.0;
    }
    if indices.len() % 2 == 1 {
        return 0.0;
    }
    let first = indices[0];
    let rest = &indices[1..];
    let mut total = 0.0;
    for k in 0..rest.len() {
        let c = cov(first, rest[k]);
        if c == 0.0 {
            continue;
        }
        let remaining: Vec<usize> = rest.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &v)| v).collect();
        total += c * wick_moment(&remaining, cov);
    }
    total
}

fn diag_cov(lam: &[f64]) -> impl Fn(usize, usize) -> f64 + '_ {
    move |a, b| if a == b { lam[a] } else { 0.0 }
}

/// `E‖X‖²` for `X ~ N(0, diag λ)`.
pub fn wick_identity_second_moment(lam: &[f64]) -> f64 {
    let cov = diag_cov(lam);
    (0..lam.len()).map(|r| wick_moment(&[r, r], &cov)).sum()
}

/// `E‖X⊗X - Q‖²_HS` expanded entrywise.
pub fn wick_covariance_second_moment(lam: &[f64]) -> f64 {
    let cov = diag_cov(lam);
    let d = lam.len();
    let mut total = 0.0;
    for r in 0..d {
        for s in 0..d {
            let q = if r == s { lam[r] } else { 0.0 };
            total += wick_moment(&[r, s, r, s], &cov) - 2.0 * q * wick_moment(&[r, s], &cov) + q * q;
        }
    }
    total
}

/// `E(⟨X, u_j⟩² - λ_j)²` with one-based `j`.
pub fn wick_eigenvalue_second_moment(lam: &[f64], j: usize) -> f64 {
    let cov = diag_cov(lam);
    let r = j - 1;
    wick_moment(&[r, r, r, r], &cov) - 2.0 * lam[r] * wick_moment(&[r, r], &cov) + lam[r] * lam[r]
}

fn ordered_tuples(dim: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..p {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..dim).map(move |x| {
                    let mut t = t.clone();
                    t.push(x);
                    t
                })
            })
            .collect();
    }
    out
}

/// `Σ_p Σ_{j ∈ [D]^p} b_{i,j} Π_m H_{#m in j}(w_m)`: the chaos sum rebuilt
/// from kernels over every ordered tuple.
pub fn chaos_sum_from_kernels(b: &ChaosCoefficients, i: usize, w: &[f64]) -> f64 {
    let mut total = b.mean.get(i).copied().unwrap_or(0.0);
    for p in 1..=b.order_cap() {
        for t in ordered_tuples(b.input_dim, p) {
            let k = b.kernel(i, &t);
            if k == 0.0 {
                continue;
            }
            let mut counts = vec![0; b.input_dim];
            for &x in &t {
                counts[x] += 1;
            }
            let h: f64 = counts.iter().enumerate().map(|(m, &c)| hermite_eval(c, w[m])).product();
            total += k * h;
        }
    }
    total
}

/// Eigenvalues, decreasing, of the midpoint Nyström matrix of `s ∧ t`.
pub fn nystrom_brownian_eigenvalues(m: usize) -> Vec<f64> {
    let t: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
    let a = DMatrix::from_fn(m, m, |i, j| t[i].min(t[j]) / m as f64);
    let mut ev: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// `∫∫ (s ∧ t)² ds dt` by the composite Simpson rule on each triangle.
pub fn double_integral_min_squared(m: usize) -> f64 {
    let m = m + m % 2;
    let h = 1.0 / m as f64;
    let w = |k: usize| if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
    let mut total = 0.0;
    for a in 0..=m {
        for b in 0..=m {
            let (s, t) = (a as f64 * h, b as f64 * h);
            total += w(a) * w(b) * s.min(t).powi(2);
        }
    }
    total * h * h / 9.0
}

fn big_factorial(n: usize) -> BigUint {
    (1..=n).fold(BigUint::from(1u32), |acc, k| acc * BigUint::from(k))
}

fn big_binomial(n: usize, k: usize) -> BigUint {
    big_factorial(n) / (big_factorial(k) * big_factorial(n - k))
}

/// `c_{p,r}(l)` in exact integer arithmetic.
pub fn cpr_bigint(p: usize, r: usize, l: usize) -> BigUint {
    BigUint::from(p * p)
        * big_factorial(l - 1)
        * big_binomial(p - 1, l - 1)
        * big_binomial(r - 1, l - 1)
        * big_factorial(p + r - 2 * l)
}

/// Maximal absolute row sum of the dense `ρ(v)` matrix built from the public
/// one-based accessor.
pub fn theta_dense(model: &ProcessModel, v: i64, d: usize) -> f64 {
    let m = DMatrix::from_fn(d, d, |r, s| model.rho(r + 1, s + 1, v).expect("index in range"));
    (0..d).map(|r| m.row(r).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn dense_kernels(b: &ChaosCoefficients, p: usize, d: usize) -> Vec<Vec<f64>> {
    let tuples = ordered_tuples(d, p);
    (0..b.output_dim).map(|i| tuples.iter().map(|t| b.kernel(i, t)).collect()).collect()
}

/// `Σ_{i,j} ‖h̃_{p,n,i} ⊗_l h̃_{r,n,j}‖²` by the literal quadruple time sum
/// over all ordered tuples, with no symmetry or stationarity shortcuts.
pub fn contraction_brute_force(
    b: &ChaosCoefficients,
    model: &ProcessModel,
    p: usize,
    r: usize,
    l: usize,
    n: usize,
) -> f64 {
    let d = b.input_dim;
    let tp = ordered_tuples(d, p);
    let tr = ordered_tuples(d, r);
    let bp = dense_kernels(b, p, d);
    let br = dense_kernels(b, r, d);
    let rho = |x: usize, y: usize, v: i64| model.rho0(x, y, v);
    let mut total = 0.0;
    for i in 0..b.output_dim {
        for j in 0..b.output_dim {
            for k1 in 0..n as i64 {
                for k2 in 0..n as i64 {
                    for k3 in 0..n as i64 {
                        for k4 in 0..n as i64 {
                            let mut acc = 0.0;
                            for (a1, r1) in tp.iter().enumerate() {
                                let c1 = bp[i][a1];
                                if c1 == 0.0 {
                                    continue;
                                }
                                for (a2, s1) in tr.iter().enumerate() {
                                    let c2 = br[j][a2];
                                    if c2 == 0.0 {
                                        continue;
                                    }
                                    let f12: f64 = (0..l).map(|m| rho(r1[m], s1[m], k2 - k1)).product();
                                    if f12 == 0.0 {
                                        continue;
                                    }
                                    for (a3, r2) in tp.iter().enumerate() {
                                        let c3 = bp[i][a3];
                                        if c3 == 0.0 {
                                            continue;
                                        }
                                        let f13: f64 = (l..p).map(|m| rho(r1[m], r2[m], k3 - k1)).product();
                                        for (a4, s2) in tr.iter().enumerate() {
                                            let c4 = br[j][a4];
                                            if c4 == 0.0 {
                                                continue;
                                            }
                                            let f34: f64 = (0..l).map(|m| rho(r2[m], s2[m], k4 - k3)).product();
                                            let f24: f64 = (l..r).map(|m| rho(s1[m], s2[m], k4 - k2)).product();
                                            acc += c1 * c2 * c3 * c4 * f12 * f34 * f13 * f24;
                                        }
                                    }
                                }
                            }
                            total += acc;
                        }
                    }
                }
            }
        }
    }
    total / (n * n) as f64
}

/// Same quantity from explicit tensors: the Gaussian coordinates
/// `ε_{x,k}` are realized as rows of a Cholesky factor of the `nD x nD`
/// score covariance, the kernels `h̃` are materialized in `(ℝ^{nD})^{⊗p}`,
/// and the first `l` slots are contracted numerically.
pub fn contraction_materialized(
    b: &ChaosCoefficients,
    model: &ProcessModel,
    p: usize,
    r: usize,
    l: usize,
    n: usize,
) -> Option<f64> {
    let d = b.input_dim;
    let big = n * d;
    let sigma = DMatrix::from_fn(big, big, |a, c| {
        let (k, x) = (a / d, a % d);
        let (k2, y) = (c / d, c % d);
        model.rho0(x, y, k2 as i64 - k as i64)
    });
    // Small ridge so semidefinite covariances still factor; its effect is
    // far below test tolerances at these sizes.
    let ridge = DMatrix::<f64>::identity(big, big) * 1e-14;
    let chol = (sigma + ridge).cholesky()?;
    let lower = chol.l();
    let eps = |k: usize, x: usize| -> Vec<f64> { lower.row(k * d + x).iter().copied().collect() };

    let materialize = |order: usize, i: usize| -> Vec<f64> {
        let size = big.pow(order as u32);
        let mut h = vec![0.0; size];
        let scale = 1.0 / (n as f64).sqrt();
        for t in ordered_tuples(d, order) {
            let c = b.kernel(i, &t);
            if c == 0.0 {
                continue;
            }
            for k in 0..n {
                let mut prod = vec![c * scale];
                for &x in &t {
                    let e = eps(k, x);
                    prod = prod.iter().flat_map(|a| e.iter().map(move |y| a * y)).collect();
                }
                for (dst, src) in h.iter_mut().zip(&prod) {
                    *dst += src;
                }
            }
        }
        h
    };

    let left = big.pow(l as u32);
    let rest_p = big.pow((p - l) as u32);
    let rest_r = big.pow((r - l) as u32);
    let mut total = 0.0;
    let hp: Vec<Vec<f64>> = (0..b.output_dim).map(|i| materialize(p, i)).collect();
    let hr: Vec<Vec<f64>> = (0..b.output_dim).map(|j| materialize(r, j)).collect();
    for hi in &hp {
        for hj in &hr {
            for x in 0..rest_p {
                for y in 0..rest_r {
                    let mut c = 0.0;
                    for u in 0..left {
                        c += hi[u * rest_p + x] * hj[u * rest_r + y];
                    }
                    total += c * c;
                }
            }
        }
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wick_basics() {
        let lam = [2.0];
        let cov = diag_cov(&lam);
        assert_eq!(wick_moment(&[0, 0, 0, 0], &cov), 12.0);
        assert_eq!(wick_moment(&[0, 0, 0], &cov), 0.0);
        assert_eq!(wick_moment(&[0; 6], &cov), 15.0 * 8.0);
    }

    #[test]
    fn explicit_hermite_low_orders() {
        assert_eq!(hermite_explicit(0, 3.0), 1.0);
        assert_eq!(hermite_explicit(2, 3.0), 8.0);
        assert!((hermite_explicit(3, 2.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_integral() {
        assert!((double_integral_min_squared(400) - 1.0 / 6.0).abs() < 1e-5);
    }
}
