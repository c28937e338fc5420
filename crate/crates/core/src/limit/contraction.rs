//! Contraction norms `Σ_{i,j} ‖h̃_{p,n,i} ⊗_l h̃_{r,n,j}‖²` for diagonal
//! score correlations.
//!
//! With `ρ` diagonal, the inner products over the contracted and free slots
//! force index equalities, leaving a sum over the three lag differences
//! `a = k2-k1`, `b = k4-k3`, `c = k3-k1` weighted by the number of time
//! quadruples realizing them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hermite::ChaosCoefficients;
use crate::models::ProcessModel;

pub const MAX_ORDER: usize = 3;
pub const MAX_INPUT_DIM: usize = 8;

fn dense(b: &ChaosCoefficients, p: usize) -> Vec<Vec<f64>> {
    let d = b.input_dim;
    let size = d.pow(p as u32);
    (0..b.output_dim)
        .map(|i| {
            (0..size)
                .map(|flat| {
                    let mut t = vec![0; p];
                    let mut rem = flat;
                    for slot in (0..p).rev() {
                        t[slot] = rem % d;
                        rem /= d;
                    }
                    b.kernel(i, &t)
                })
                .collect()
        })
        .collect()
}

fn decode(flat: usize, len: usize, d: usize) -> Vec<usize> {
    let mut t = vec![0; len];
    let mut rem = flat;
    for slot in (0..len).rev() {
        t[slot] = rem % d;
        rem /= d;
    }
    t
}

/// Number of `k1 ∈ [0, n)` with all of `k1, k1+a, k1+c, k1+c+b` in `[0, n)`.
fn quadruple_count(n: i64, a: i64, b: i64, c: i64) -> i64 {
    let pts = [0, a, c, c + b];
    let hi = *pts.iter().max().unwrap();
    let lo = *pts.iter().min().unwrap();
    (n - (hi - lo)).max(0)
}

/// Lags beyond `v_max` are dropped; with `v_max ≥ n - 1` the result is exact.
pub fn contraction_norm(
    b: &ChaosCoefficients,
    model: &ProcessModel,
    p: usize,
    r: usize,
    l: usize,
    n: usize,
    v_max: usize,
) -> Result<f64> {
    if p > MAX_ORDER || r > MAX_ORDER || b.input_dim > MAX_INPUT_DIM {
        return Err(Error::EnvelopeExceeded(format!(
            "contraction supports p, r ≤ {MAX_ORDER} and D ≤ {MAX_INPUT_DIM}; got p={p}, r={r}, D={}",
            b.input_dim
        )));
    }
    if l == 0 || l > p.min(r) {
        return Err(Error::InvalidArgument(format!("contraction order {l} must lie in 1..={}", p.min(r))));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !model.is_diagonal() {
        return Err(Error::EnvelopeExceeded("contraction fast path needs a diagonal correlation".into()));
    }
    if b.input_dim > model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: b.input_dim });
    }
    let d = b.input_dim;
    let out = b.output_dim;
    let w = v_max.min(n - 1) as i64;
    let ni = n as i64;
    let bp = dense(b, p);
    let br = dense(b, r);
    let (sa, sb, sd) = (d.pow(l as u32), d.pow((p - l) as u32), d.pow((r - l) as u32));

    let lags: Vec<i64> = (-w..=w).collect();
    let rho = |x: usize, v: i64| model.rho_diag0(x, v);
    let prod_over = |len: usize, size: usize, v: i64| -> Vec<f64> {
        (0..size).map(|f| decode(f, len, d).iter().map(|&x| rho(x, v)).product()).collect()
    };
    let idx = |v: i64| (v + w) as usize;
    let r_beta: Vec<Vec<f64>> = lags.iter().map(|&v| prod_over(p - l, sb, v)).collect();
    let r_delta: Vec<Vec<f64>> = lags.iter().map(|&v| prod_over(r - l, sd, v)).collect();

    // M_a[(i, j)][(β, δ)] = Σ_α b_{i,(α,β)} b_{j,(α,δ)} Π ρ_{α_m α_m}(a)
    let m_tables: Vec<Vec<f64>> = lags
        .par_iter()
        .map(|&a| {
            let pa = prod_over(l, sa, a);
            let mut m = vec![0.0; out * out * sb * sd];
            for i in 0..out {
                for j in 0..out {
                    let base = (i * out + j) * sb * sd;
                    for (alpha, &wa) in pa.iter().enumerate() {
                        if wa == 0.0 {
                            continue;
                        }
                        for beta in 0..sb {
                            let x = bp[i][alpha * sb + beta];
                            if x == 0.0 {
                                continue;
                            }
                            for delta in 0..sd {
                                m[base + beta * sd + delta] += wa * x * br[j][alpha * sd + delta];
                            }
                        }
                    }
                }
            }
            m
        })
        .collect();

    let c_range = |a: i64, bl: i64| -> (i64, i64) {
        if p > l {
            (-w, w)
        } else if r > l {
            (a - bl - w, a - bl + w)
        } else {
            (-(ni - 1), ni - 1)
        }
    };

    let partials: Vec<f64> = lags
        .par_iter()
        .map(|&a| {
            let ma = &m_tables[idx(a)];
            let mut acc = 0.0;
            let mut nab = vec![0.0; sb * sd];
            for &bl in &lags {
                let mb = &m_tables[idx(bl)];
                nab.iter_mut().for_each(|x| *x = 0.0);
                for ij in 0..out * out {
                    let off = ij * sb * sd;
                    for (k, slot) in nab.iter_mut().enumerate() {
                        *slot += ma[off + k] * mb[off + k];
                    }
                }
                if nab.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let (lo, hi) = c_range(a, bl);
                for c in lo.max(-(ni - 1))..=hi.min(ni - 1) {
                    let dl = c + bl - a;
                    if r > l && dl.abs() > w {
                        continue;
                    }
                    let count = quadruple_count(ni, a, bl, c);
                    if count == 0 {
                        continue;
                    }
                    let rc: &[f64] = if p > l { &r_beta[idx(c)] } else { &r_beta[0] };
                    let rd: &[f64] = if r > l { &r_delta[idx(dl)] } else { &r_delta[0] };
                    let mut s = 0.0;
                    for (beta, &x) in rc.iter().enumerate() {
                        if x == 0.0 {
                            continue;
                        }
                        let row = &nab[beta * sd..(beta + 1) * sd];
                        s += x * row.iter().zip(rd).map(|(u, v)| u * v).sum::<f64>();
                    }
                    acc += count as f64 * s;
                }
            }
            acc
        })
        .collect();
    Ok(partials.iter().sum::<f64>() / (n * n) as f64)
}

/// Right-hand side of the contraction inequality with the constant 4,
/// from a dense `θ` table over `|v| ≤ horizon`.
pub fn contraction_upper_bound(
    b: &ChaosCoefficients,
    model: &ProcessModel,
    p: usize,
    r: usize,
    l: usize,
    n: usize,
    horizon: usize,
) -> f64 {
    let table = super::condition::ThetaTable::new(model, b.input_dim, horizon.max(n));
    let full_p = table.pow_sum(p, 0, table.horizon());
    let nf = n as f64;
    let left = nf.powf(-1.0 + l as f64 / r as f64) * table.pow_sum(l, 0, n);
    let right = nf.powf(-1.0 + (r - l) as f64 / r as f64) * table.pow_sum(r - l, 0, n);
    4.0 * b.chaos_moment(p) * b.chaos_moment(r) * full_p * left * right
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{to_chaos_coefficients, HermiteCoefficients, MultiIndex};
    use crate::oracle;
    use crate::subordination::OperatorG;
    use approx::assert_relative_eq;

    fn eig_chaos(model: &ProcessModel) -> ChaosCoefficients {
        to_chaos_coefficients(&OperatorG::eigenvalue(model, 1).unwrap().closed_form(2).unwrap())
    }

    fn mixed_chaos() -> ChaosCoefficients {
        let mut c = HermiteCoefficients::new(3, 2, 2);
        c.insert(0, MultiIndex::new([(1, 2)]).unwrap(), 0.7, 0.0).unwrap();
        c.insert(0, MultiIndex::new([(1, 1), (2, 1)]).unwrap(), -0.4, 0.0).unwrap();
        c.insert(1, MultiIndex::new([(2, 2)]).unwrap(), 0.5, 0.0).unwrap();
        c.insert(1, MultiIndex::new([(1, 2), (2, 1)]).unwrap(), 0.3, 0.0).unwrap();
        c.insert(0, MultiIndex::new([(2, 3)]).unwrap(), 0.2, 0.0).unwrap();
        to_chaos_coefficients(&c)
    }

    #[test]
    fn matches_brute_force_eigenvalue() {
        let arh = ProcessModel::arh1(vec![0.5], vec![1.0]).unwrap();
        let b = eig_chaos(&arh);
        for n in [1, 2, 5, 9] {
            let fast = contraction_norm(&b, &arh, 2, 2, 1, n, n).unwrap();
            let slow = oracle::contraction_brute_force(&b, &arh, 2, 2, 1, n);
            assert_relative_eq!(fast, slow, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn matches_brute_force_mixed_orders() {
        let arh = ProcessModel::arh1(vec![0.6, 0.3], vec![1.0, 0.5]).unwrap();
        let b = mixed_chaos();
        for (p, r, l) in [(2, 2, 1), (2, 2, 2), (2, 3, 1), (3, 2, 2), (3, 3, 2), (3, 3, 1)] {
            let n = 6;
            let fast = contraction_norm(&b, &arh, p, r, l, n, n).unwrap();
            let slow = oracle::contraction_brute_force(&b, &arh, p, r, l, n);
            assert_relative_eq!(fast, slow, max_relative = 1e-11, epsilon = 1e-14);
        }
    }

    #[test]
    fn matches_materialized_tensors() {
        let arh = ProcessModel::arh1(vec![0.5, 0.25], vec![1.0, 0.5]).unwrap();
        let b = mixed_chaos();
        for (p, r, l) in [(2, 2, 1), (2, 3, 1), (2, 2, 2)] {
            let n = 3;
            let fast = contraction_norm(&b, &arh, p, r, l, n, n).unwrap();
            let mat = oracle::contraction_materialized(&b, &arh, p, r, l, n).unwrap();
            assert_relative_eq!(fast, mat, max_relative = 1e-6, epsilon = 1e-10);
        }
    }

    #[test]
    fn below_upper_bound() {
        let arh = ProcessModel::arh1(vec![0.5], vec![1.0]).unwrap();
        let b = eig_chaos(&arh);
        for n in [4, 16, 64] {
            let c = contraction_norm(&b, &arh, 2, 2, 1, n, 64).unwrap();
            let ub = contraction_upper_bound(&b, &arh, 2, 2, 1, n, 512);
            assert!(c <= ub, "n={n}: {c} > {ub}");
        }
    }

    #[test]
    fn decays_for_short_memory() {
        let arh = ProcessModel::arh1(vec![0.5], vec![1.0]).unwrap();
        let b = eig_chaos(&arh);
        let c16 = contraction_norm(&b, &arh, 2, 2, 1, 16, 40).unwrap();
        let c256 = contraction_norm(&b, &arh, 2, 2, 1, 256, 40).unwrap();
        assert!(c256 < c16 / 8.0);
    }

    #[test]
    fn envelope_and_arguments() {
        let arh = ProcessModel::arh1(vec![0.5], vec![1.0]).unwrap();
        let b = eig_chaos(&arh);
        assert!(matches!(contraction_norm(&b, &arh, 4, 2, 1, 4, 4), Err(Error::EnvelopeExceeded(_))));
        assert!(contraction_norm(&b, &arh, 2, 2, 0, 4, 4).is_err());
        assert!(contraction_norm(&b, &arh, 2, 2, 3, 4, 4).is_err());
        assert!(contraction_norm(&b, &arh, 2, 2, 1, 0, 4).is_err());
    }
}
