//! Limit covariance operators `T_Z`, `T_B` and `T_W = T_B ⊗ T_Z`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{factorial, ChaosCoefficients};
use crate::hilbert::{HilbertOperator, TensorOperator};
use crate::models::ProcessModel;
use crate::rng::tagged_stream;
use crate::subordination::OperatorG;

/// Distinct permutations of a sorted tuple, in lexicographic order.
pub fn distinct_permutations(sorted: &[usize]) -> Vec<Vec<usize>> {
    let mut cur = sorted.to_vec();
    cur.sort_unstable();
    let mut out = vec![cur.clone()];
    loop {
        let n = cur.len();
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot has a successor");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

/// `T_Z[i][j] = Σ_p p! Σ_{|v| ≤ V} Σ_{r,s} b_{i,r} b_{j,s} Π_m ρ_{r_m s_m}(v)`.
pub fn limit_covariance_chaos(b: &ChaosCoefficients, model: &ProcessModel, v_max: usize) -> Result<HilbertOperator> {
    if b.input_dim > model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: b.input_dim });
    }
    let out = b.output_dim;
    let lags: Vec<i64> = (-(v_max as i64)..=v_max as i64).collect();
    let mut t = HilbertOperator::zeros(out);
    for p in 1..=b.order_cap() {
        let pf = factorial(p);
        let entries = b.order(p);
        if model.is_diagonal() {
            let mut groups: BTreeMap<&[usize], Vec<(usize, f64, f64)>> = BTreeMap::new();
            for e in entries {
                groups.entry(e.tuple.as_slice()).or_default().push((e.i, e.b, e.multiplicity));
            }
            for (tuple, members) in groups {
                let s: f64 = lags
                    .iter()
                    .map(|&v| tuple.iter().map(|&x| model.rho_diag0(x, v)).product::<f64>())
                    .sum();
                for &(i, bi, mult) in &members {
                    for &(j, bj, _) in &members {
                        t.add_to(i, j, pf * mult * bi * bj * s);
                    }
                }
            }
        } else {
            let perms: Vec<Vec<Vec<usize>>> = entries.iter().map(|e| distinct_permutations(&e.tuple)).collect();
            for ei in entries {
                for (ej, pj) in entries.iter().zip(&perms) {
                    let mut s = 0.0;
                    for &v in &lags {
                        for sigma in pj {
                            s += ei.tuple.iter().zip(sigma).map(|(&x, &y)| model.rho0(x, y, v)).product::<f64>();
                        }
                    }
                    t.add_to(ei.i, ej.i, pf * ei.multiplicity * ei.b * ej.b * s);
                }
            }
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCovariance {
    pub estimate: HilbertOperator,
    pub stderr: HilbertOperator,
    pub replications: usize,
    pub path_len: usize,
    pub v_max: usize,
}

/// Per-replication estimate of `Σ_{|v| ≤ V} E G[X_1] ⊗ G[X_{1+v}]` from a
/// path of length `V + max(64, V)`, averaged over `replications`.
pub fn limit_covariance_mc(
    g: &OperatorG,
    model: &ProcessModel,
    v_max: usize,
    replications: usize,
    seed: u64,
) -> Result<McCovariance> {
    if replications < 2 {
        return Err(Error::InvalidArgument("need at least two replications".into()));
    }
    if g.input_dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: g.input_dim() });
    }
    let path_len = v_max + v_max.max(64);
    let out = g.output_dim();
    let roots: Vec<f64> = model.spectrum().iter().map(|l| l.sqrt()).collect();
    let per_rep: Vec<Result<Vec<f64>>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = tagged_stream(seed, "limit-cov-mc", rep as u64);
            let path = model.simulate_path_with(path_len, &mut rng)?;
            let mut gs = vec![0.0; path_len * out];
            let mut x = vec![0.0; roots.len()];
            for (k, row) in path.rows().enumerate() {
                for (xi, (s, r)) in x.iter_mut().zip(row.iter().zip(&roots)) {
                    *xi = s * r;
                }
                let dst = &mut gs[k * out..(k + 1) * out];
                g.apply_into(&x, dst);
                for (d, m) in dst.iter_mut().zip(g.mean()) {
                    *d -= m;
                }
            }
            let mut est = vec![0.0; out * out];
            for v in 0..=v_max.min(path_len - 1) {
                let count = path_len - v;
                let mut c = vec![0.0; out * out];
                for t in 0..count {
                    let a = &gs[t * out..(t + 1) * out];
                    let b = &gs[(t + v) * out..(t + v + 1) * out];
                    for i in 0..out {
                        for j in 0..out {
                            c[i * out + j] += a[i] * b[j];
                        }
                    }
                }
                let w = 1.0 / count as f64;
                for i in 0..out {
                    for j in 0..out {
                        est[i * out + j] += w * c[i * out + j];
                        if v > 0 {
                            est[i * out + j] += w * c[j * out + i];
                        }
                    }
                }
            }
            Ok(est)
        })
        .collect();
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let r = replications as f64;
    let mut mean = vec![0.0; out * out];
    for e in &per_rep {
        for (m, x) in mean.iter_mut().zip(e) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r);
    let mut var = vec![0.0; out * out];
    for e in &per_rep {
        for ((s, x), m) in var.iter_mut().zip(e).zip(&mean) {
            *s += (x - m).powi(2);
        }
    }
    let se: Vec<f64> = var.iter().map(|s| (s / (r - 1.0) / r).sqrt()).collect();
    Ok(McCovariance {
        estimate: HilbertOperator::from_row_major(out, mean)?,
        stderr: HilbertOperator::from_row_major(out, se)?,
        replications,
        path_len,
        v_max,
    })
}

/// Midpoint Nyström matrix of the kernel `s ∧ t` with weights `1/m`.
pub fn brownian_cov_operator(m: usize) -> Result<HilbertOperator> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be at least 2, got {m}")));
    }
    let mf = m as f64;
    let t: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / mf).collect();
    let mut op = HilbertOperator::zeros(m);
    for i in 0..m {
        for j in 0..m {
            op.set(i, j, t[i].min(t[j]) / mf);
        }
    }
    Ok(op)
}

pub fn tensor_limit_covariance(tb: HilbertOperator, tz: HilbertOperator) -> TensorOperator {
    TensorOperator::new(tb, tz)
}
