//! Quantitative bounds for the approximation of discrete partial sums by
//! the Gaussian limit.

use serde::{Deserialize, Serialize};

use super::condition::{ThetaTable, Verdict, DEFAULT_V_MAX};
use crate::error::{Error, Result};
use crate::hermite::{factorial, ChaosCoefficients};
use crate::models::ProcessModel;

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `c_{p,r}(l) = p² (l-1)! C(p-1, l-1) C(r-1, l-1) (p+r-2l)!`.
pub fn cpr_constant(p: usize, r: usize, l: usize) -> Result<f64> {
    if p == 0 || r == 0 || l == 0 || l > p.min(r) {
        return Err(Error::InvalidArgument(format!("need 1 ≤ l ≤ min(p, r), got p={p}, r={r}, l={l}")));
    }
    Ok((p * p) as f64
        * factorial(l - 1)
        * binomial(p - 1, l - 1)
        * binomial(r - 1, l - 1)
        * factorial(p + r - 2 * l))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub m: usize,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    /// `2 R1 + √(R2 + R3) + R4`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub q: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// `Σ_ℤ θ^q(v)`, horizon plus tail.
    pub theta_q_sum: f64,
    /// `E‖G^p‖²` for `p = 1..=cap`.
    pub chaos_moments: Vec<f64>,
    pub discarded_mass: f64,
    pub per_m: Vec<BoundTerms>,
    pub best_m: usize,
    /// Infimum of the total over the stored truncation levels.
    pub total: f64,
    /// False when a tail sum could not be certified and was taken as zero.
    pub certified: bool,
}

struct Sums {
    table: ThetaTable,
    tails: Vec<f64>,
    certified: bool,
}

impl Sums {
    fn new(model: &ProcessModel, d: usize, n: usize, v_max: usize, q: usize, p_max: usize) -> Result<Self> {
        let table = ThetaTable::new(model, d, n.max(v_max));
        let base = table.tail(q);
        let (tail_q, mut certified) = match base.verdict {
            Verdict::Fail => {
                return Err(Error::ConditionFailed(format!("Σ θ^{q} does not appear summable")));
            }
            Verdict::Indeterminate => (0.0, false),
            Verdict::Pass => (base.tail.unwrap_or(0.0), true),
        };
        let mut tails = vec![0.0; p_max + 1];
        for (e, slot) in tails.iter_mut().enumerate().skip(1) {
            *slot = if e < q {
                let t = table.tail(e);
                match (t.verdict, t.tail) {
                    (Verdict::Pass, Some(x)) => x,
                    _ => {
                        certified = false;
                        0.0
                    }
                }
            } else if e == q {
                tail_q
            } else {
                // θ ≤ 1 beyond K ≤ horizon, so θ^e ≤ θ^q in the tail.
                let t = table.tail(e);
                match (t.verdict, t.tail) {
                    (Verdict::Pass, Some(x)) => x.min(tail_q),
                    _ => tail_q,
                }
            };
        }
        Ok(Self { table, tails, certified })
    }

    fn full(&self, e: usize) -> f64 {
        self.table.pow_sum(e, 0, self.table.horizon()) + if e == 0 { 0.0 } else { self.tails[e] }
    }

    fn upto(&self, e: usize, n: usize) -> f64 {
        self.table.pow_sum(e, 0, n)
    }

    fn from(&self, e: usize, n: usize) -> f64 {
        self.table.pow_sum(e, n, self.table.horizon()) + self.tails[e]
    }
}

pub fn quantitative_bounds(b: &ChaosCoefficients, model: &ProcessModel, n: usize, max_m: usize, v_max: usize) -> Result<BoundReport> {
    quantitative_bounds_with_defect(b, model, n, max_m, v_max, 0.0)
}

/// `discarded_mass` adds coefficient mass known to lie beyond the stored
/// orders to the remainder term.
pub fn quantitative_bounds_with_defect(
    b: &ChaosCoefficients,
    model: &ProcessModel,
    n: usize,
    max_m: usize,
    v_max: usize,
    discarded_mass: f64,
) -> Result<BoundReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !(discarded_mass >= 0.0) {
        return Err(Error::InvalidArgument(format!("discarded mass must be nonnegative, got {discarded_mass}")));
    }
    let q = b.rank().ok_or(Error::RankUndetermined { threshold: 0.0 })?;
    let cap = b.order_cap();
    let max_m = max_m.min(cap).max(q);
    let v_max = if v_max == 0 { DEFAULT_V_MAX } else { v_max };
    let sums = Sums::new(model, b.input_dim, n, v_max, q, 2 * cap.max(1))?;
    let k = sums.table.k_constant().ok_or_else(|| {
        Error::ConditionFailed(format!("θ exceeds one at the horizon {}", sums.table.horizon()))
    })?;
    let moments = b.chaos_moments();
    let em = |p: usize| if p == 0 { 0.0 } else { moments.get(p - 1).copied().unwrap_or(0.0) };
    let nf = n as f64;
    let kf = k as f64;
    let theta_q = sums.full(q);

    let a_term = |p: usize, r: usize, s: usize| -> f64 {
        let rf = r as f64;
        em(p) * em(r)
            * sums.full(p)
            * nf.powf(-1.0 + s as f64 / rf)
            * sums.upto(s, n)
            * nf.powf(-1.0 + (r - s) as f64 / rf)
            * sums.upto(r - s, n)
    };

    let r4_inner = 2.0 * kf * (kf + 1.0) / nf + sums.table.weighted_pow_sum(q, 1, n) / nf + sums.from(q, n);

    let mut per_m = Vec::new();
    for m in q..=max_m {
        let high: f64 = (m + 1..=cap).map(em).sum::<f64>() + discarded_mass;
        let r1 = ((2.0 * kf + 2.0 * theta_q) * high).sqrt();
        let mut r2 = 0.0;
        for p in 1..=m {
            let inner: f64 = (1..p).map(|s| cpr_constant(p, p, s).unwrap().powi(2) * a_term(p, p, s)).sum();
            r2 += inner.sqrt();
        }
        let mut r3 = 0.0;
        for p in 1..=m {
            for r in 1..=m {
                if p == r {
                    continue;
                }
                let inner: f64 = (1..=p.min(r)).map(|s| cpr_constant(p, r, s).unwrap().powi(2) * a_term(p, r, s)).sum();
                r3 += inner.sqrt();
            }
        }
        let r4 = ((q..=m).map(em).sum::<f64>() * r4_inner).sqrt();
        let total = 2.0 * r1 + (r2 + r3).sqrt() + r4;
        per_m.push(BoundTerms { m, r1, r2, r3, r4, total });
    }
    let best = per_m
        .iter()
        .min_by(|x, y| x.total.total_cmp(&y.total))
        .expect("at least one truncation level")
        .clone();
    Ok(BoundReport {
        n,
        q,
        k,
        theta_q_sum: theta_q,
        chaos_moments: moments,
        discarded_mass,
        best_m: best.m,
        total: best.total,
        per_m,
        certified: sums.certified,
    })
}
