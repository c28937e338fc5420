//! Summability of score autocorrelations: `θ(v)`, `K`, and tail verdicts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ProcessModel;

/// Default lag horizon.
pub const DEFAULT_V_MAX: usize = 512;
/// Fitted geometric ratios at or above this are not trusted to converge.
pub const RATIO_INDETERMINATE: f64 = 0.999;
/// Power-law exponents at or above this pass; at or below 1 they fail.
pub const POWER_PASS: f64 = 1.1;
const ZERO_FLOOR: f64 = 1e-280;
const ZERO_RUN: usize = 16;
const K_TOLERANCE: f64 = 1e-12;

/// `θ(v) = max_{r ≤ D} Σ_{s ≤ D} |ρ_rs(v)|`.
pub fn theta(model: &ProcessModel, v: i64, d: usize) -> f64 {
    let d = d.min(model.dim());
    if model.is_diagonal() {
        return (0..d).map(|r| model.rho_diag0(r, v).abs()).fold(0.0, f64::max);
    }
    (0..d)
        .map(|r| (0..d).map(|s| model.rho0(r, s, v).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "model")]
pub enum TailFit {
    /// `θ^q(v) ≈ scale · ratio^v`.
    Geometric { ratio: f64, scale: f64, residual: f64 },
    /// `θ^q(v) ≈ scale · v^(-exponent)`.
    Power { exponent: f64, scale: f64, residual: f64 },
    /// The last lags vanish to floating-point precision.
    Vanishing,
    /// Too few positive values to fit.
    Unfit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailAnalysis {
    pub verdict: Verdict,
    /// Extrapolated `Σ_{v > horizon}` on one side, when the verdict is pass.
    pub tail: Option<f64>,
    pub fit: TailFit,
}

/// `θ(v)` tabulated for `|v| ≤ horizon`.
#[derive(Debug, Clone)]
pub struct ThetaTable {
    horizon: usize,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl ThetaTable {
    pub fn new(model: &ProcessModel, d: usize, horizon: usize) -> Self {
        let pos = (0..=horizon).map(|v| theta(model, v as i64, d)).collect();
        let neg = (0..=horizon).map(|v| theta(model, -(v as i64), d)).collect();
        Self { horizon, pos, neg }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn at(&self, v: i64) -> f64 {
        let a = v.unsigned_abs() as usize;
        if a > self.horizon {
            panic!("lag {v} beyond tabulated horizon {}", self.horizon);
        }
        if v >= 0 {
            self.pos[a]
        } else {
            self.neg[a]
        }
    }

    /// `Σ_{lo ≤ |v| ≤ hi} θ(v)^e` with `θ^0 = 1`.
    pub fn pow_sum(&self, e: usize, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.horizon);
        let term = |x: f64| if e == 0 { 1.0 } else { x.powi(e as i32) };
        let mut total = 0.0;
        for a in lo..=hi {
            total += term(self.pos[a]);
            if a > 0 {
                total += term(self.neg[a]);
            }
        }
        total
    }

    /// `Σ_{lo ≤ |v| ≤ hi} θ(v)^e |v|`.
    pub fn weighted_pow_sum(&self, e: usize, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.horizon);
        (lo.max(1)..=hi)
            .map(|a| a as f64 * (self.pos[a].powi(e as i32) + self.neg[a].powi(e as i32)))
            .sum()
    }

    /// Tail analysis of `θ^e` beyond the horizon, both sides combined.
    pub fn tail(&self, e: usize) -> TailAnalysis {
        let a = analyze_side(&self.pos, e);
        let b = analyze_side(&self.neg, e);
        let verdict = match (a.verdict, b.verdict) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Pass, Verdict::Pass) => Verdict::Pass,
            _ => Verdict::Indeterminate,
        };
        let tail = match (a.tail, b.tail) {
            (Some(x), Some(y)) if verdict == Verdict::Pass => Some(x + y),
            _ => None,
        };
        TailAnalysis { verdict, tail, fit: a.fit }
    }

    /// Smallest `k ≥ 1` with `θ(v) ≤ 1` for every `k ≤ |v| ≤ horizon`.
    pub fn k_constant(&self) -> Option<usize> {
        let bad = |a: usize| self.pos[a] > 1.0 + K_TOLERANCE || self.neg[a] > 1.0 + K_TOLERANCE;
        if self.horizon >= 1 && bad(self.horizon) {
            return None;
        }
        let last_bad = (1..=self.horizon).rev().find(|&a| bad(a));
        Some(last_bad.map_or(1, |a| a + 1))
    }
}

/// Least-squares line through `(x, y)`; returns (slope, intercept, rms).
fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

/// Fits the last decade of lags `[H/10, H]` of one side.
fn analyze_side(side: &[f64], e: usize) -> TailAnalysis {
    let horizon = side.len() - 1;
    let vals: Vec<f64> = side.iter().map(|t| t.powi(e as i32)).collect();
    let start = (horizon / 10).max(1);
    let unfit = TailAnalysis { verdict: Verdict::Indeterminate, tail: None, fit: TailFit::Unfit };
    if horizon < 2 {
        return unfit;
    }
    let run_start = horizon.saturating_sub(ZERO_RUN - 1).max(1);
    if vals[run_start..].iter().all(|&v| v < ZERO_FLOOR) {
        let monotone = vals[start..].windows(2).all(|w| w[1] <= w[0] || w[1] < ZERO_FLOOR);
        return if monotone {
            TailAnalysis { verdict: Verdict::Pass, tail: Some(0.0), fit: TailFit::Vanishing }
        } else {
            unfit
        };
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        (start..=horizon).filter(|&v| vals[v] >= ZERO_FLOOR).map(|v| (v as f64, vals[v].ln())).unzip();
    if xs.len() < 8 || xs.len() < (horizon - start + 1) / 2 {
        return unfit;
    }
    let logs: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let (g_slope, g_icpt, g_res) = fit_line(&xs, &ys);
    let (p_slope, p_icpt, p_res) = fit_line(&logs, &ys);
    let h = horizon as f64;
    if g_res <= p_res {
        let ratio = g_slope.exp();
        let scale = g_icpt.exp();
        let fit = TailFit::Geometric { ratio, scale, residual: g_res };
        if ratio >= 1.0 {
            TailAnalysis { verdict: Verdict::Fail, tail: None, fit }
        } else if ratio >= RATIO_INDETERMINATE {
            TailAnalysis { verdict: Verdict::Indeterminate, tail: None, fit }
        } else {
            let tail = scale * ratio.powf(h + 1.0) / (1.0 - ratio);
            TailAnalysis { verdict: Verdict::Pass, tail: Some(tail), fit }
        }
    } else {
        let exponent = -p_slope;
        let scale = p_icpt.exp();
        let fit = TailFit::Power { exponent, scale, residual: p_res };
        if exponent <= 1.0 {
            TailAnalysis { verdict: Verdict::Fail, tail: None, fit }
        } else if exponent < POWER_PASS {
            TailAnalysis { verdict: Verdict::Indeterminate, tail: None, fit }
        } else {
            let tail = scale * (h + 0.5).powf(1.0 - exponent) / (exponent - 1.0);
            TailAnalysis { verdict: Verdict::Pass, tail: Some(tail), fit }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub q: usize,
    pub v_max: usize,
    pub dim: usize,
    /// `θ(v)` for `|v| ≤ v_max`.
    pub theta_v: BTreeMap<i64, f64>,
    /// `Σ_{|v| ≤ v_max} θ(v)^q`.
    pub theta_sum: f64,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub tail_estimate: Option<f64>,
    pub theta_total: Option<f64>,
    pub fit: TailFit,
    pub verdict: Verdict,
}

pub fn check_condition(model: &ProcessModel, q: usize, v_max: usize, d: usize) -> Result<ConditionReport> {
    if q == 0 {
        return Err(Error::InvalidArgument("Hermite rank q must be at least 1".into()));
    }
    let table = ThetaTable::new(model, d, v_max);
    let theta_sum = table.pow_sum(q, 0, v_max);
    let tail = table.tail(q);
    let theta_v = (-(v_max as i64)..=v_max as i64).map(|v| (v, table.at(v))).collect();
    Ok(ConditionReport {
        q,
        v_max,
        dim: d.min(model.dim()),
        theta_v,
        theta_sum,
        k: table.k_constant(),
        tail_estimate: tail.tail,
        theta_total: tail.tail.map(|t| theta_sum + t),
        fit: tail.fit,
        verdict: tail.verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionComparison {
    /// `Σ_{|v| ≤ V} (max_{r,s} |ρ_rs(v)|)^q`.
    pub sup_rho_sum: f64,
    /// `Σ_{|v| ≤ V} θ(v)^q`.
    pub theta_sum: f64,
    pub ratio: f64,
}

pub fn compare_conditions(model: &ProcessModel, q: usize, v_max: usize, d: usize) -> ConditionComparison {
    let d = d.min(model.dim());
    let mut sup_rho = 0.0;
    let mut theta_q = 0.0;
    for v in -(v_max as i64)..=v_max as i64 {
        let sup = (0..d)
            .flat_map(|r| (0..d).map(move |s| (r, s)))
            .map(|(r, s)| model.rho0(r, s, v).abs())
            .fold(0.0, f64::max);
        sup_rho += sup.powi(q as i32);
        theta_q += theta(model, v, d).powi(q as i32);
    }
    ConditionComparison { sup_rho_sum: sup_rho, theta_sum: theta_q, ratio: theta_q / sup_rho }
}
