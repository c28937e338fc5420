//! Brute-force reference values for the fast kernels.

use std::path::Path;

use hclt_core::hermite::{hermite_eval, to_chaos_coefficients, ChaosCoefficients, HermiteCoefficients, MultiIndex};
use hclt_core::limit::{contraction_norm, cpr_constant, limit_covariance_chaos, theta};
use hclt_core::models::brownian_eigenvalue;
use hclt_core::{oracle as refs, BetaFn, OperatorG, ProcessModel, Result};
use serde::Serialize;

use crate::output::{create_run_dir, num, write_csv, write_json};
use crate::spec::SCHEMA_VERSION;
use crate::{Outcome, EXIT_MALFORMED, EXIT_OK};

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub reference: f64,
    pub computed: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: impl Into<String>, reference: f64, computed: f64, tolerance: f64) -> OracleCheck {
    let abs_error = (reference - computed).abs();
    let rel_error = if reference != 0.0 { abs_error / reference.abs() } else { abs_error };
    OracleCheck { name: name.into(), reference, computed, abs_error, rel_error, tolerance, pass: rel_error <= tolerance }
}

fn closed_chaos(g: &OperatorG) -> ChaosCoefficients {
    to_chaos_coefficients(&g.closed_form(2).expect("closed form"))
}

fn mixed_chaos() -> Result<ChaosCoefficients> {
    let mut c = HermiteCoefficients::new(3, 2, 2);
    c.insert(0, MultiIndex::new([(1, 2)])?, 0.7, 0.0)?;
    c.insert(0, MultiIndex::new([(1, 1), (2, 1)])?, -0.4, 0.0)?;
    c.insert(1, MultiIndex::new([(2, 2)])?, 0.5, 0.0)?;
    c.insert(1, MultiIndex::new([(1, 2), (2, 1)])?, 0.3, 0.0)?;
    c.insert(0, MultiIndex::new([(2, 3)])?, 0.2, 0.0)?;
    Ok(to_chaos_coefficients(&c))
}

pub fn oracle_checks() -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();
    for n in 0..=10 {
        for x in [-2.5, 0.3, 1.7] {
            out.push(check(format!("hermite H_{n}({x})"), refs::hermite_explicit(n, x), hermite_eval(n, x), 1e-12));
        }
    }

    let lam = vec![1.0, 0.5, 0.25];
    let iid = ProcessModel::iid(lam.clone())?;
    let id = closed_chaos(&OperatorG::identity(&iid));
    out.push(check("wick second moment identity", refs::wick_identity_second_moment(&lam), id.chaos_moments().iter().sum(), 1e-12));
    let cov = closed_chaos(&OperatorG::sample_covariance(&iid));
    out.push(check("wick second moment covariance", refs::wick_covariance_second_moment(&lam), cov.chaos_moments().iter().sum(), 1e-12));
    for j in 1..=3 {
        let e = closed_chaos(&OperatorG::eigenvalue(&iid, j)?);
        out.push(check(
            format!("wick second moment eigenvalue {j}"),
            refs::wick_eigenvalue_second_moment(&lam, j),
            e.chaos_moments().iter().sum(),
            1e-12,
        ));
    }

    let tz = limit_covariance_chaos(&cov, &iid, 4)?;
    let d = lam.len();
    let covf = |x: usize, y: usize| if x == y { lam[x] } else { 0.0 };
    let mut worst = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    let want = refs::wick_moment(&[a, b, c, e], &covf) - covf(a, b) * covf(c, e);
                    worst = worst.max((tz.get(a * d + b, c * d + e) - want).abs());
                }
            }
        }
    }
    out.push(check("covariance limit vs wick, max entry error", 0.0, worst, 1e-12));

    for p in 1..=6 {
        for r in 1..=6 {
            for l in 1..=p.min(r) {
                let exact: f64 = refs::cpr_bigint(p, r, l).to_string().parse().expect("integer");
                out.push(check(format!("c_{{{p},{r}}}({l})"), exact, cpr_constant(p, r, l)?, 0.0));
            }
        }
    }

    let nys = refs::nystrom_brownian_eigenvalues(512);
    for (j, val) in nys.iter().take(5).enumerate() {
        out.push(check(format!("brownian eigenvalue {}", j + 1), brownian_eigenvalue(j + 1), *val, 1e-3));
    }

    let models = [
        ("arh1", ProcessModel::arh1(vec![0.7, 0.4, 0.1], vec![1.0, 0.5, 0.2])?),
        ("mdep", ProcessModel::m_dependent(vec![1.0, 0.5, 0.25], vec![1.0, 0.6, 0.3])?),
        ("power", ProcessModel::decoupled(BetaFn::Power(0.8), vec![1.0, 0.5, 0.2])?),
    ];
    for (label, m) in &models {
        for v in [-3i64, 0, 1, 7] {
            out.push(check(format!("theta {label} v={v}"), refs::theta_dense(m, v, 3), theta(m, v, 3), 0.0));
        }
    }

    let arh = ProcessModel::arh1(vec![0.5], vec![1.0])?;
    let eig = closed_chaos(&OperatorG::eigenvalue(&arh, 1)?);
    for n in [5, 10, 20] {
        out.push(check(
            format!("contraction eigenvalue p=r=2 l=1 n={n}"),
            refs::contraction_brute_force(&eig, &arh, 2, 2, 1, n),
            contraction_norm(&eig, &arh, 2, 2, 1, n, n)?,
            1e-10,
        ));
    }
    let arh2 = ProcessModel::arh1(vec![0.6, 0.3], vec![1.0, 0.5])?;
    let mixed = mixed_chaos()?;
    for (p, r, l) in [(2, 2, 1), (2, 3, 1), (3, 3, 2)] {
        let n = 6;
        out.push(check(
            format!("contraction mixed p={p} r={r} l={l} n={n}"),
            refs::contraction_brute_force(&mixed, &arh2, p, r, l, n),
            contraction_norm(&mixed, &arh2, p, r, l, n, n)?,
            1e-10,
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct OracleReport<'a> {
    schema_version: u32,
    command: &'static str,
    all_pass: bool,
    checks: &'a [OracleCheck],
}

pub fn run_oracle(root: &Path) -> Result<Outcome> {
    let checks = oracle_checks()?;
    let all_pass = checks.iter().all(|c| c.pass);
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} oracle checks, {failed} failed", checks.len());
    for c in checks.iter().filter(|c| !c.pass) {
        println!("  FAIL {}: reference {:e}, computed {:e}", c.name, c.reference, c.computed);
    }
    let dir = create_run_dir(root, "oracle", 0)?;
    let rows = checks.iter().map(|c| {
        vec![
            c.name.clone(),
            num(c.reference),
            num(c.computed),
            num(c.abs_error),
            num(c.rel_error),
            num(c.tolerance),
            c.pass.to_string(),
        ]
    });
    write_csv(&dir.join("oracle.csv"), &["name", "reference", "computed", "abs_error", "rel_error", "tolerance", "pass"], rows)?;
    write_json(&dir.join("report.json"), &OracleReport { schema_version: SCHEMA_VERSION, command: "oracle", all_pass, checks: &checks })?;
    Ok(Outcome::new(if all_pass { EXIT_OK } else { EXIT_MALFORMED }, dir))
}
