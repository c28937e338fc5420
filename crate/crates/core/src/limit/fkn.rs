//! Correction term of the continuous-time covariance:
//! `Cov(V_n(t), V_n(s)) = T_B(t, s) T_Z + Σ_k f_{k,n}(t, s) C_k` with
//! `T_B(t, s) = t ∧ s`.

use crate::error::{Error, Result};

/// `f_{k,n}(t, s)` for `|k| < n` and `t, s ∈ [0, 1]`.
pub fn f_kn(k: i64, n: usize, t: f64, s: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if k.unsigned_abs() as usize >= n {
        return Err(Error::InvalidArgument(format!("lag {k} outside (-{n}, {n})")));
    }
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("times ({t}, {s}) outside [0, 1]")));
    }
    let nf = n as f64;
    let m = t.min(s);
    let floor_over = |x: f64| (nf * x).floor() / nf;
    if k == 0 {
        return Ok(floor_over(m) - m);
    }
    let kn = k as f64 / nf;
    let ak = k.unsigned_abs() as f64 / nf;
    let v = if t - s > kn {
        floor_over(s) - m + m * ak + if k <= -1 { kn } else { 0.0 }
    } else {
        floor_over(t) - m + m * ak - if k >= 1 { kn } else { 0.0 }
    };
    Ok(v)
}

/// Number of pairs `k1 ≤ ⌊nt⌋`, `k2 ≤ ⌊ns⌋` with `k1 - k2 = k`, over `n`.
pub fn lag_pair_fraction(k: i64, n: usize, t: f64, s: f64) -> f64 {
    let nf = n as f64;
    let a = (nf * t).floor() as i64;
    let b = (nf * s).floor() as i64;
    let lo = 1.max(1 - k);
    let hi = b.min(a - k);
    (hi - lo + 1).max(0) as f64 / nf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lag_zero_vanishes_on_grid() {
        for n in [4usize, 10] {
            for i in 0..=n {
                let t = i as f64 / n as f64;
                assert!(f_kn(0, n, t, 1.0).unwrap().abs() < 1e-15);
            }
        }
        assert!(f_kn(5, 5, 0.5, 0.5).is_err());
        assert!(f_kn(0, 0, 0.5, 0.5).is_err());
        assert!(f_kn(1, 5, 1.5, 0.5).is_err());
    }

    #[test]
    fn matches_pair_count_unless_clipped() {
        // The piecewise form counts `min(⌊ns⌋, ⌊nt⌋ - k) - max(1, 1 - k) + 1`
        // pairs without clipping at zero; it is exact whenever that count is
        // nonnegative.
        let n = 12usize;
        let pts: Vec<f64> = (0..=4 * n).map(|i| i as f64 / (4 * n) as f64).collect();
        for &t in &pts {
            for &s in &pts {
                for k in -(n as i64 - 1)..n as i64 {
                    let (a, b) = ((n as f64 * t).floor() as i64, (n as f64 * s).floor() as i64);
                    if b.min(a - k) - 1.max(1 - k) + 1 < 0 {
                        continue;
                    }
                    let m = t.min(s);
                    let want = lag_pair_fraction(k, n, t, s) - m * (1.0 - k.unsigned_abs() as f64 / n as f64);
                    let got = f_kn(k, n, t, s).unwrap();
                    assert!((got - want).abs() < 1e-12, "k={k} t={t} s={s}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn branch_choice_at_the_boundary() {
        // At t - s = k/n the branches agree; the second one is taken.
        let n = 8;
        let (t, s) = (0.75, 0.5);
        let k = 2;
        let second = (n as f64 * t).floor() / n as f64 - s + s * 2.0 / 8.0 - 2.0 / 8.0;
        let first = (n as f64 * s).floor() / n as f64 - s + s * 2.0 / 8.0;
        assert_eq!(f_kn(k, n, t, s).unwrap(), second);
        assert_eq!(first, second);
        assert_eq!(f_kn(1, n, t, s).unwrap(), s * 1.0 / 8.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100_000))]
        #[test]
        fn bounded(n in 2usize..200, kf in -1.0f64..1.0, t in 0.0f64..=1.0, s in 0.0f64..=1.0) {
            let k = (kf * (n as f64 - 1.0)).trunc() as i64;
            let v = f_kn(k, n, t, s).unwrap();
            let nf = n as f64;
            prop_assert!(v.abs() <= 3.0 * k.unsigned_abs() as f64 / nf + 1.0 / nf + 1e-12);
            if k == 0 {
                prop_assert!(v.abs() <= 1.0 / nf + 1e-12);
            }
        }
    }
}
