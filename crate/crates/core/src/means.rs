//! Logarithmic and harmonic means used as edge mobilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `|u| = |b-a|/(a+b)` the logarithmic mean switches to
/// its series expansion.
pub const LOG_MEAN_SERIES_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeanKind {
    Logarithmic,
    Harmonic,
}

impl MeanKind {
    /// Unchecked evaluation; callers guarantee `a, b >= 0`.
    #[inline]
    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            MeanKind::Logarithmic => log_mean(a, b),
            MeanKind::Harmonic => harmonic_mean(a, b),
        }
    }

    /// Unchecked partial derivatives; callers guarantee `a, b > 0`.
    #[inline]
    pub fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            MeanKind::Logarithmic => (log_mean_da(a, b), log_mean_da(b, a)),
            MeanKind::Harmonic => {
                let s = a + b;
                (2.0 * b * b / (s * s), 2.0 * a * a / (s * s))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeanKind::Logarithmic => "log",
            MeanKind::Harmonic => "harmonic",
        }
    }
}

impl std::str::FromStr for MeanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" | "logarithmic" => Ok(MeanKind::Logarithmic),
            "harm" | "harmonic" => Ok(MeanKind::Harmonic),
            other => Err(Error::Config(format!("unknown mean kind '{other}'"))),
        }
    }
}

/// Logarithmic mean `(b-a)/(log b - log a)`, with `θ(a,a) = a` and
/// `θ(0,t) = θ(t,0) = 0`.
#[inline]
pub fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    // ordering the arguments makes the result exactly symmetric
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let u = (hi - lo) / (hi + lo);
    if u < LOG_MEAN_SERIES_THRESHOLD {
        log_mean_series(0.5 * (lo + hi), u)
    } else {
        log_mean_direct(lo, hi)
    }
}

/// `(b-a)/log(b/a)` for `0 < a <= b`; `b - a` is exact near the diagonal
/// and `ln_1p` keeps the logarithm accurate there.
#[inline]
pub(crate) fn log_mean_direct(a: f64, b: f64) -> f64 {
    let d = b - a;
    d / (d / a).ln_1p()
}

/// `m / (1 + u²/3 + u⁴/5 + u⁶/7)`, the expansion of `m u / atanh(u)`.
#[inline]
pub(crate) fn log_mean_series(m: f64, u: f64) -> f64 {
    let u2 = u * u;
    m / (1.0 + u2 * (1.0 / 3.0 + u2 * (1.0 / 5.0 + u2 / 7.0)))
}

#[inline]
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    2.0 * (a * b) / (a + b)
}

/// `∂θ/∂a = ∫_0^1 (1-p) (b/a)^p dp = (e^r - 1 - r)/r²` with `r = log(b/a)`.
#[inline]
fn log_mean_da(a: f64, b: f64) -> f64 {
    let r = (b / a).ln();
    if r.abs() < 1e-2 {
        // Σ_{n≥0} r^n/(n+2)!
        let mut term = 0.5;
        let mut sum = 0.5;
        for n in 1..=9 {
            term *= r / (n as f64 + 2.0);
            sum += term;
        }
        sum
    } else {
        (r.exp_m1() - r) / (r * r)
    }
}

fn check_nonneg(a: f64, b: f64) -> Result<()> {
    if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "means need finite nonnegative arguments, got ({a}, {b})"
        )));
    }
    Ok(())
}

fn check_pos(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "positive finite arguments required, got ({a}, {b})"
        )));
    }
    Ok(())
}

pub fn mean(kind: MeanKind, a: f64, b: f64) -> Result<f64> {
    check_nonneg(a, b)?;
    Ok(kind.eval(a, b))
}

pub fn mean_partials(kind: MeanKind, a: f64, b: f64) -> Result<(f64, f64)> {
    check_pos(a, b)?;
    Ok(kind.partials(a, b))
}

/// Both sides of `1/θ̃(a,b) - 1/θ(a,b) <= ((b-a)²/(ab)) / θ̃(a,b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanGapCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
}

pub fn mean_gap_bound_holds(a: f64, b: f64) -> Result<MeanGapCheck> {
    check_pos(a, b)?;
    let inv_h = 1.0 / harmonic_mean(a, b);
    let lhs = inv_h - 1.0 / log_mean(a, b);
    let rhs = (b - a).powi(2) / (a * b) * inv_h;
    // The left side is a difference of nearly equal numbers; allow its rounding.
    let round = 4.0 * f64::EPSILON * inv_h;
    Ok(MeanGapCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + round,
        slack: rhs - lhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Gauss–Legendre quadrature of `∫_0^1 a^{1-p} b^p dp`.
    fn log_mean_quadrature(a: f64, b: f64) -> f64 {
        let nodes = [
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
            (0.0, 0.568_888_888_888_888_9),
            (0.538_469_310_105_683, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let panels = 200;
        let h = 1.0 / panels as f64;
        let mut sum = 0.0;
        for k in 0..panels {
            let mid = (k as f64 + 0.5) * h;
            for (x, w) in nodes {
                let p = mid + 0.5 * h * x;
                sum += 0.5 * h * w * a.powf(1.0 - p) * b.powf(p);
            }
        }
        sum
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(mean(MeanKind::Logarithmic, 1.0, 1.0).unwrap(), 1.0);
        let e = std::f64::consts::E;
        let v = mean(MeanKind::Logarithmic, 1.0, e).unwrap();
        assert!((v - (e - 1.0)).abs() < 1e-14);
        assert!((v - log_mean_quadrature(1.0, e)).abs() < 1e-12);
        assert_eq!(mean(MeanKind::Harmonic, 1.0, 3.0).unwrap(), 1.5);
        assert_eq!(mean(MeanKind::Logarithmic, 0.0, 3.0).unwrap(), 0.0);
        assert_eq!(mean(MeanKind::Harmonic, 2.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(mean(MeanKind::Logarithmic, -1.0, 1.0).is_err());
        assert!(mean(MeanKind::Harmonic, 1.0, f64::NAN).is_err());
        assert!(mean_partials(MeanKind::Logarithmic, 0.0, 1.0).is_err());
        assert!(mean_gap_bound_holds(0.0, 1.0).is_err());
    }

    #[test]
    fn partials_on_diagonal() {
        for a in [1e-3, 0.7, 1.0, 42.0] {
            let (da, db) = mean_partials(MeanKind::Logarithmic, a, a).unwrap();
            assert!((da - 0.5).abs() < 1e-15 && (db - 0.5).abs() < 1e-15);
        }
        let (da, _) = mean_partials(MeanKind::Harmonic, 1.0, 1.0).unwrap();
        assert_eq!(da, 0.5);
    }

    #[test]
    fn partial_at_one_e_matches_central_difference() {
        let e = std::f64::consts::E;
        let h = 1e-6;
        let fd = (log_mean(1.0 + h, e) - log_mean(1.0 - h, e)) / (2.0 * h);
        let (da, _) = mean_partials(MeanKind::Logarithmic, 1.0, e).unwrap();
        // closed form (θ/a - 1)/log(b/a) = (e - 2)
        assert!((da - (e - 2.0)).abs() < 1e-14);
        assert!((da - fd).abs() / da < 1e-8);
    }

    #[test]
    fn mean_gap_examples() {
        let c = mean_gap_bound_holds(1.0, 1.0).unwrap();
        assert!(c.holds && c.lhs.abs() < 1e-15 && c.rhs == 0.0);
        let c = mean_gap_bound_holds(1.0, 2.0).unwrap();
        assert!((c.lhs - (0.75 - 2f64.ln())).abs() < 1e-14);
        assert!((c.rhs - 0.375).abs() < 1e-15);
        assert!(c.holds);
        let c = mean_gap_bound_holds(1.0, 100.0).unwrap();
        assert!(c.holds && c.slack > 0.0);
    }

    #[test]
    fn series_branch_matches_direct_at_crossover() {
        for m in [1e-6, 1.0, 3.7e5] {
            for u in [0.99e-4, 1e-4, 1.01e-4] {
                let (a, b) = (m * (1.0 - u), m * (1.0 + u));
                let s = log_mean_series(0.5 * (a + b), (b - a) / (a + b));
                let d = log_mean_direct(a, b);
                assert!(((s - d) / d).abs() < 1e-12, "m={m} u={u}");
            }
        }
    }

    #[test]
    fn near_diagonal_agrees_with_arithmetic_mean() {
        for a in [1e-5, 1.0, 1e5] {
            let b = a * (1.0 + 5e-9);
            let am = 0.5 * (a + b);
            assert!(((log_mean(a, b) - am) / am).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn partials_match_finite_differences(la in -3.0f64..3.0, lb in -3.0f64..3.0) {
            let (a, b) = (10f64.powf(la), 10f64.powf(lb));
            for kind in [MeanKind::Logarithmic, MeanKind::Harmonic] {
                let (da, db) = kind.partials(a, b);
                let ha = 1e-5 * a;
                let hb = 1e-5 * b;
                let fa = (kind.eval(a + ha, b) - kind.eval(a - ha, b)) / (2.0 * ha);
                let fb = (kind.eval(a, b + hb) - kind.eval(a, b - hb)) / (2.0 * hb);
                // central differences carry roundoff of order ε θ / h
                let th = kind.eval(a, b);
                prop_assert!((da - fa).abs() <= 1e-6 * fa.abs() + 1e-13 * th / ha);
                prop_assert!((db - fb).abs() <= 1e-6 * fb.abs() + 1e-13 * th / hb);
                prop_assert!(da >= 0.0 && da <= kind.eval(a, b) / a * (1.0 + 1e-12));
            }
        }

        #[test]
        fn sandwich_homogeneity_concavity(
            la in -6.0f64..6.0, lb in -6.0f64..6.0, lc in -6.0f64..6.0, ld in -6.0f64..6.0,
            scale in 1e-3f64..1e3,
        ) {
            let (a, b) = (10f64.powf(la), 10f64.powf(lb));
            let h = harmonic_mean(a, b);
            let l = log_mean(a, b);
            prop_assert!(h <= l * (1.0 + 1e-12));
            prop_assert!(l <= 0.5 * (a + b) * (1.0 + 1e-12));
            for kind in [MeanKind::Logarithmic, MeanKind::Harmonic] {
                let lhs = kind.eval(scale * a, scale * b);
                let rhs = scale * kind.eval(a, b);
                prop_assert!(((lhs - rhs) / rhs).abs() < 1e-12);
            }
            let (c, d) = (10f64.powf(lc), 10f64.powf(ld));
            let mid = log_mean(0.5 * (a + c), 0.5 * (b + d));
            prop_assert!(mid >= 0.5 * (l + log_mean(c, d)) * (1.0 - 1e-12));
        }

        #[test]
        fn monotone_in_each_argument(a in 0.0f64..10.0, b in 0.0f64..10.0, eps in 0.0f64..1.0) {
            for kind in [MeanKind::Logarithmic, MeanKind::Harmonic] {
                prop_assert!(kind.eval(a + eps, b) >= kind.eval(a, b) * (1.0 - 1e-14));
                prop_assert_eq!(kind.eval(a, b), kind.eval(b, a));
            }
        }
    }
}
