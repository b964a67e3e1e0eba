//! Threshold selection: bounded Brent search maximizing ψ.

use super::{Roadmap, RoadmapBuilder};
use crate::error::{LsrError, Result};

/// Finite stand-in for ψ = −∞ inside the scalar search.
pub const PSI_SENTINEL: f64 = -1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct BrentResult {
    pub x: f64,
    pub fx: f64,
    /// Every (x, f(x)) evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
}

/// Minimizes `f` on `[a, b]` by golden-section steps accelerated with
/// parabolic interpolation; stops when the bracket is within `xatol`.
pub fn brent_bounded(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, xatol: f64, max_evals: usize) -> BrentResult {
    let sqrt_eps = f64::EPSILON.sqrt();
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    let (mut a, mut b) = (a, b);
    let mut evaluations = Vec::new();
    let mut eval = |x: f64, evals: &mut Vec<(f64, f64)>| {
        let v = f(x);
        evals.push((x, v));
        v
    };

    let mut fulc = a + golden * (b - a);
    let (mut nfc, mut xf) = (fulc, fulc);
    let (mut rat, mut e) = (0.0f64, 0.0f64);
    let mut fx = eval(xf, &mut evaluations);
    let (mut ffulc, mut fnfc) = (fx, fx);
    let mut xm = 0.5 * (a + b);
    let mut tol1 = sqrt_eps * xf.abs() + xatol / 3.0;
    let mut tol2 = 2.0 * tol1;

    while (xf - xm).abs() > tol2 - 0.5 * (b - a) && evaluations.len() < max_evals {
        let mut use_golden = true;
        if e.abs() > tol1 {
            use_golden = false;
            let mut r = (xf - nfc) * (fx - ffulc);
            let mut q = (xf - fulc) * (fx - fnfc);
            let mut p = (xf - fulc) * q - (xf - nfc) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            r = e;
            e = rat;
            if p.abs() < (0.5 * q * r).abs() && p > q * (a - xf) && p < q * (b - xf) {
                rat = p / q;
                let x = xf + rat;
                if x - a < tol2 || b - x < tol2 {
                    rat = tol1 * sign_or_one(xm - xf);
                }
            } else {
                use_golden = true;
            }
        }
        if use_golden {
            e = if xf >= xm { a - xf } else { b - xf };
            rat = golden * e;
        }
        let x = xf + sign_or_one(rat) * rat.abs().max(tol1);
        let fu = eval(x, &mut evaluations);
        if fu <= fx {
            if x >= xf {
                a = xf;
            } else {
                b = xf;
            }
            (fulc, ffulc) = (nfc, fnfc);
            (nfc, fnfc) = (xf, fx);
            (xf, fx) = (x, fu);
        } else {
            if x < xf {
                a = x;
            } else {
                b = x;
            }
            if fu <= fnfc || nfc == xf {
                (fulc, ffulc) = (nfc, fnfc);
                (nfc, fnfc) = (x, fu);
            } else if fu <= ffulc || fulc == xf || fulc == nfc {
                (fulc, ffulc) = (x, fu);
            }
        }
        xm = 0.5 * (a + b);
        tol1 = sqrt_eps * xf.abs() + xatol / 3.0;
        tol2 = 2.0 * tol1;
    }
    BrentResult { x: xf, fx, evaluations }
}

fn sign_or_one(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct TauSearch {
    pub tau: f64,
    pub psi: f64,
    /// (τ, ψ) for every threshold tried, with ψ = −∞ where infeasible.
    pub evaluations: Vec<(f64, f64)>,
    pub roadmap: Roadmap,
}

/// Maximizes ψ over thresholds in `[tau_min, tau_max]`. The search's own
/// evaluations and both bracket endpoints are candidates; the best one wins,
/// earlier evaluations first on ties.
pub fn optimize_tau(builder: &RoadmapBuilder, tau_min: f64, tau_max: f64, c_max: usize, xatol: f64) -> Result<TauSearch> {
    if !(tau_min < tau_max) {
        return Err(LsrError::InvalidArgument(format!(
            "empty threshold interval [{tau_min}, {tau_max}]"
        )));
    }
    let objective = |t: f64| {
        let v = builder.psi(t, c_max);
        if v.is_finite() {
            -v
        } else {
            -PSI_SENTINEL
        }
    };
    let brent = brent_bounded(objective, tau_min, tau_max, xatol, 500);
    let mut evaluations: Vec<(f64, f64)> = brent
        .evaluations
        .iter()
        .map(|&(t, v)| (t, if v == -PSI_SENTINEL { f64::NEG_INFINITY } else { -v }))
        .collect();
    for t in [tau_min, tau_max] {
        evaluations.push((t, builder.psi(t, c_max)));
    }
    let (tau, best) = evaluations
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, (t, v)| if v > acc.1 { (t, v) } else { acc });
    if best == f64::NEG_INFINITY {
        return Err(LsrError::NoFeasibleRoadmap { c_max });
    }
    let roadmap = builder.build(tau)?;
    Ok(TauSearch {
        tau,
        psi: best,
        evaluations,
        roadmap,
    })
}

/// Exhaustive alternative to [`optimize_tau`]: evaluates ψ on `steps + 1`
/// evenly spaced thresholds and keeps the first best.
pub fn grid_optimize_tau(builder: &RoadmapBuilder, tau_min: f64, tau_max: f64, c_max: usize, steps: usize) -> Result<TauSearch> {
    if !(tau_min < tau_max) || steps == 0 {
        return Err(LsrError::InvalidArgument(format!(
            "empty threshold grid [{tau_min}, {tau_max}] with {steps} steps"
        )));
    }
    let evaluations: Vec<(f64, f64)> = (0..=steps)
        .map(|k| {
            let t = tau_min + (tau_max - tau_min) * k as f64 / steps as f64;
            (t, builder.psi(t, c_max))
        })
        .collect();
    let (tau, best) = evaluations
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, (t, v)| if v > acc.1 { (t, v) } else { acc });
    if best == f64::NEG_INFINITY {
        return Err(LsrError::NoFeasibleRoadmap { c_max });
    }
    let roadmap = builder.build(tau)?;
    Ok(TauSearch {
        tau,
        psi: best,
        evaluations,
        roadmap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brent_quadratic() {
        let r = brent_bounded(|x| (x - 1.3) * (x - 1.3) + 2.0, 0.0, 3.0, 1e-5, 500);
        assert_abs_diff_eq!(r.x, 1.3, epsilon = 1e-4);
        assert_abs_diff_eq!(r.fx, 2.0, epsilon = 1e-8);
        assert!(r.evaluations.len() < 20);
    }

    #[test]
    fn brent_boundary_minimum() {
        let r = brent_bounded(|x| x, 0.5, 2.0, 1e-3, 500);
        assert!(r.x >= 0.5 && r.x < 0.5 + 2e-3);
        let r = brent_bounded(|x| (x - 5.0).abs(), 0.0, 3.0, 1e-3, 500);
        assert!(r.x > 3.0 - 2e-3 && r.x <= 3.0);
    }

    #[test]
    fn brent_respects_eval_budget() {
        let r = brent_bounded(|x| x.sin(), 0.0, 6.0, 1e-12, 7);
        assert_eq!(r.evaluations.len(), 7);
    }
}
