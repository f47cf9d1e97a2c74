//! BFGS on the inverse Hessian with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};

use super::{Convergence, Minimum, Negated, OptControl};
use crate::error::Result;

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_SEARCH: usize = 40;
const MAX_ZOOM: usize = 30;

struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
    grad: Option<DVector<f64>>,
}

struct LineSearch<'a, 'b> {
    objective: &'a Negated<'b>,
    x: &'a DVector<f64>,
    p: &'a DVector<f64>,
    f0: f64,
    slope0: f64,
}

impl LineSearch<'_, '_> {
    fn eval(&self, alpha: f64) -> Result<Trial> {
        let xa = self.x + self.p * alpha;
        let value = self.objective.value(&xa);
        if !value.is_finite() {
            return Ok(Trial {
                alpha,
                value: f64::INFINITY,
                slope: f64::NAN,
                grad: None,
            });
        }
        let g = self.objective.gradient(&xa)?;
        Ok(Trial {
            alpha,
            value,
            slope: g.dot(self.p),
            grad: Some(g),
        })
    }

    fn sufficient_decrease(&self, t: &Trial) -> bool {
        t.value <= self.f0 + C1 * t.alpha * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -C2 * self.slope0
    }

    /// Strong-Wolfe search; `None` when no acceptable step was found.
    fn run(&self) -> Result<Option<Trial>> {
        let mut prev = Trial {
            alpha: 0.0,
            value: self.f0,
            slope: self.slope0,
            grad: None,
        };
        let mut alpha = 1.0;
        for i in 0..MAX_LINE_SEARCH {
            let cur = self.eval(alpha)?;
            if !cur.value.is_finite() {
                // left the support: backtrack toward the last good point
                alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                continue;
            }
            if !self.sufficient_decrease(&cur) || (i > 0 && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.slope >= 0.0 {
                return self.zoom(cur, prev);
            }
            prev = cur;
            alpha *= 2.0;
        }
        Ok(None)
    }

    fn zoom(&self, mut lo: Trial, mut hi: Trial) -> Result<Option<Trial>> {
        for _ in 0..MAX_ZOOM {
            let alpha = interpolate(&lo, &hi);
            let cur = self.eval(alpha)?;
            if !self.sufficient_decrease(&cur) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Ok(Some(cur));
                }
                if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
            if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
                break;
            }
        }
        // accept the best sufficient-decrease point found, if it moved at all
        if lo.alpha > 0.0 && lo.grad.is_some() {
            Ok(Some(lo))
        } else {
            Ok(None)
        }
    }
}

/// Cubic interpolation between two bracketing trials, safeguarded to the
/// interior of the bracket; falls back to bisection.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.value.is_finite() || !hi.slope.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if t.is_finite() && t > left + margin && t < right - margin {
        t
    } else {
        mid
    }
}

pub(super) fn minimize(objective: &Negated<'_>, start: &DVector<f64>, control: &OptControl) -> Result<Minimum> {
    let d = start.len();
    let mut x = start.clone();
    let mut fx = objective.value(&x);
    let mut g = objective.gradient(&x)?;
    let mut inv_h = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;

    for iter in 0..control.max_iterations {
        if g.amax() <= control.gradient_tolerance {
            return Ok(Minimum {
                x,
                status: Convergence::Converged,
                iterations: iter,
            });
        }
        let mut p = -(&inv_h * &g);
        let mut slope0 = g.dot(&p);
        if !(slope0 < 0.0) {
            inv_h = DMatrix::identity(d, d);
            fresh = true;
            p = -g.clone();
            slope0 = g.dot(&p);
        }
        if fresh {
            // unit first step along the raw gradient can be wildly scaled
            let scale = 1.0 / g.norm().max(1.0);
            p *= scale;
            slope0 *= scale;
        }
        let search = LineSearch {
            objective,
            x: &x,
            p: &p,
            f0: fx,
            slope0,
        };
        let Some(trial) = search.run()? else {
            if !fresh {
                inv_h = DMatrix::identity(d, d);
                fresh = true;
                continue;
            }
            return Ok(Minimum {
                x,
                status: Convergence::LineSearchFailure,
                iterations: iter,
            });
        };
        let s = &p * trial.alpha;
        let g_new = trial.grad.expect("accepted trial carries a gradient");
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                inv_h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &inv_h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - ρ(Hy sᵀ + s yᵀH) + (ρ² yᵀHy + ρ) s sᵀ
            inv_h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            inv_h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            fresh = false;
        }
        x += &s;
        fx = trial.value;
        g = g_new;
    }
    let status = if g.amax() <= control.gradient_tolerance {
        Convergence::Converged
    } else {
        Convergence::MaxIterations
    };
    Ok(Minimum {
        x,
        status,
        iterations: control.max_iterations,
    })
}
