//! Dogleg trust-region Newton method.

use nalgebra::{DMatrix, DVector};

use super::{Convergence, Minimum, Negated, OptControl};
use crate::error::Result;
use crate::sparse::SparseCholesky;

const ETA: f64 = 1e-4;
const INITIAL_RADIUS: f64 = 1.0;
const MAX_RADIUS: f64 = 1e4;
const MIN_RADIUS: f64 = 1e-14;

pub(super) enum Solver {
    Dense,
    /// Carries the previous factor so its symbolic analysis can be reused.
    Sparse(Option<SparseCholesky>),
}

impl Solver {
    /// Newton step `-B⁻¹ g`, or `None` when `B` is not positive definite.
    fn newton(&mut self, b: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Solver::Dense => b.clone().cholesky().map(|c| -c.solve(g)),
            Solver::Sparse(prev) => {
                let factor = match prev.take() {
                    Some(f) => f.refactor(b),
                    None => SparseCholesky::factor(b),
                };
                match factor {
                    Ok(f) => {
                        let step = -f.solve(g);
                        *prev = Some(f);
                        Some(step)
                    }
                    Err(_) => None,
                }
            }
        }
    }
}

fn boundary_tau(p: &DVector<f64>, q: &DVector<f64>, radius: f64) -> f64 {
    // largest τ ∈ [0,1] with ‖p + τ(q - p)‖ = radius
    let dir = q - p;
    let a = dir.dot(&dir);
    let b = 2.0 * p.dot(&dir);
    let c = p.dot(p) - radius * radius;
    if a == 0.0 {
        return 0.0;
    }
    ((-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)).clamp(0.0, 1.0)
}

fn dogleg(newton: Option<DVector<f64>>, b: &DMatrix<f64>, g: &DVector<f64>, radius: f64) -> DVector<f64> {
    if let Some(pn) = &newton {
        if pn.norm() <= radius {
            return pn.clone();
        }
    }
    let gnorm = g.norm();
    let gbg = g.dot(&(b * g));
    if gbg <= 0.0 {
        return g * (-radius / gnorm);
    }
    let cauchy = g * (-(gnorm * gnorm) / gbg);
    if cauchy.norm() >= radius {
        return g * (-radius / gnorm);
    }
    match newton {
        Some(pn) => {
            let tau = boundary_tau(&cauchy, &pn, radius);
            &cauchy + (pn - &cauchy) * tau
        }
        // indefinite model: the Cauchy point is the best we can certify
        None => cauchy,
    }
}

pub(super) fn minimize(
    objective: &Negated<'_>,
    start: &DVector<f64>,
    control: &OptControl,
    mut solver: Solver,
) -> Result<Minimum> {
    let mut x = start.clone();
    let mut fx = objective.value(&x);
    let mut g = objective.gradient(&x)?;
    let mut b = objective.hessian(&x)?;
    let mut radius = INITIAL_RADIUS.max(0.1 * x.norm());

    for iter in 0..control.max_iterations {
        if g.amax() <= control.gradient_tolerance {
            return Ok(Minimum {
                x,
                status: Convergence::Converged,
                iterations: iter,
            });
        }
        let newton = solver.newton(&b, &g);
        let p = dogleg(newton, &b, &g, radius);
        let predicted = -(g.dot(&p) + 0.5 * p.dot(&(&b * &p)));
        let candidate = &x + &p;
        let fc = objective.value(&candidate);
        let actual = fx - fc;
        let rho = if predicted > 0.0 && fc.is_finite() {
            actual / predicted
        } else {
            -1.0
        };

        let pnorm = p.norm();
        if rho < 0.25 {
            radius = 0.25 * pnorm.min(radius);
        } else if rho > 0.75 && pnorm >= 0.99 * radius {
            radius = (2.0 * radius).min(MAX_RADIUS);
        }

        if rho > ETA {
            x = candidate;
            fx = fc;
            g = objective.gradient(&x)?;
            b = objective.hessian(&x)?;
        } else if radius < MIN_RADIUS * x.norm().max(1.0) {
            return Ok(Minimum {
                x,
                status: Convergence::LineSearchFailure,
                iterations: iter,
            });
        }
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
