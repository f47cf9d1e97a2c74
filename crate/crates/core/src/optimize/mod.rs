//! Locating the posterior mode and the negative Hessian there.
//!
//! The log-posterior is maximized by minimizing its negation. Derivatives the
//! caller does not supply are synthesized by central finite differences:
//! gradients from function values, Hessians from gradients.

mod bfgs;
mod trust;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{AghqError, Result};

pub type LogDensityFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Relative step sizes for central finite differences. The step for
/// coordinate `i` is `rel * max(1, |x_i|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffStep {
    pub gradient_rel: f64,
    pub hessian_rel: f64,
}

impl Default for FiniteDiffStep {
    fn default() -> Self {
        FiniteDiffStep {
            gradient_rel: f64::EPSILON.cbrt(),
            hessian_rel: f64::EPSILON.powf(0.25),
        }
    }
}

/// Probe points `(x - h, x + h)` for coordinate value `xi`.
fn probes(rel: f64, xi: f64) -> (f64, f64) {
    let h = rel * xi.abs().max(1.0);
    (xi - h, xi + h)
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient<F>(mut f: F, x: &DVector<f64>, rel: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let (lo, hi) = probes(rel, x[i]);
        probe[i] = hi;
        let up = f(&probe);
        probe[i] = lo;
        let down = f(&probe);
        probe[i] = x[i];
        for v in [up, down] {
            if !v.is_finite() {
                return Err(AghqError::non_finite(format!("gradient probe, coordinate {i}"), v));
            }
        }
        // divide by the realized spacing, not 2h, to cancel representation error
        g[i] = (up - down) / (hi - lo);
    }
    Ok(g)
}

/// Central-difference Jacobian of `gr` at `x`, symmetrized as `(A + Aᵀ)/2`.
pub fn finite_diff_hessian<G>(mut gr: G, x: &DVector<f64>, rel: f64) -> Result<DMatrix<f64>>
where
    G: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let d = x.len();
    let mut probe = x.clone();
    let mut a = DMatrix::zeros(d, d);
    for j in 0..d {
        let (lo, hi) = probes(rel, x[j]);
        probe[j] = hi;
        let up = gr(&probe);
        probe[j] = lo;
        let down = gr(&probe);
        probe[j] = x[j];
        if up.len() != d || down.len() != d {
            return Err(AghqError::DimensionMismatch {
                expected: d,
                got: up.len().min(down.len()),
            });
        }
        for i in 0..d {
            let diff = (up[i] - down[i]) / (hi - lo);
            if !diff.is_finite() {
                return Err(AghqError::non_finite(format!("hessian probe, coordinate {j}"), diff));
            }
            a[(i, j)] = diff;
        }
    }
    Ok(symmetrize(&a))
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Log of an un-normalized posterior with optional analytic derivatives.
///
/// `he`, when given, returns the Hessian of the log-posterior itself (negative
/// definite near the mode).
#[derive(Clone)]
pub struct ObjectiveBundle {
    dim: usize,
    logpost: LogDensityFn,
    gr: Option<GradientFn>,
    he: Option<HessianFn>,
    step: FiniteDiffStep,
}

impl fmt::Debug for ObjectiveBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveBundle")
            .field("dim", &self.dim)
            .field("gradient", &self.gr.is_some())
            .field("hessian", &self.he.is_some())
            .field("step", &self.step)
            .finish()
    }
}

impl ObjectiveBundle {
    pub fn new<F>(dim: usize, logpost: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        ObjectiveBundle {
            dim,
            logpost: Arc::new(logpost),
            gr: None,
            he: None,
            step: FiniteDiffStep::default(),
        }
    }

    pub fn with_gradient<G>(mut self, gr: G) -> Self
    where
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.gr = Some(Arc::new(gr));
        self
    }

    pub fn with_hessian<H>(mut self, he: H) -> Self
    where
        H: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.he = Some(Arc::new(he));
        self
    }

    pub fn with_step(mut self, step: FiniteDiffStep) -> Self {
        self.step = step;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_gradient(&self) -> bool {
        self.gr.is_some()
    }

    pub fn has_hessian(&self) -> bool {
        self.he.is_some()
    }

    pub fn logpost(&self, x: &DVector<f64>) -> f64 {
        (self.logpost)(x)
    }

    pub(crate) fn logpost_fn(&self) -> &LogDensityFn {
        &self.logpost
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(AghqError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let g = match &self.gr {
            Some(gr) => gr(x),
            None => finite_diff_gradient(|p| self.logpost(p), x, self.step.gradient_rel)?,
        };
        if g.len() != self.dim {
            return Err(AghqError::DimensionMismatch {
                expected: self.dim,
                got: g.len(),
            });
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(AghqError::non_finite("gradient", *bad));
        }
        Ok(g)
    }

    /// Hessian of the log-posterior, symmetrized.
    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let h = match &self.he {
            Some(he) => {
                let h = he(x);
                if h.nrows() != self.dim || h.ncols() != self.dim {
                    return Err(AghqError::DimensionMismatch {
                        expected: self.dim,
                        got: h.nrows(),
                    });
                }
                symmetrize(&h)
            }
            None => {
                // gradient() can fail, but the closure must return a vector;
                // stash the first error and surface it afterwards.
                let mut failure = None;
                let h = finite_diff_hessian(
                    |p| match self.gradient(p) {
                        Ok(g) => g,
                        Err(e) => {
                            failure.get_or_insert(e);
                            DVector::from_element(self.dim, f64::NAN)
                        }
                    },
                    x,
                    self.step.hessian_rel,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                h?
            }
        };
        if let Some(bad) = h.iter().find(|v| !v.is_finite()) {
            return Err(AghqError::non_finite("hessian", *bad));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptMethod {
    #[default]
    Bfgs,
    TrustRegion,
    /// Trust region whose Newton solves factor the Hessian with a sparse
    /// Cholesky; suited to large latent problems with sparse precision.
    SparseTrustRegion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptControl {
    pub method: OptMethod,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for OptControl {
    fn default() -> Self {
        OptControl {
            method: OptMethod::Bfgs,
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
        }
    }
}

impl OptControl {
    pub fn with_method(method: OptMethod) -> Self {
        OptControl {
            method,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(AghqError::InvalidArgument(
                "gradient tolerance must be strictly positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(AghqError::InvalidArgument("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Converged,
    MaxIterations,
    /// The line search (or trust-region radius) could not make progress.
    LineSearchFailure,
    /// Mode and Hessian were supplied by the caller.
    Supplied,
}

/// Mode of the log-posterior and `H`, the negative Hessian there.
#[derive(Debug, Clone)]
pub struct OptResults {
    pub mode: DVector<f64>,
    /// `-∂² log π*` at the mode; symmetric positive definite.
    pub hessian: DMatrix<f64>,
    pub logpost_at_mode: f64,
    pub convergence: Convergence,
    pub iterations: usize,
    pub bundle: ObjectiveBundle,
}

impl OptResults {
    /// Wraps a mode and negative Hessian obtained elsewhere, e.g. from a
    /// constrained optimizer. The Hessian is symmetrized and must be PD.
    pub fn supplied(bundle: ObjectiveBundle, mode: DVector<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        bundle.check_dim(&mode)?;
        if hessian.nrows() != bundle.dim() || hessian.ncols() != bundle.dim() {
            return Err(AghqError::DimensionMismatch {
                expected: bundle.dim(),
                got: hessian.nrows(),
            });
        }
        let hessian = symmetrize(&hessian);
        if hessian.clone().cholesky().is_none() {
            return Err(AghqError::NotPositiveDefinite("supplied hessian".into()));
        }
        let logpost_at_mode = bundle.logpost(&mode);
        if !logpost_at_mode.is_finite() {
            return Err(AghqError::non_finite("supplied mode", logpost_at_mode));
        }
        Ok(OptResults {
            mode,
            hessian,
            logpost_at_mode,
            convergence: Convergence::Supplied,
            iterations: 0,
            bundle,
        })
    }
}

/// Minimization view of a bundle: value, gradient and Hessian of `-log π*`.
pub(crate) struct Negated<'a>(pub &'a ObjectiveBundle);

impl Negated<'_> {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let v = -self.0.logpost(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-self.0.gradient(x)?)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(-self.0.hessian(x)?)
    }
}

pub(crate) struct Minimum {
    pub x: DVector<f64>,
    pub status: Convergence,
    pub iterations: usize,
}

/// Maximizes the bundle's log-posterior from `start`.
///
/// After the main iteration a few guarded Newton steps polish the mode, then
/// the negative Hessian is validated by Cholesky. A non-PD Hessian is an
/// error, never repaired.
pub fn optimize_theta(bundle: &ObjectiveBundle, start: &DVector<f64>, control: &OptControl) -> Result<OptResults> {
    control.validate()?;
    bundle.check_dim(start)?;
    let f0 = bundle.logpost(start);
    if !f0.is_finite() {
        return Err(AghqError::non_finite("starting value", f0));
    }
    let objective = Negated(bundle);
    let found = match control.method {
        OptMethod::Bfgs => bfgs::minimize(&objective, start, control)?,
        OptMethod::TrustRegion => trust::minimize(&objective, start, control, trust::Solver::Dense)?,
        OptMethod::SparseTrustRegion => trust::minimize(&objective, start, control, trust::Solver::Sparse(None))?,
    };

    let (mode, hessian) = polish(&objective, found.x)?;
    let grad = objective.gradient(&mode)?;
    let status = match found.status {
        Convergence::LineSearchFailure if grad.amax() <= control.gradient_tolerance => Convergence::Converged,
        s => s,
    };
    let logpost_at_mode = bundle.logpost(&mode);
    Ok(OptResults {
        mode,
        hessian,
        logpost_at_mode,
        convergence: status,
        iterations: found.iterations,
        bundle: bundle.clone(),
    })
}

const POLISH_STEPS: usize = 3;

fn polish(objective: &Negated<'_>, mut x: DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut h = objective.hessian(&x)?;
    let mut g = objective.gradient(&x)?;
    let mut fx = objective.value(&x);
    for _ in 0..POLISH_STEPS {
        let Some(chol) = h.clone().cholesky() else {
            return Err(AghqError::ModeNotMaximum);
        };
        if g.amax() == 0.0 {
            break;
        }
        let candidate = &x - chol.solve(&g);
        let fc = objective.value(&candidate);
        if !fc.is_finite() || fc > fx + 1e-12 * fx.abs().max(1.0) {
            break;
        }
        let Ok(gc) = objective.gradient(&candidate) else {
            break;
        };
        if gc.amax() >= g.amax() {
            break;
        }
        x = candidate;
        g = gc;
        fx = fc;
        h = objective.hessian(&x)?;
    }
    if h.clone().cholesky().is_none() {
        return Err(AghqError::ModeNotMaximum);
    }
    Ok((x, h))
}
