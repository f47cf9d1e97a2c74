//! Marginal Laplace approximation for latent Gaussian models.
//!
//! For a joint log density `log π(W, θ, Y)` with a high-dimensional latent
//! `W`, the latent field is integrated out by a Laplace approximation at each
//! `θ`, AGHQ runs over `θ`, and the posterior for `W` is the mixture of the
//! Gaussians fitted at the `θ` nodes.

use std::fmt;
use std::io::Write;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{AghqError, Result};
use crate::fit::{aghq_with, AghqControl, AghqFit};
use crate::optimize::{optimize_theta, ObjectiveBundle, OptControl, OptMethod};
use crate::rules::{Evaluation, DEFAULT_GRID_CAP};
use crate::sparse::SparseCholesky;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

type JointFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type JointGradFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type JointHessFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Joint log density `log π(W, θ, Y)` with its gradient and negative Hessian
/// in `W`. Callbacks take `(W, θ)`.
#[derive(Clone)]
pub struct LatentBundle {
    dim_w: usize,
    dim_theta: usize,
    f: JointFn,
    gr_w: JointGradFn,
    he_w: JointHessFn,
}

impl fmt::Debug for LatentBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatentBundle")
            .field("dim_w", &self.dim_w)
            .field("dim_theta", &self.dim_theta)
            .finish_non_exhaustive()
    }
}

impl LatentBundle {
    /// `he_w` returns the negative Hessian of `f` in `W`, which must be
    /// positive definite at the inner modes.
    pub fn new<F, G, H>(dim_w: usize, dim_theta: usize, f: F, gr_w: G, he_w: H) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        LatentBundle {
            dim_w,
            dim_theta,
            f: Arc::new(f),
            gr_w: Arc::new(gr_w),
            he_w: Arc::new(he_w),
        }
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    pub fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    pub fn logpost(&self, w: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        (self.f)(w, theta)
    }

    pub fn gradient_w(&self, w: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        (self.gr_w)(w, theta)
    }

    pub fn neg_hessian_w(&self, w: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        (self.he_w)(w, theta)
    }

    /// The bundle over `W` at fixed `θ`.
    fn conditional(&self, theta: &DVector<f64>) -> ObjectiveBundle {
        let (f, gr, he) = (self.f.clone(), self.gr_w.clone(), self.he_w.clone());
        let (t1, t2, t3) = (theta.clone(), theta.clone(), theta.clone());
        ObjectiveBundle::new(self.dim_w, move |w| f(w, &t1))
            .with_gradient(move |w| gr(w, &t2))
            .with_hessian(move |w| -he(w, &t3))
    }

    fn check(&self, w: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
        if w.len() != self.dim_w {
            return Err(AghqError::DimensionMismatch {
                expected: self.dim_w,
                got: w.len(),
            });
        }
        if theta.len() != self.dim_theta {
            return Err(AghqError::DimensionMismatch {
                expected: self.dim_theta,
                got: theta.len(),
            });
        }
        Ok(())
    }
}

/// Laplace approximation of `log ∫ π(W, θ, Y) dW` at one `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceProfile {
    pub log_la: f64,
    pub w_mode: DVector<f64>,
    /// `he_W` at `w_mode`.
    pub hessian: DMatrix<f64>,
}

pub fn laplace_profile(bundle: &LatentBundle, theta: &DVector<f64>, w_start: &DVector<f64>) -> Result<LaplaceProfile> {
    laplace_profile_with(
        bundle,
        theta,
        w_start,
        &OptControl::with_method(OptMethod::SparseTrustRegion),
    )
}

/// [`laplace_profile`] with an explicit inner optimizer.
pub fn laplace_profile_with(
    bundle: &LatentBundle,
    theta: &DVector<f64>,
    w_start: &DVector<f64>,
    inner: &OptControl,
) -> Result<LaplaceProfile> {
    bundle.check(w_start, theta)?;
    let profile = || -> Result<LaplaceProfile> {
        let conditional = bundle.conditional(theta);
        let opt = optimize_theta(&conditional, w_start, inner)?;
        let hessian = bundle.neg_hessian_w(&opt.mode, theta);
        let factor = SparseCholesky::factor(&hessian)?;
        let at_mode = bundle.logpost(&opt.mode, theta);
        let log_la = at_mode + 0.5 * bundle.dim_w as f64 * LN_2PI - 0.5 * factor.log_det();
        if !log_la.is_finite() {
            return Err(AghqError::non_finite("laplace approximation", log_la));
        }
        Ok(LaplaceProfile {
            log_la,
            w_mode: opt.mode,
            hessian,
        })
    };
    profile().map_err(|e| AghqError::inner(theta, e))
}

/// Knobs for [`marginal_laplace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalLaplaceControl {
    pub outer: OptControl,
    pub inner: OptControl,
    /// Applies to the final per-node re-evaluation only; the outer fit is
    /// sequential so that warm starts form a deterministic chain.
    pub evaluation: Evaluation,
    pub grid_cap: usize,
}

impl Default for MarginalLaplaceControl {
    fn default() -> Self {
        MarginalLaplaceControl {
            outer: OptControl::with_method(OptMethod::TrustRegion),
            inner: OptControl::with_method(OptMethod::SparseTrustRegion),
            evaluation: Evaluation::Sequential,
            grid_cap: DEFAULT_GRID_CAP,
        }
    }
}

/// Inner fit stored at one outer quadrature node.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeAndHessian {
    pub theta: DVector<f64>,
    pub w_mode: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub log_la: f64,
}

#[derive(Debug, Clone)]
pub struct MarginalLaplaceFit {
    pub outer: AghqFit,
    /// One row per outer node, in grid order.
    pub modesandhessians: Vec<ModeAndHessian>,
    /// Mixture weights `ω_j π̃(θ_j | Y)`, summing to one.
    pub lambda: Vec<f64>,
    pub dim_w: usize,
}

impl MarginalLaplaceFit {
    pub fn lognormconst(&self) -> f64 {
        self.outer.lognormconst()
    }

    /// `Σ_j λ_j Ŵ_j`
    pub fn mixture_mean(&self) -> DVector<f64> {
        self.modesandhessians
            .iter()
            .zip(&self.lambda)
            .fold(DVector::zeros(self.dim_w), |acc, (m, l)| acc + &m.w_mode * *l)
    }
}

pub fn marginal_laplace(
    bundle: &LatentBundle,
    k: usize,
    w_start: &DVector<f64>,
    theta_start: &DVector<f64>,
) -> Result<MarginalLaplaceFit> {
    marginal_laplace_with(bundle, k, w_start, theta_start, &MarginalLaplaceControl::default())
}

pub fn marginal_laplace_with(
    bundle: &LatentBundle,
    k: usize,
    w_start: &DVector<f64>,
    theta_start: &DVector<f64>,
    control: &MarginalLaplaceControl,
) -> Result<MarginalLaplaceFit> {
    bundle.check(w_start, theta_start)?;
    if let Some(bad) = w_start.iter().find(|v| !v.is_finite()) {
        return Err(AghqError::InvalidArgument(format!("latent start contains {bad}")));
    }

    let warm = Arc::new(Mutex::new(w_start.clone()));
    let failure: Arc<Mutex<Option<AghqError>>> = Arc::new(Mutex::new(None));
    let outer_bundle = {
        let (bundle, warm, failure) = (bundle.clone(), warm.clone(), failure.clone());
        let inner = control.inner;
        ObjectiveBundle::new(bundle.dim_theta, move |theta| {
            let start = warm.lock().unwrap().clone();
            match laplace_profile_with(&bundle, theta, &start, &inner) {
                Ok(p) => {
                    *warm.lock().unwrap() = p.w_mode;
                    p.log_la
                }
                Err(e) => {
                    *failure.lock().unwrap() = Some(e);
                    f64::NAN
                }
            }
        })
    };

    let mut outer_control = AghqControl {
        optimizer: control.outer,
        evaluation: Evaluation::Sequential,
        grid_cap: control.grid_cap,
    };
    outer_control.optimizer.method = control.outer.method;
    let outer = match aghq_with(&outer_bundle, k, theta_start, None, &outer_control) {
        Ok(fit) => fit,
        Err(e) => {
            return Err(failure.lock().unwrap().take().unwrap_or(e));
        }
    };

    // warm start every node from the latent mode at the outer mode
    let mode_profile = laplace_profile_with(bundle, &outer.optresults.mode, w_start, &control.inner)?;
    let nodes = outer.normalized_posterior.nodes();
    let evaluate = |j: usize| -> Result<ModeAndHessian> {
        let theta = nodes.row(j).transpose();
        let p = laplace_profile_with(bundle, &theta, &mode_profile.w_mode, &control.inner)?;
        Ok(ModeAndHessian {
            theta,
            w_mode: p.w_mode,
            hessian: p.hessian,
            log_la: p.log_la,
        })
    };
    let modesandhessians: Vec<ModeAndHessian> = match control.evaluation {
        Evaluation::Sequential => (0..nodes.nrows()).map(evaluate).collect::<Result<_>>()?,
        Evaluation::Parallel => (0..nodes.nrows())
            .into_par_iter()
            .map(evaluate)
            .collect::<Result<_>>()?,
    };

    let np = &outer.normalized_posterior;
    let raw: Vec<f64> = (0..np.len())
        .map(|j| np.weights()[j] * np.logpost_normalized[j].exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let lambda = raw.iter().map(|v| v / total).collect();

    Ok(MarginalLaplaceFit {
        outer,
        modesandhessians,
        lambda,
        dim_w: bundle.dim_w,
    })
}

/// Draws from the Gaussian-mixture posterior of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    /// `d_W × M`, one draw per column.
    pub samps: DMatrix<f64>,
    /// `M × d_θ`, the node behind each column.
    pub theta: DMatrix<f64>,
    /// Mixture component of each column.
    pub component: Vec<usize>,
    pub rng_seed: u64,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.samps.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samps.ncols() == 0
    }

    /// One row per draw, header `draw,component,theta1..,W1..`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["draw".to_string(), "component".to_string()];
        header.extend((1..=self.theta.ncols()).map(|i| format!("theta{i}")));
        header.extend((1..=self.samps.nrows()).map(|i| format!("W{i}")));
        out.write_record(&header)?;
        for m in 0..self.len() {
            let mut row = vec![(m + 1).to_string(), (self.component[m] + 1).to_string()];
            row.extend(self.theta.row(m).iter().map(|v| v.to_string()));
            row.extend(self.samps.column(m).iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Result<Vec<u64>> {
    let mut counts = vec![0; probs.len()];
    let mut remaining_n = n;
    let mut remaining_p = 1.0;
    for (j, &p) in probs.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if j + 1 == probs.len() {
            counts[j] = remaining_n;
            break;
        }
        let q = if remaining_p > 0.0 {
            (p / remaining_p).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let draw = Binomial::new(remaining_n, q)
            .map_err(|e| AghqError::CorruptFit(format!("mixture weight {p}: {e}")))?
            .sample(rng);
        counts[j] = draw;
        remaining_n -= draw;
        remaining_p -= p;
    }
    Ok(counts)
}

/// `M` draws: component counts from one multinomial, then for component `j`
/// `Ŵ_j + L_j⁻ᵀ z` with `L_j` the Cholesky factor of `H(θ_j)`. Columns are
/// shuffled so their order carries no component information.
pub fn sample_marginal(fit: &MarginalLaplaceFit, m: usize, seed: u64) -> Result<PosteriorSamples> {
    if m == 0 {
        return Err(AghqError::InvalidArgument(
            "number of samples must be at least 1".into(),
        ));
    }
    let comps = &fit.modesandhessians;
    if comps.is_empty() || comps.len() != fit.lambda.len() {
        return Err(AghqError::CorruptFit(format!(
            "{} components but {} mixture weights",
            comps.len(),
            fit.lambda.len()
        )));
    }
    if fit.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(AghqError::CorruptFit(
            "mixture weights must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = fit.lambda.iter().sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(AghqError::CorruptFit(format!("mixture weights sum to {sum}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = multinomial(&mut rng, m as u64, &fit.lambda)?;
    let d_w = fit.dim_w;
    let d_theta = comps[0].theta.len();

    let mut blocks: Vec<(usize, DVector<f64>)> = Vec::with_capacity(m);
    for (j, (&count, comp)) in counts.iter().zip(comps).enumerate() {
        if count == 0 {
            continue;
        }
        let factor = SparseCholesky::factor(&comp.hessian)
            .map_err(|e| AghqError::CorruptFit(format!("hessian of component {}: {e}", j + 1)))?;
        if factor.dim() != d_w || comp.w_mode.len() != d_w {
            return Err(AghqError::CorruptFit(format!(
                "component {} has the wrong dimension",
                j + 1
            )));
        }
        for _ in 0..count {
            let mut z = DVector::from_fn(d_w, |_, _| rng.sample::<f64, _>(StandardNormal));
            factor.solve_upper_in_place(&mut z);
            blocks.push((j, z + &comp.w_mode));
        }
    }
    blocks.shuffle(&mut rng);

    let mut samps = DMatrix::zeros(d_w, m);
    let mut theta = DMatrix::zeros(m, d_theta);
    let mut component = Vec::with_capacity(m);
    for (col, (j, w)) in blocks.into_iter().enumerate() {
        samps.set_column(col, &w);
        theta.set_row(col, &comps[j].theta.transpose());
        component.push(j);
    }
    Ok(PosteriorSamples {
        samps,
        theta,
        component,
        rng_seed: seed,
    })
}
