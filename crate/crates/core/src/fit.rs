//! Adapting the Gauss-Hermite grid to a posterior and normalizing it.

use nalgebra::{DMatrix, DVector};

use crate::error::{AghqError, Result};
use crate::optimize::{optimize_theta, ObjectiveBundle, OptControl, OptResults};
use crate::rules::{evaluate_rows, product_rule_with_cap, Evaluation, QuadRuleProduct, DEFAULT_GRID_CAP};
use crate::summaries::{marginal_from_grid, marginal_posterior_with, MarginalPosterior};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A product rule shifted to the mode and scaled by `L`, where `LLᵀ = H⁻¹`.
#[derive(Debug, Clone)]
pub struct AdaptedGrid {
    pub base: QuadRuleProduct,
    pub mode: DVector<f64>,
    /// Lower Cholesky factor of the inverse Hessian.
    pub cholesky_lower: DMatrix<f64>,
    /// `m × d`; row `j` is `mode + L z_j`.
    pub nodes: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// `log det L`, the log of the weight scale factor.
    pub log_det_l: f64,
}

impl AdaptedGrid {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub(crate) fn log_weight(&self, row: usize) -> f64 {
        self.base.weights[row].ln() + self.log_det_l
    }

    /// `H⁻¹ = LLᵀ`
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cholesky_lower * self.cholesky_lower.transpose()
    }
}

pub(crate) fn inverse_cholesky(hessian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = hessian
        .clone()
        .cholesky()
        .ok_or_else(|| AghqError::NotPositiveDefinite("hessian".into()))?;
    let inv = chol.inverse();
    let inv = (&inv + inv.transpose()) * 0.5;
    inv.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| AghqError::NotPositiveDefinite("inverse hessian".into()))
}

pub fn adapt_rule(base: &QuadRuleProduct, mode: &DVector<f64>, hessian: &DMatrix<f64>) -> Result<AdaptedGrid> {
    let d = base.dim;
    if mode.len() != d {
        return Err(AghqError::DimensionMismatch {
            expected: d,
            got: mode.len(),
        });
    }
    if hessian.nrows() != d || hessian.ncols() != d {
        return Err(AghqError::DimensionMismatch {
            expected: d,
            got: hessian.nrows(),
        });
    }
    let l = inverse_cholesky(hessian)?;
    let log_det_l: f64 = l.diagonal().iter().map(|v| v.ln()).sum();

    let mut nodes = &base.nodes * l.transpose();
    for mut row in nodes.row_iter_mut() {
        row += mode.transpose();
    }
    let scale = log_det_l.exp();
    let weights = base.weights.map(|w| w * scale);

    Ok(AdaptedGrid {
        base: base.clone(),
        mode: mode.clone(),
        cholesky_lower: l,
        nodes,
        weights,
        log_det_l,
    })
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One row of the node table.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRow {
    pub theta: DVector<f64>,
    pub weight: f64,
    pub logpost: f64,
    pub logpost_normalized: f64,
}

/// The adapted grid together with the log-posterior at each node and the
/// log normalizing constant.
#[derive(Debug, Clone)]
pub struct NormalizedPosterior {
    pub grid: AdaptedGrid,
    pub logpost: DVector<f64>,
    /// `logpost - lognormconst`
    pub logpost_normalized: DVector<f64>,
    pub lognormconst: f64,
}

impl NormalizedPosterior {
    pub fn nodes(&self) -> &DMatrix<f64> {
        &self.grid.nodes
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.grid.weights
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn nodes_and_weights(&self) -> Vec<NodeRow> {
        (0..self.len())
            .map(|j| NodeRow {
                theta: self.grid.nodes.row(j).transpose(),
                weight: self.grid.weights[j],
                logpost: self.logpost[j],
                logpost_normalized: self.logpost_normalized[j],
            })
            .collect()
    }

    pub(crate) fn from_values(grid: AdaptedGrid, logpost: DVector<f64>) -> Self {
        let lognormconst = log_sum_exp((0..grid.len()).map(|j| logpost[j] + grid.log_weight(j)));
        let logpost_normalized = logpost.map(|v| v - lognormconst);
        NormalizedPosterior {
            grid,
            logpost,
            logpost_normalized,
            lognormconst,
        }
    }
}

/// Knobs for [`aghq_with`] and [`normalize_logpost_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AghqControl {
    pub optimizer: OptControl,
    pub evaluation: Evaluation,
    pub grid_cap: usize,
}

impl Default for AghqControl {
    fn default() -> Self {
        AghqControl {
            optimizer: OptControl::default(),
            evaluation: Evaluation::Sequential,
            grid_cap: DEFAULT_GRID_CAP,
        }
    }
}

pub fn normalize_logpost(bundle: &ObjectiveBundle, optres: &OptResults, k: usize) -> Result<NormalizedPosterior> {
    normalize_logpost_with(bundle, optres, k, &AghqControl::default())
}

pub fn normalize_logpost_with(
    bundle: &ObjectiveBundle,
    optres: &OptResults,
    k: usize,
    control: &AghqControl,
) -> Result<NormalizedPosterior> {
    let base = product_rule_with_cap(bundle.dim(), k, control.grid_cap)?;
    let grid = adapt_rule(&base, &optres.mode, &optres.hessian)?;
    let f = bundle.logpost_fn();
    let values = evaluate_rows(&|x: &DVector<f64>| f(x), &grid.nodes, control.evaluation)?;
    Ok(NormalizedPosterior::from_values(grid, DVector::from_vec(values)))
}

/// `log π*(mode) + (d/2) log 2π − ½ log det H`
pub fn laplace_log_normconst(bundle: &ObjectiveBundle, optres: &OptResults) -> Result<f64> {
    let d = bundle.dim();
    let chol = optres
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| AghqError::NotPositiveDefinite("hessian".into()))?;
    let log_det_h = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let at_mode = bundle.logpost(&optres.mode);
    if !at_mode.is_finite() {
        return Err(AghqError::non_finite("mode", at_mode));
    }
    Ok(at_mode + 0.5 * d as f64 * LN_2PI - 0.5 * log_det_h)
}

/// Result of [`aghq`].
#[derive(Debug, Clone)]
pub struct AghqFit {
    pub normalized_posterior: NormalizedPosterior,
    /// One marginal per coordinate, in coordinate order.
    pub marginals: Vec<MarginalPosterior>,
    pub optresults: OptResults,
    pub k: usize,
}

impl AghqFit {
    pub fn lognormconst(&self) -> f64 {
        self.normalized_posterior.lognormconst
    }

    pub fn dim(&self) -> usize {
        self.optresults.mode.len()
    }
}

/// Optimizes (unless `optresults` is given), normalizes with `k` points per
/// dimension, and computes every coordinate's marginal.
pub fn aghq(
    bundle: &ObjectiveBundle,
    k: usize,
    start: &DVector<f64>,
    optresults: Option<OptResults>,
) -> Result<AghqFit> {
    aghq_with(bundle, k, start, optresults, &AghqControl::default())
}

pub fn aghq_with(
    bundle: &ObjectiveBundle,
    k: usize,
    start: &DVector<f64>,
    optresults: Option<OptResults>,
    control: &AghqControl,
) -> Result<AghqFit> {
    if k == 0 {
        return Err(AghqError::InvalidArgument(
            "number of quadrature points must be at least 1".into(),
        ));
    }
    if let Some(bad) = start.iter().find(|v| !v.is_finite()) {
        return Err(AghqError::InvalidArgument(format!("starting value contains {bad}")));
    }
    let optresults = match optresults {
        Some(res) => {
            if res.mode.len() != bundle.dim() {
                return Err(AghqError::DimensionMismatch {
                    expected: bundle.dim(),
                    got: res.mode.len(),
                });
            }
            res
        }
        None => optimize_theta(bundle, start, &control.optimizer)?,
    };
    let normalized_posterior = normalize_logpost_with(bundle, &optresults, k, control)?;

    let mut marginals = Vec::with_capacity(bundle.dim());
    for t in 0..bundle.dim() {
        let m = if t == 0 {
            // coordinate 0 is already first: reuse the joint evaluations
            marginal_from_grid(0, &normalized_posterior.grid, &normalized_posterior.logpost)?
        } else {
            marginal_posterior_with(bundle, &optresults, k, t, control)?
        };
        marginals.push(m);
    }

    Ok(AghqFit {
        normalized_posterior,
        marginals,
        optresults,
        k,
    })
}
