//! Moments, marginal densities, CDFs and quantiles from a fitted grid.
//!
//! Marginals are only available at the `k` distinct values the adapted grid
//! takes in its first coordinate, so each coordinate is moved to the front,
//! the grid rebuilt, and a Lagrange polynomial fit through the `k` log
//! marginal values. CDFs come from a left Riemann sum of the interpolated
//! density over a fine grid; quantiles are read off that CDF.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{AghqError, Result};
use crate::fit::{adapt_rule, log_sum_exp, AdaptedGrid, AghqControl, AghqFit, NormalizedPosterior};
use crate::optimize::{ObjectiveBundle, OptResults};
use crate::rules::{evaluate_rows, product_rule_with_cap};

/// Number of points in the default pdf/cdf grid.
pub const DEFAULT_GRID_POINTS: usize = 1000;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `Σ_j f(θ_j) ω_j π̃(θ_j | Y)` for a vector-valued `f`.
pub fn compute_moment<F>(np: &NormalizedPosterior, f: F) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut acc: Option<DVector<f64>> = None;
    for j in 0..np.len() {
        let theta = np.nodes().row(j).transpose();
        let v = f(&theta);
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(AghqError::non_finite(format!("moment function at node {j}"), *bad));
        }
        let scale = np.weights()[j] * np.logpost_normalized[j].exp();
        match &mut acc {
            Some(a) => {
                if a.len() != v.len() {
                    return Err(AghqError::DimensionMismatch {
                        expected: a.len(),
                        got: v.len(),
                    });
                }
                a.axpy(scale, &v, 1.0);
            }
            None => acc = Some(v * scale),
        }
    }
    acc.ok_or_else(|| AghqError::InvalidArgument("empty posterior grid".into()))
}

/// Scalar convenience wrapper around [`compute_moment`].
pub fn compute_moment_scalar<F>(np: &NormalizedPosterior, f: F) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    Ok(compute_moment(np, |x| DVector::from_element(1, f(x)))?[0])
}

/// Normalized marginal posterior of one coordinate at its `k` support points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalPosterior {
    /// Zero-based coordinate index.
    pub index: usize,
    pub theta: Vec<f64>,
    pub logmargpost: Vec<f64>,
    pub w: Vec<f64>,
    /// Mode coordinate and `(H⁻¹)_tt`, the Gaussian implied by the Laplace fit.
    pub mode: f64,
    pub variance: f64,
}

impl MarginalPosterior {
    pub fn k(&self) -> usize {
        self.theta.len()
    }
}

/// Marginal of the grid's first coordinate from log-posterior values at its
/// nodes. The joint normalization is recomputed on this grid.
pub(crate) fn marginal_from_grid(
    index: usize,
    grid: &AdaptedGrid,
    logpost: &DVector<f64>,
) -> Result<MarginalPosterior> {
    let rule = grid.base.rule_1d();
    let k = rule.k;
    let l00 = grid.cholesky_lower[(0, 0)];
    let lognormconst = log_sum_exp((0..grid.len()).map(|j| logpost[j] + grid.log_weight(j)));

    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); k];
    for j in 0..grid.len() {
        groups[grid.base.index(j, 0)].push(logpost[j] + grid.log_weight(j) - lognormconst);
    }
    let mut theta = Vec::with_capacity(k);
    let mut logmargpost = Vec::with_capacity(k);
    let mut w = Vec::with_capacity(k);
    for (i, group) in groups.into_iter().enumerate() {
        let wi = rule.weights[i] * l00;
        theta.push(grid.mode[0] + l00 * rule.nodes[i]);
        logmargpost.push(log_sum_exp(group.into_iter()) - wi.ln());
        w.push(wi);
    }
    Ok(MarginalPosterior {
        index,
        theta,
        logmargpost,
        w,
        mode: grid.mode[0],
        variance: l00 * l00,
    })
}

fn permutation_to_front(d: usize, t: usize) -> Vec<usize> {
    std::iter::once(t).chain((0..d).filter(|&i| i != t)).collect()
}

/// Marginal posterior of coordinate `t` (zero-based).
pub fn marginal_posterior(
    bundle: &ObjectiveBundle,
    optres: &OptResults,
    k: usize,
    t: usize,
) -> Result<MarginalPosterior> {
    marginal_posterior_with(bundle, optres, k, t, &AghqControl::default())
}

pub(crate) fn marginal_posterior_with(
    bundle: &ObjectiveBundle,
    optres: &OptResults,
    k: usize,
    t: usize,
    control: &AghqControl,
) -> Result<MarginalPosterior> {
    let d = bundle.dim();
    if t >= d {
        return Err(AghqError::InvalidArgument(format!(
            "coordinate {t} out of range for dimension {d}"
        )));
    }
    let perm = permutation_to_front(d, t);
    let mode = DVector::from_fn(d, |i, _| optres.mode[perm[i]]);
    let hessian = DMatrix::from_fn(d, d, |i, j| optres.hessian[(perm[i], perm[j])]);
    let base = product_rule_with_cap(d, k, control.grid_cap)?;
    let grid = adapt_rule(&base, &mode, &hessian)?;

    // evaluate at the grid nodes mapped back to the original coordinate order
    let f = bundle.logpost_fn();
    let unpermute = |x: &DVector<f64>| {
        let mut y = DVector::zeros(d);
        for (i, &p) in perm.iter().enumerate() {
            y[p] = x[i];
        }
        f(&y)
    };
    let values = evaluate_rows(&unpermute, &grid.nodes, control.evaluation)?;
    marginal_from_grid(t, &grid, &DVector::from_vec(values))
}

/// Callable log marginal density built from a [`MarginalPosterior`].
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalInterpolant {
    /// Barycentric form of the Lagrange polynomial through the support points.
    Lagrange {
        theta: Vec<f64>,
        values: Vec<f64>,
        weights: Vec<f64>,
    },
    /// A single support point carries no shape; use the Laplace Gaussian.
    Gaussian { mean: f64, variance: f64 },
}

impl MarginalInterpolant {
    /// Log marginal density at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            MarginalInterpolant::Lagrange { theta, values, weights } => {
                let mut num = 0.0;
                let mut den = 0.0;
                for ((&tj, &yj), &wj) in theta.iter().zip(values).zip(weights) {
                    let diff = x - tj;
                    if diff == 0.0 {
                        return yj;
                    }
                    let c = wj / diff;
                    num += c * yj;
                    den += c;
                }
                num / den
            }
            MarginalInterpolant::Gaussian { mean, variance } => {
                let z = x - mean;
                -0.5 * z * z / variance - 0.5 * variance.ln() - LN_SQRT_2PI
            }
        }
    }
}

pub fn interpolate_marginal(mp: &MarginalPosterior) -> Result<MarginalInterpolant> {
    let k = mp.theta.len();
    if k == 0 || mp.logmargpost.len() != k {
        return Err(AghqError::InvalidMarginal("support and values differ in length".into()));
    }
    if k == 1 {
        if !(mp.variance > 0.0) {
            return Err(AghqError::InvalidMarginal(
                "single-point marginal needs a positive variance".into(),
            ));
        }
        return Ok(MarginalInterpolant::Gaussian {
            mean: mp.theta[0],
            variance: mp.variance,
        });
    }
    let mut weights = vec![1.0; k];
    for j in 0..k {
        for m in 0..k {
            if m != j {
                let diff = mp.theta[j] - mp.theta[m];
                if diff == 0.0 {
                    return Err(AghqError::InvalidMarginal(format!(
                        "duplicate support point {}",
                        mp.theta[j]
                    )));
                }
                weights[j] /= diff;
            }
        }
    }
    Ok(MarginalInterpolant::Lagrange {
        theta: mp.theta.clone(),
        values: mp.logmargpost.clone(),
        weights,
    })
}

/// A monotone reparameterization: `totheta` maps the parameter of interest
/// to the quadrature scale and `fromtheta` maps back.
#[derive(Clone)]
pub struct Transformation {
    totheta: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    fromtheta: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Transformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Transformation { .. }")
    }
}

impl Transformation {
    pub fn new<T, F>(totheta: T, fromtheta: F) -> Self
    where
        T: Fn(f64) -> f64 + Send + Sync + 'static,
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Transformation {
            totheta: Arc::new(totheta),
            fromtheta: Arc::new(fromtheta),
        }
    }

    pub fn identity() -> Self {
        Self::new(|x| x, |x| x)
    }

    /// Quadrature on `η = log λ`.
    pub fn log() -> Self {
        Self::new(f64::ln, f64::exp)
    }

    pub fn totheta(&self, x: f64) -> f64 {
        (self.totheta)(x)
    }

    pub fn fromtheta(&self, x: f64) -> f64 {
        (self.fromtheta)(x)
    }

    /// `d totheta / dλ` by central differences.
    fn jacobian(&self, lambda: f64) -> f64 {
        let h = f64::EPSILON.cbrt() * lambda.abs().max(1.0);
        let (lo, hi) = (lambda - h, lambda + h);
        (self.totheta(hi) - self.totheta(lo)) / (hi - lo)
    }

    fn increasing(&self, theta: &[f64]) -> bool {
        self.fromtheta(theta[theta.len() - 1]) >= self.fromtheta(theta[0])
    }
}

/// Density and CDF of one marginal on a fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfCdfTable {
    pub theta: Vec<f64>,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
    pub transparam: Option<Vec<f64>>,
    pub pdf_transparam: Option<Vec<f64>>,
}

impl PdfCdfTable {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Largest single-step increment of the CDF.
    pub fn max_increment(&self) -> f64 {
        self.cdf.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// CSV with header `theta,pdf,cdf[,transparam,pdf_transparam]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let transformed = self.transparam.as_ref().zip(self.pdf_transparam.as_ref());
        if transformed.is_some() {
            out.write_record(["theta", "pdf", "cdf", "transparam", "pdf_transparam"])?;
        } else {
            out.write_record(["theta", "pdf", "cdf"])?;
        }
        for l in 0..self.len() {
            let mut row = vec![
                self.theta[l].to_string(),
                self.pdf[l].to_string(),
                self.cdf[l].to_string(),
            ];
            if let Some((tp, pt)) = transformed {
                row.push(tp[l].to_string());
                row.push(pt[l].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn default_grid(mp: &MarginalPosterior) -> Vec<f64> {
    let lo = mp.theta.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mp.theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (start, end) = if hi > lo {
        let r = hi - lo;
        (lo - r / 2.0, hi + r / 2.0)
    } else {
        // single support point: five Laplace standard deviations each side
        let sd = mp.variance.sqrt();
        (lo - 5.0 * sd, lo + 5.0 * sd)
    };
    let step = (end - start) / (DEFAULT_GRID_POINTS - 1) as f64;
    (0..DEFAULT_GRID_POINTS).map(|l| start + step * l as f64).collect()
}

/// Interpolated density and left-Riemann CDF of a marginal.
///
/// The default grid spans the support points plus half their range on each
/// side, with 1000 points. With a transformation, the density of
/// `λ = fromtheta(θ)` is `pdf × |d totheta/dλ|`.
pub fn compute_pdf_and_cdf(
    mp: &MarginalPosterior,
    transformation: Option<&Transformation>,
    grid: Option<&[f64]>,
) -> Result<PdfCdfTable> {
    let interp = interpolate_marginal(mp)?;
    let theta = match grid {
        Some(g) => {
            if g.len() < 2 || g.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(AghqError::InvalidArgument(
                    "grid must hold at least two strictly increasing points".into(),
                ));
            }
            g.to_vec()
        }
        None => default_grid(mp),
    };
    let pdf: Vec<f64> = theta.iter().map(|&x| interp.eval(x).exp()).collect();
    let mut cdf = Vec::with_capacity(theta.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for l in 1..theta.len() {
        acc += pdf[l] * (theta[l] - theta[l - 1]);
        cdf.push(acc);
    }

    let (transparam, pdf_transparam) = match transformation {
        None => (None, None),
        Some(tr) => {
            let lambda: Vec<f64> = theta.iter().map(|&x| tr.fromtheta(x)).collect();
            let rising = lambda[lambda.len() - 1] > lambda[0];
            if lambda.windows(2).any(|w| (w[1] > w[0]) != rising || w[1] == w[0]) {
                return Err(AghqError::InvalidTransformation(
                    "fromtheta is not strictly monotone on the grid".into(),
                ));
            }
            let mut dens = Vec::with_capacity(lambda.len());
            let mut sign = 0.0;
            for (l, &lam) in lambda.iter().enumerate() {
                let back = tr.fromtheta(tr.totheta(lam));
                if !(back - lam).abs().le(&(1e-8 * lam.abs().max(1.0))) {
                    return Err(AghqError::InvalidTransformation(format!(
                        "fromtheta(totheta({lam})) = {back}"
                    )));
                }
                let jac = tr.jacobian(lam);
                if !jac.is_finite() || jac == 0.0 || (sign != 0.0 && jac.signum() != sign) {
                    return Err(AghqError::InvalidTransformation(format!(
                        "jacobian {jac} at grid point {l} breaks monotonicity"
                    )));
                }
                sign = jac.signum();
                dens.push(pdf[l] * jac.abs());
            }
            (Some(lambda), Some(dens))
        }
    };

    Ok(PdfCdfTable {
        theta,
        pdf,
        cdf,
        transparam,
        pdf_transparam,
    })
}

/// Index of `min{x_l : F(x_l) ≥ α}`, or the last point if the CDF never
/// reaches `α`.
fn quantile_index(cdf: &[f64], alpha: f64) -> usize {
    cdf.iter().position(|&c| c >= alpha).unwrap_or(cdf.len() - 1)
}

/// Marginal quantiles, optionally of a transformed parameter.
///
/// Quantiles commute with monotone maps, so the transformed quantiles are
/// `fromtheta` applied to quadrature-scale quantiles (of `1 - α` when
/// `fromtheta` is decreasing).
pub fn compute_quantiles(
    mp: &MarginalPosterior,
    probs: &[f64],
    transformation: Option<&Transformation>,
) -> Result<Vec<f64>> {
    if let Some(bad) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(AghqError::InvalidArgument(format!(
            "probability {bad} is not in (0, 1)"
        )));
    }
    let table = compute_pdf_and_cdf(mp, None, None)?;
    let increasing = transformation.is_none_or(|tr| tr.increasing(&table.theta));
    Ok(probs
        .iter()
        .map(|&alpha| {
            let a = if increasing { alpha } else { 1.0 - alpha };
            let x = table.theta[quantile_index(&table.cdf, a)];
            match transformation {
                Some(tr) => tr.fromtheta(x),
                None => x,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub mode: f64,
    pub sd: f64,
    #[serde(rename = "2.5%")]
    pub q025: f64,
    #[serde(rename = "97.5%")]
    pub q975: f64,
}

/// Everything the printed summary of a fit reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub dim: usize,
    pub k: usize,
    pub mode: Vec<f64>,
    pub lognormconst: f64,
    pub hessian: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub cholesky: Vec<Vec<f64>>,
    pub coordinates: Vec<CoordinateSummary>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn summarize(fit: &AghqFit) -> Result<Summary> {
    let np = &fit.normalized_posterior;
    let d = fit.dim();
    let means = compute_moment(np, |x| x.clone())?;
    let mut coordinates = Vec::with_capacity(d);
    for (t, marginal) in fit.marginals.iter().enumerate() {
        let mean = means[t];
        let var = compute_moment_scalar(np, |x| (x[t] - mean).powi(2))?;
        let q = compute_quantiles(marginal, &[0.025, 0.5, 0.975], None)?;
        coordinates.push(CoordinateSummary {
            name: format!("theta{}", t + 1),
            mean,
            median: q[1],
            mode: fit.optresults.mode[t],
            sd: var.max(0.0).sqrt(),
            q025: q[0],
            q975: q[2],
        });
    }
    let grid = &np.grid;
    Ok(Summary {
        dim: d,
        k: fit.k,
        mode: fit.optresults.mode.iter().copied().collect(),
        lognormconst: np.lognormconst,
        hessian: rows(&fit.optresults.hessian),
        covariance: rows(&grid.covariance()),
        cholesky: rows(&grid.cholesky_lower),
        coordinates,
    })
}

fn write_matrix(f: &mut fmt::Formatter<'_>, m: &[Vec<f64>]) -> fmt::Result {
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.4}")).collect();
        writeln!(f, "  {}", cells.join(" "))?;
    }
    Ok(())
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "AGHQ on a {} dimensional posterior with {} quadrature points\n",
            self.dim, self.k
        )?;
        let mode: Vec<String> = self.mode.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(f, "The posterior mode is: {}\n", mode.join(" "))?;
        writeln!(
            f,
            "The log of the normalizing constant/marginal likelihood is: {:.4}\n",
            self.lognormconst
        )?;
        writeln!(f, "The posterior Hessian at the mode is:")?;
        write_matrix(f, &self.hessian)?;
        writeln!(f, "\nThe covariance matrix used for the quadrature is...")?;
        write_matrix(f, &self.covariance)?;
        writeln!(f, "\n...and its Cholesky is:")?;
        write_matrix(f, &self.cholesky)?;
        writeln!(f, "\nHere are some moments and quantiles for theta:\n")?;
        writeln!(
            f,
            "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "", "mean", "median", "mode", "sd", "2.5%", "97.5%"
        )?;
        for c in &self.coordinates {
            writeln!(
                f,
                "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                c.name, c.mean, c.median, c.mode, c.sd, c.q025, c.q975
            )?;
        }
        Ok(())
    }
}
