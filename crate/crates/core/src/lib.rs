//! Adaptive Gauss-Hermite quadrature (AGHQ) for Bayesian inference.
//!
//! The workflow: locate the mode of a log-posterior ([`optimize_theta`]),
//! place a Gauss-Hermite product grid on it scaled by the inverse-Hessian
//! Cholesky factor ([`adapt_rule`]), and normalize ([`normalize_logpost`]).
//! [`aghq`] runs all three and adds per-coordinate marginals, from which
//! moments, densities, CDFs and quantiles follow ([`summaries`]).
//!
//! For models with a high-dimensional latent Gaussian field,
//! [`marginal_laplace`] integrates the latent variables by a Laplace
//! approximation at every hyperparameter node and [`sample_marginal`] draws
//! from the resulting Gaussian mixture.

pub mod error;
pub mod fit;
pub mod laplace;
pub mod optimize;
pub mod rules;
pub mod sparse;
pub mod summaries;

pub use error::{AghqError, Result};
pub use fit::{
    adapt_rule, aghq, aghq_with, laplace_log_normconst, normalize_logpost, normalize_logpost_with, AdaptedGrid,
    AghqControl, AghqFit, NodeRow, NormalizedPosterior,
};
pub use laplace::{
    laplace_profile, marginal_laplace, sample_marginal, LaplaceProfile, LatentBundle, MarginalLaplaceControl,
    MarginalLaplaceFit, ModeAndHessian, PosteriorSamples,
};
pub use optimize::{
    finite_diff_gradient, finite_diff_hessian, optimize_theta, Convergence, FiniteDiffStep, ObjectiveBundle,
    OptControl, OptMethod, OptResults,
};
pub use rules::{
    ghq_rule_1d, hermite_eval, product_rule, product_rule_with_cap, quadrature, quadrature_with, Evaluation,
    QuadRule1D, QuadRuleProduct, DEFAULT_GRID_CAP,
};
pub use summaries::{
    compute_moment, compute_pdf_and_cdf, compute_quantiles, interpolate_marginal, marginal_posterior, summarize,
    CoordinateSummary, MarginalInterpolant, MarginalPosterior, PdfCdfTable, Summary, Transformation,
};
