use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, AghqError>;

#[derive(Debug, Error)]
pub enum AghqError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature grid of {points} points exceeds the cap of {cap}")]
    GridTooLarge { points: u128, cap: usize },

    /// A callback returned a non-finite value. `location` names the node
    /// index or coordinate being probed.
    #[error("non-finite evaluation at {location}: got {value}")]
    NonFiniteEvaluation { location: String, value: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The optimizer stopped at a point whose negative Hessian is not PD.
    #[error(
        "optimizer stopped at a point that is not a strict local maximum (negative Hessian not positive definite)"
    )]
    ModeNotMaximum,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    #[error("invalid transformation: {0}")]
    InvalidTransformation(String),

    #[error("inner optimization failed at theta = {theta:?}: {source}")]
    InnerOptimization {
        theta: Vec<f64>,
        #[source]
        source: Box<AghqError>,
    },

    #[error("corrupt fit: {0}")]
    CorruptFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl AghqError {
    pub(crate) fn non_finite(location: impl Into<String>, value: f64) -> Self {
        AghqError::NonFiniteEvaluation {
            location: location.into(),
            value,
        }
    }

    pub(crate) fn inner(theta: &DVector<f64>, source: AghqError) -> Self {
        AghqError::InnerOptimization {
            theta: theta.iter().copied().collect(),
            source: Box::new(source),
        }
    }
}
