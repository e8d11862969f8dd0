//! Small convolutional classifier, gradient checking, layer freezing and
//! the domain-transfer experiments built on them.

use thiserror::Error;

mod experiment;
mod gradcheck;
mod histogram;
mod net;

pub use experiment::*;
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport, GRAD_CHECK_WEIGHTS};
pub use histogram::{
    euclidean, extractor_lipschitz_bound, feature_distance_histogram, feature_distances, histogram_from_distances,
    histogram_with_range, DistanceHistogram,
};
pub use net::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    EmptyInput,
    #[error("loss is not finite at step {step}")]
    NumericalOverflow { step: u64 },
    #[error("data generation failed: {0}")]
    Data(String),
}
