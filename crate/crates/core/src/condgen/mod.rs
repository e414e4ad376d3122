//! Property prior, conditional sampling, beam-search decoding and the
//! generation pipeline.

mod beam;
mod gaussian;
mod generate;

use thiserror::Error;

pub use beam::{beam_search, greedy_decode, rank, BeamHypothesis, BundleDecoder, StepDecoder};
pub use gaussian::{condition, condition_gaussian, fit_prior, sample_y, Conditional, GaussianPrior, PRIOR_JITTER};
pub use generate::{
    histogram, mean_std, ConditionSummary, GeneratedMolecule, GenerationReport, GenerationRequest, Generator, Outcome,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CondGenError {
    #[error("need at least {needed} labeled examples to fit the prior, found {found}")]
    TooFewLabels { needed: usize, found: usize },
    #[error("label covariance is degenerate")]
    DegeneratePrior,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("invalid target for property {0}")]
    InvalidTarget(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("decoder failed: {0}")]
    Decode(String),
}
