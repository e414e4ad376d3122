//! The semi-supervised objective, its training loop and property prediction.

mod kl;
mod loss;
mod model;
mod prepare;
mod train;

use thiserror::Error;

use crate::autodiff::{AutodiffError, CheckpointError};
use crate::condgen::CondGenError;
use crate::corpus::CorpusError;

pub use kl::{kl_diag_vs_full, kl_diag_vs_prior, kl_diag_vs_standard, kl_prior_rows, kl_standard_rows};
pub use loss::{
    label_tensor, labeled_loss, normal_noise, reconstruction_nll, squared_error, total_loss, unlabeled_loss,
    LabeledTerms, LossBreakdown, Objective, UnlabeledTerms,
};
pub use model::{mae, SsvaeModel};
pub use prepare::{prepare, prepare_with_vocab, DataConfig, PreparedData};
pub use train::{
    evaluate, labeled_mae, train, train_resumable, EarlyStopping, EpochRecord, Monitor, Observation, StopReason,
    TrainConfig, TrainData, TrainHistory, TrainState,
};

#[derive(Debug, Error)]
pub enum SsvaeError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite value at epoch {epoch}, step {step}: {source}")]
    NonFinite {
        epoch: usize,
        step: usize,
        #[source]
        source: AutodiffError,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    CondGen(#[from] CondGenError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training set has no labeled examples")]
    NoLabels,
}
