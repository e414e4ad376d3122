//! Vocabulary construction, dataset ingestion and mini-batching.

mod batch;
mod dataset;
mod synthetic;
mod vocab;

use thiserror::Error;

use crate::smiles::SmilesError;

pub use batch::{batches, balanced_batch_sizes, BatchPlan, EpochBatches};
pub use dataset::{
    encode_records, mask_labels, normalize_labels, read_dataset, split, Example, NormalizationStats,
    RawDataset, Record, DEFAULT_MAX_LEN,
};
pub use synthetic::{synthetic_corpus, write_dataset, SyntheticConfig};
pub use vocab::{build_vocab, TokenSequence, Vocabulary, TERMINAL};

/// A vector of `m` continuous molecular properties.
pub type PropertyVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}invalid SMILES: {source}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Lex {
        line: Option<usize>,
        #[source]
        source: SmilesError,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("symbol {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("index {0} is outside the vocabulary")]
    IndexOutOfRange(usize),
    #[error("token sequence must end with exactly one terminal symbol")]
    MisplacedTerminal,
    #[error("vocabulary file: {0}")]
    VocabularyFormat(String),
    #[error("property {index} has zero variance over the labeled examples")]
    DegenerateProperty { index: usize },
    #[error("need at least {needed} labeled examples, found {found}")]
    TooFewLabels { needed: usize, found: usize },
    #[error("dataset header: {0}")]
    Header(String),
    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions(Vec<f64>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
