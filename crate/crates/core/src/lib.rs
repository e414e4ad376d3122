pub mod autodiff;
pub mod condgen;
pub mod corpus;
pub mod rng;
pub mod seqnets;
pub mod smiles;
pub mod ssvae;

pub use condgen::{GaussianPrior, GenerationReport, GenerationRequest, Generator};
pub use corpus::{RawDataset, Vocabulary};
pub use seqnets::{NetConfig, NetworkBundle, Preset};
pub use ssvae::{SsvaeError, SsvaeModel, TrainConfig};
