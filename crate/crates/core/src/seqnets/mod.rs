//! GRU networks and Gaussian heads for the predictor q(y|x), the encoder
//! q(z|x,y) and the decoder p(x|y,z).

mod bundle;
mod gru;
mod heads;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;

pub use bundle::{BiGru, DecoderState, NetworkBundle};
pub use gru::{gru_step, GruLayer, StepInput};
pub use heads::{reparameterized_sample, Gaussian, GaussianHead, LOGVAR_MAX, LOGVAR_MIN};

/// Network sizes shared by the predictor, encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub vocab: usize,
    pub props: usize,
    pub latent: usize,
    pub hidden: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 1 layer of 32 units, 8 latent dimensions.
    Desk,
    /// 3 layers of 250 units, 100 latent dimensions.
    Large,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Preset> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Some(Preset::Desk),
            "large" => Some(Preset::Large),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Large => "large",
        }
    }

    pub fn config(self, vocab: usize, props: usize) -> NetConfig {
        match self {
            Preset::Desk => NetConfig { vocab, props, latent: 8, hidden: 32, layers: 1 },
            Preset::Large => NetConfig { vocab, props, latent: 100, hidden: 250, layers: 3 },
        }
    }
}

/// A step-major padded batch of token sequences. Rows past a sequence's
/// end hold index 0 and are masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    tokens: Vec<Vec<usize>>,
    lengths: Vec<usize>,
}

impl SeqBatch {
    pub fn new(seqs: &[&TokenSequence]) -> Self {
        let rows: Vec<&[usize]> = seqs.iter().map(|s| s.indices()).collect();
        Self::from_indices(&rows)
    }

    /// Batch of raw index rows; no terminal is required.
    pub fn from_indices(rows: &[&[usize]]) -> Self {
        let steps = rows.iter().map(|s| s.len()).max().unwrap_or(0);
        let tokens = (0..steps).map(|t| rows.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect()).collect();
        SeqBatch { tokens, lengths: rows.iter().map(|s| s.len()).collect() }
    }

    pub fn steps(&self) -> usize {
        self.tokens.len()
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Token index of every row at step `t`.
    pub fn tokens_at(&self, t: usize) -> &[usize] {
        &self.tokens[t]
    }

    /// 1 for rows still inside their sequence at step `t`, `None` when all are.
    pub fn active(&self, t: usize) -> Option<Vec<f64>> {
        if self.lengths.iter().all(|&l| l > t) {
            None
        } else {
            Some(self.lengths.iter().map(|&l| if l > t { 1.0 } else { 0.0 }).collect())
        }
    }

    /// Step-major targets, matching the row order of the decoder's logits.
    pub fn flat_targets(&self) -> Vec<usize> {
        self.tokens.concat()
    }

    /// Step-major 0/1 weights of real (non-padding) positions.
    pub fn flat_mask(&self) -> Vec<f64> {
        (0..self.steps())
            .flat_map(|t| self.lengths.iter().map(move |&l| if l > t { 1.0 } else { 0.0 }))
            .collect()
    }
}
