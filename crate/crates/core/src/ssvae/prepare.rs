use serde::{Deserialize, Serialize};

use crate::condgen::{fit_prior, GaussianPrior};
use crate::corpus::{build_vocab, encode_records, mask_labels, split, Example, NormalizationStats, RawDataset, Vocabulary};
use crate::seqnets::NetworkBundle;

use super::{SsvaeError, SsvaeModel};

/// How a raw dataset becomes training, validation and test sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Fraction of the training set that keeps its labels.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { split: [0.8, 0.1, 0.1], labeled_fraction: 1.0, seed: 0 }
    }
}

/// Encoded, split and normalized data with the statistics fitted on it.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub stats: NormalizationStats,
    pub prior: GaussianPrior,
    pub property_names: Vec<String>,
    /// Normalized labels; unlabeled examples carry `None`.
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Longest training sequence, terminal included.
    pub max_len: usize,
}

impl PreparedData {
    /// Wraps a trained bundle into a model that remembers this data's statistics.
    pub fn into_model(self, bundle: NetworkBundle, max_len: usize) -> SsvaeModel {
        SsvaeModel {
            vocab: self.vocab,
            stats: self.stats,
            prior: self.prior,
            bundle,
            property_names: self.property_names,
            max_len,
            training_smiles: self.train.iter().map(|e| e.source.clone()).collect(),
        }
    }
}

/// Builds the vocabulary over the whole dataset, splits it, masks training
/// labels, and fits normalization and the label prior on the labeled
/// training examples only. Validation and test sets keep their labels.
pub fn prepare(raw: &RawDataset, cfg: &DataConfig) -> Result<PreparedData, SsvaeError> {
    let vocab = build_vocab(&raw.smiles())?;
    prepare_with_vocab(raw, vocab, cfg)
}

pub fn prepare_with_vocab(raw: &RawDataset, vocab: Vocabulary, cfg: &DataConfig) -> Result<PreparedData, SsvaeError> {
    if !(0.0..=1.0).contains(&cfg.labeled_fraction) {
        return Err(SsvaeError::Config("labeled fraction must be in [0, 1]".into()));
    }
    let (examples, _) = encode_records(&raw.records, &vocab, false)?;
    let (train, val, test) = split(&examples, &cfg.split, cfg.seed)?;
    let train = mask_labels(&train, cfg.labeled_fraction, cfg.seed);
    if !train.iter().any(|e| e.label.is_some()) {
        return Err(SsvaeError::NoLabels);
    }
    let stats = NormalizationStats::fit(train.iter().filter_map(|e| e.label.as_ref()))?;
    let (train, val, test) = (stats.apply(&train), stats.apply(&val), stats.apply(&test));
    let ys: Vec<Vec<f64>> = train.iter().filter_map(|e| e.label.clone()).collect();
    let prior = fit_prior(&ys)?;
    let max_len = train.iter().map(|e| e.sequence.len()).max().unwrap_or(1);
    Ok(PreparedData { vocab, stats, prior, property_names: raw.property_names.clone(), train, val, test, max_len })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic_corpus, SyntheticConfig};

    #[test]
    fn statistics_come_from_labeled_training_examples() {
        let raw = synthetic_corpus(&SyntheticConfig { size: 200, ..SyntheticConfig::default() }).unwrap();
        let d = prepare(&raw, &DataConfig { labeled_fraction: 0.25, seed: 4, ..DataConfig::default() }).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (160, 20, 20));
        let labeled: Vec<&Vec<f64>> = d.train.iter().filter_map(|e| e.label.as_ref()).collect();
        assert_eq!(labeled.len(), 40);
        for i in 0..2 {
            let mean = labeled.iter().map(|y| y[i]).sum::<f64>() / 40.0;
            let var = labeled.iter().map(|y| (y[i] - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        assert!(d.val.iter().chain(&d.test).all(|e| e.label.is_some()));
        assert!(d.prior.mean().iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn no_labels_is_an_error() {
        let raw = synthetic_corpus(&SyntheticConfig { size: 50, ..SyntheticConfig::default() }).unwrap();
        assert!(matches!(prepare(&raw, &DataConfig { labeled_fraction: 0.0, ..DataConfig::default() }), Err(SsvaeError::NoLabels)));
    }
}
