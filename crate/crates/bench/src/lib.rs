//! Shared fixtures for the benchmarks.

use ssvae_core::corpus::{synthetic_corpus, SyntheticConfig};
use ssvae_core::ssvae::{prepare, DataConfig, PreparedData};
use ssvae_core::{NetworkBundle, Preset};

/// Prepared synthetic data with half the labels and an untrained desk-preset bundle.
pub struct Fixture {
    pub data: PreparedData,
    pub bundle: NetworkBundle,
}

pub fn fixture(size: usize) -> Fixture {
    let raw = synthetic_corpus(&SyntheticConfig { size, seed: 11, ..SyntheticConfig::default() }).expect("synthetic corpus");
    let data = prepare(&raw, &DataConfig { labeled_fraction: 0.5, seed: 11, ..DataConfig::default() }).expect("prepare");
    let bundle = NetworkBundle::new(Preset::Desk.config(data.vocab.len(), data.property_names.len()), 11);
    Fixture { data, bundle }
}

/// SMILES strings from the synthetic corpus.
pub fn smiles(size: usize) -> Vec<String> {
    synthetic_corpus(&SyntheticConfig { size, seed: 12, ..SyntheticConfig::default() })
        .expect("synthetic corpus")
        .records
        .into_iter()
        .map(|r| r.smiles)
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_has_both_pools() {
        let f = super::fixture(100);
        let labeled = f.data.train.iter().filter(|e| e.label.is_some()).count();
        assert!(labeled > 0 && labeled < f.data.train.len());
        assert_eq!(super::smiles(10).len(), 10);
    }
}
