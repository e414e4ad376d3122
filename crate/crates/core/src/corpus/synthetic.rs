use std::collections::HashSet;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::rng;
use crate::smiles::{parse_smiles, LogpProxy, MolWt, PropertyOracle};

use super::{CorpusError, RawDataset, Record};

/// Chain fragments and their relative frequencies. Every concatenation of
/// fragments is a valid molecule.
const FRAGMENTS: [(&str, f64); 14] = [
    ("C", 3.0),
    ("O", 1.5),
    ("N", 1.5),
    ("S", 0.5),
    ("C(C)", 1.0),
    ("C(=O)", 1.0),
    ("C(O)", 1.0),
    ("C(N)", 1.0),
    ("C=C", 0.5),
    ("C(F)", 0.5),
    ("C(Cl)", 0.5),
    ("C1CC1", 0.5),
    ("c1ccccc1", 0.7),
    ("c1ccncc1", 0.5),
];

/// Shape of a synthetic corpus of chain molecules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub size: usize,
    pub min_fragments: usize,
    pub max_fragments: usize,
    /// Longest accepted string in symbols, terminal excluded.
    pub max_symbols: usize,
    /// Probability of a halogen cap at each end.
    pub cap_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { size: 2000, min_fragments: 2, max_fragments: 10, max_symbols: 30, cap_probability: 0.15, seed: 0 }
    }
}

fn draw_molecule<R: Rng>(cfg: &SyntheticConfig, weights: &WeightedIndex<f64>, r: &mut R) -> String {
    let mut s = String::new();
    let cap = |r: &mut R| if r.random_bool(0.5) { "F" } else { "Cl" };
    if r.random_bool(cfg.cap_probability) {
        s.push_str(cap(r));
    }
    for _ in 0..r.random_range(cfg.min_fragments..=cfg.max_fragments) {
        s.push_str(FRAGMENTS[weights.sample(r)].0);
    }
    if r.random_bool(cfg.cap_probability) {
        s.push_str(cap(r));
    }
    s
}

/// `size` distinct valid molecules labeled with `MolWt` and `LogP`.
pub fn synthetic_corpus(cfg: &SyntheticConfig) -> Result<RawDataset, CorpusError> {
    assert!(cfg.min_fragments >= 1 && cfg.min_fragments <= cfg.max_fragments, "fragment range");
    let weights = WeightedIndex::new(FRAGMENTS.iter().map(|f| f.1)).expect("positive weights");
    let mut r = rng::stream(rng::derive(cfg.seed, "synthetic"), 0);
    let oracles: [Box<dyn PropertyOracle>; 2] = [Box::new(MolWt), Box::new(LogpProxy::default())];
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(cfg.size);
    let mut attempts = 0usize;
    while records.len() < cfg.size {
        attempts += 1;
        if attempts > 1000 * cfg.size.max(1) {
            return Err(CorpusError::EmptyCorpus);
        }
        let s = draw_molecule(cfg, &weights, &mut r);
        let symbols = crate::smiles::tokenize(&s).map(|t| t.len()).unwrap_or(usize::MAX);
        if symbols > cfg.max_symbols || seen.contains(&s) {
            continue;
        }
        let g = parse_smiles(&s).map_err(|source| CorpusError::Lex { line: None, source })?;
        let label = oracles.iter().map(|o| o.evaluate(&g)).collect();
        seen.insert(s.clone());
        records.push(Record { smiles: s, label: Some(label), line: records.len() + 2 });
    }
    Ok(RawDataset {
        property_names: oracles.iter().map(|o| o.name().to_owned()).collect(),
        records,
        skipped_too_long: 0,
    })
}

/// Writes a dataset in the `smiles,<prop>...` CSV layout read by `read_dataset`.
pub fn write_dataset<W: Write>(ds: &RawDataset, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["smiles".to_owned()];
    header.extend(ds.property_names.iter().cloned());
    w.write_record(&header)?;
    for rec in &ds.records {
        let mut row = vec![rec.smiles.clone()];
        match &rec.label {
            Some(y) => row.extend(y.iter().map(f64::to_string)),
            None => row.extend(ds.property_names.iter().map(|_| String::new())),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{read_dataset, DEFAULT_MAX_LEN};
    use crate::smiles::validate;

    #[test]
    fn corpus_is_unique_valid_and_labeled() {
        let ds = synthetic_corpus(&SyntheticConfig { size: 500, ..SyntheticConfig::default() }).unwrap();
        assert_eq!(ds.records.len(), 500);
        let distinct: HashSet<_> = ds.records.iter().map(|r| &r.smiles).collect();
        assert_eq!(distinct.len(), 500);
        for r in &ds.records {
            assert!(validate(&r.smiles).is_valid(), "{}", r.smiles);
            let g = parse_smiles(&r.smiles).unwrap();
            let y = r.label.as_ref().unwrap();
            assert_eq!(y[0], MolWt.evaluate(&g));
            assert!(crate::smiles::tokenize(&r.smiles).unwrap().len() <= 30);
        }
    }

    #[test]
    fn every_fragment_junction_is_valid() {
        for (a, _) in FRAGMENTS {
            for (b, _) in FRAGMENTS {
                for s in [format!("{a}{b}"), format!("F{a}{b}Cl")] {
                    assert!(validate(&s).is_valid(), "{s}");
                }
            }
        }
    }

    #[test]
    fn seeded_and_round_trips_through_csv() {
        let cfg = SyntheticConfig { size: 50, seed: 3, ..SyntheticConfig::default() };
        let a = synthetic_corpus(&cfg).unwrap();
        assert_eq!(a, synthetic_corpus(&cfg).unwrap());
        assert_ne!(a.records, synthetic_corpus(&SyntheticConfig { seed: 4, ..cfg }).unwrap().records);
        let mut buf = Vec::new();
        write_dataset(&a, &mut buf).unwrap();
        let back = read_dataset(&buf[..], None, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(back.property_names, a.property_names);
        assert_eq!(back.records, a.records);
    }
}
