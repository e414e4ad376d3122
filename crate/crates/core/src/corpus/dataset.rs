use std::io::Read;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::smiles::tokenize;

use super::{CorpusError, PropertyVector, TokenSequence, Vocabulary};

/// Longest accepted sequence, terminal included.
pub const DEFAULT_MAX_LEN: usize = 120;

/// One dataset row before vocabulary encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub smiles: String,
    pub label: Option<PropertyVector>,
    /// 1-based line in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub property_names: Vec<String>,
    pub records: Vec<Record>,
    /// Rows dropped because their sequence would exceed `max_len`.
    pub skipped_too_long: usize,
}

impl RawDataset {
    pub fn smiles(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.smiles.as_str()).collect()
    }
}

/// Reads a `smiles,<prop1>,<prop2>,...` CSV. Empty property cells mark an
/// unlabeled row; lines starting with `#` are comments. When `columns` is
/// given only those properties are kept, in that order.
pub fn read_dataset<R: Read>(
    reader: R,
    columns: Option<&[String]>,
    max_len: usize,
) -> Result<RawDataset, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("smiles") {
        return Err(CorpusError::Header("first column must be `smiles`".into()));
    }
    let available: Vec<&str> = header.iter().skip(1).collect();
    let selected: Vec<(usize, String)> = match columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                available
                    .iter()
                    .position(|a| a == c)
                    .map(|p| (p + 1, c.clone()))
                    .ok_or_else(|| CorpusError::Header(format!("no column named {c:?}")))
            })
            .collect::<Result<_, _>>()?,
        None => available.iter().enumerate().map(|(i, c)| (i + 1, (*c).to_owned())).collect(),
    };

    let mut records = Vec::new();
    let mut skipped_too_long = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let smiles = row.get(0).unwrap_or("").to_owned();
        let tokens = tokenize(&smiles).map_err(|source| CorpusError::Lex { line: Some(line), source })?;
        if tokens.len() + 1 > max_len {
            skipped_too_long += 1;
            continue;
        }
        let cells: Vec<&str> = selected.iter().map(|(i, _)| row.get(*i).unwrap_or("")).collect();
        let label = if cells.iter().all(|c| c.is_empty()) {
            None
        } else if cells.iter().any(|c| c.is_empty()) {
            return Err(CorpusError::Record { line, reason: "row is only partially labeled".into() });
        } else {
            let values = cells
                .iter()
                .zip(&selected)
                .map(|(c, (_, name))| {
                    c.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CorpusError::Record {
                        line,
                        reason: format!("{name}: {c:?} is not a finite number"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(values)
        };
        records.push(Record { smiles, label, line });
    }
    if skipped_too_long > 0 {
        warn!("skipped {skipped_too_long} sequences longer than {max_len} symbols");
    }
    Ok(RawDataset {
        property_names: selected.into_iter().map(|(_, n)| n).collect(),
        records,
        skipped_too_long,
    })
}

/// A vocabulary-encoded molecule with an optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sequence: TokenSequence,
    pub label: Option<PropertyVector>,
    pub source: String,
}

/// Encodes records against `vocab`. With `skip_unknown`, rows containing
/// out-of-vocabulary symbols are dropped and counted; otherwise they are errors.
pub fn encode_records(
    records: &[Record],
    vocab: &Vocabulary,
    skip_unknown: bool,
) -> Result<(Vec<Example>, usize), CorpusError> {
    let mut out = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        match vocab.encode(&r.smiles) {
            Ok(sequence) => out.push(Example {
                sequence,
                label: r.label.clone(),
                source: r.smiles.clone(),
            }),
            Err(CorpusError::OutOfVocabulary(_)) if skip_unknown => skipped += 1,
            Err(CorpusError::Lex { source, .. }) => {
                return Err(CorpusError::Lex { line: Some(r.line), source });
            }
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} rows with symbols outside the vocabulary");
    }
    Ok((out, skipped))
}

/// Per-property affine map to zero mean and unit (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit<'a, I>(labels: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a PropertyVector>,
    {
        let labels: Vec<&PropertyVector> = labels.into_iter().collect();
        if labels.len() < 2 {
            return Err(CorpusError::TooFewLabels { needed: 2, found: labels.len() });
        }
        let m = labels[0].len();
        let n = labels.len() as f64;
        let mut mean = vec![0.0; m];
        for y in &labels {
            for (acc, v) in mean.iter_mut().zip(y.iter()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; m];
        for y in &labels {
            for ((acc, v), mu) in var.iter_mut().zip(y.iter()).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        if let Some(index) = std
            .iter()
            .zip(&mean)
            .position(|(s, mu)| *s <= 1e-12 * mu.abs().max(1.0))
        {
            return Err(CorpusError::DegenerateProperty { index });
        }
        Ok(NormalizationStats { mean, std })
    }

    pub fn num_properties(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, y: &[f64]) -> PropertyVector {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (mu, s))| (v - mu) / s)
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> PropertyVector {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (mu, s))| v * s + mu)
            .collect()
    }

    pub fn normalize_one(&self, index: usize, value: f64) -> f64 {
        (value - self.mean[index]) / self.std[index]
    }

    pub fn denormalize_one(&self, index: usize, value: f64) -> f64 {
        value * self.std[index] + self.mean[index]
    }

    /// Returns copies of `ds` with labels mapped into normalized units.
    pub fn apply(&self, ds: &[Example]) -> Vec<Example> {
        ds.iter()
            .map(|e| Example {
                label: e.label.as_ref().map(|y| self.normalize(y)),
                ..e.clone()
            })
            .collect()
    }
}

/// Fits normalization statistics on the labeled examples of `ds` and applies them.
pub fn normalize_labels(ds: &[Example]) -> Result<(Vec<Example>, NormalizationStats), CorpusError> {
    let stats = NormalizationStats::fit(ds.iter().filter_map(|e| e.label.as_ref()))?;
    Ok((stats.apply(ds), stats))
}

/// Seeded partition into train, validation and test parts. With two
/// fractions the test part is empty.
pub fn split<T: Clone>(
    items: &[T],
    fractions: &[f64],
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), CorpusError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty()
        || fractions.len() > 3
        || fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (sum - 1.0).abs() > 1e-9
    {
        return Err(CorpusError::BadFractions(fractions.to_vec()));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::derive(seed, "split"), 0));

    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = match fractions.len() {
        1 => 0,
        2 => n - n_train,
        _ => ((fractions[1] * n as f64).round() as usize).min(n - n_train),
    };
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| items[i].clone()).collect();
    Ok((
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    ))
}

/// Keeps labels on `round(fraction * len)` seeded-random labeled examples
/// and strips the rest.
pub fn mask_labels(ds: &[Example], fraction: f64, seed: u64) -> Vec<Example> {
    let fraction = fraction.clamp(0.0, 1.0);
    let mut labeled: Vec<usize> = (0..ds.len()).filter(|&i| ds[i].label.is_some()).collect();
    labeled.shuffle(&mut rng::stream(rng::derive(seed, "mask"), 0));
    let keep = ((fraction * ds.len() as f64).round() as usize).min(labeled.len());
    let mut kept = vec![false; ds.len()];
    for &i in &labeled[..keep] {
        kept[i] = true;
    }
    ds.iter()
        .zip(kept)
        .map(|(e, k)| Example {
            label: if k { e.label.clone() } else { None },
            ..e.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example(vocab: &Vocabulary, s: &str, y: Option<Vec<f64>>) -> Example {
        Example { sequence: vocab.encode(s).unwrap(), label: y, source: s.into() }
    }

    fn labeled(ys: &[f64]) -> Vec<Example> {
        let v = Vocabulary::from_symbols(["C"]).unwrap();
        ys.iter().map(|&y| example(&v, "C", Some(vec![y]))).collect()
    }

    #[test]
    fn reads_labeled_and_unlabeled_rows() {
        let csv = "smiles,molwt,logp\n# comment\nCC,30.07,1.0\nCO,,\nc1ccccc1,78.1,2.0\n";
        let ds = read_dataset(csv.as_bytes(), None, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(ds.property_names, ["molwt", "logp"]);
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.records[0].label, Some(vec![30.07, 1.0]));
        assert_eq!(ds.records[1].label, None);
        assert_eq!(ds.records[2].line, 5);
    }

    #[test]
    fn column_selection_and_errors() {
        let csv = "smiles,a,b\nCC,1,2\n";
        let cols = vec!["b".to_string()];
        let ds = read_dataset(csv.as_bytes(), Some(&cols), DEFAULT_MAX_LEN).unwrap();
        assert_eq!(ds.records[0].label, Some(vec![2.0]));
        let missing = vec!["c".to_string()];
        assert!(matches!(read_dataset(csv.as_bytes(), Some(&missing), 120), Err(CorpusError::Header(_))));
        assert!(matches!(read_dataset("mol,a\nC,1\n".as_bytes(), None, 120), Err(CorpusError::Header(_))));
        let partial = "smiles,a,b\nCC,1,\n";
        assert!(matches!(read_dataset(partial.as_bytes(), None, 120), Err(CorpusError::Record { line: 2, .. })));
        let bad = "smiles,a\nCC,abc\n";
        assert!(matches!(read_dataset(bad.as_bytes(), None, 120), Err(CorpusError::Record { line: 2, .. })));
        let lex = "smiles,a\nCC,1\nC.C,2\n";
        assert!(matches!(read_dataset(lex.as_bytes(), None, 120), Err(CorpusError::Lex { line: Some(3), .. })));
    }

    #[test]
    fn long_sequences_are_skipped_and_counted() {
        let csv = "smiles,a\nCCCC,1\nCC,2\n";
        let ds = read_dataset(csv.as_bytes(), None, 4).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.skipped_too_long, 1);
    }

    #[test]
    fn normalization_uses_population_std() {
        let (normed, stats) = normalize_labels(&labeled(&[1.0, 3.0])).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        let ys: Vec<f64> = normed.iter().map(|e| e.label.as_ref().unwrap()[0]).collect();
        assert_eq!(ys, vec![-1.0, 1.0]);
    }

    #[test]
    fn normalizing_normalized_data_is_identity() {
        let (once, _) = normalize_labels(&labeled(&[0.3, -1.2, 4.0, 2.2])).unwrap();
        let (twice, stats) = normalize_labels(&once).unwrap();
        assert!((stats.mean[0]).abs() < 1e-12 && (stats.std[0] - 1.0).abs() < 1e-12);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a.label.as_ref().unwrap()[0] - b.label.as_ref().unwrap()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_labels_are_degenerate() {
        assert!(matches!(normalize_labels(&labeled(&[5.0, 5.0, 5.0])), Err(CorpusError::DegenerateProperty { index: 0 })));
        assert!(matches!(normalize_labels(&labeled(&[5.0])), Err(CorpusError::TooFewLabels { .. })));
    }

    #[test]
    fn split_sizes() {
        let items: Vec<u32> = (0..100).collect();
        let (tr, va, te) = split(&items, &[0.95, 0.05], 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (95, 5, 0));
        assert_eq!(split(&items, &[0.95, 0.05], 3).unwrap().0, tr);
        let (tr, va, _) = split(&items, &[1.0, 0.0], 3).unwrap();
        assert_eq!((tr.len(), va.len()), (100, 0));
        let (tr, va, te) = split(&items, &[0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        assert!(split(&items, &[0.5, 0.4], 0).is_err());
        assert!(split(&items, &[1.5, -0.5], 0).is_err());
    }

    #[test]
    fn mask_keeps_the_requested_fraction() {
        let ds = labeled(&(0..150).map(f64::from).collect::<Vec<_>>());
        let masked = mask_labels(&ds, 0.5, 1);
        assert_eq!(masked.iter().filter(|e| e.label.is_some()).count(), 75);
        assert_eq!(mask_labels(&ds, 1.0, 1), ds);
        assert!(mask_labels(&ds, 0.0, 1).iter().all(|e| e.label.is_none()));
        assert_eq!(mask_labels(&ds, 0.5, 1), masked);
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(ys in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
            prop_assume!(ys.iter().any(|y| (y - ys[0]).abs() > 1e-3));
            let ds = labeled(&ys);
            let (normed, stats) = normalize_labels(&ds).unwrap();
            for (orig, n) in ds.iter().zip(&normed) {
                let back = stats.denormalize(n.label.as_ref().unwrap())[0];
                let y = orig.label.as_ref().unwrap()[0];
                prop_assert!((back - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }

        #[test]
        fn split_is_a_partition(n in 0usize..200, f in 0.0f64..1.0, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (a, b, c) = split(&items, &[f, 1.0 - f], seed).unwrap();
            let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
            prop_assert!((a.len() as f64 - f * n as f64).abs() <= 0.5 + 1e-9);
        }

        #[test]
        fn masking_preserves_sequences(n in 1usize..100, f in 0.0f64..=1.0, seed in any::<u64>()) {
            let ds = labeled(&(0..n).map(|i| i as f64).collect::<Vec<_>>());
            let masked = mask_labels(&ds, f, seed);
            prop_assert_eq!(masked.len(), ds.len());
            for (a, b) in ds.iter().zip(&masked) {
                prop_assert_eq!(&a.sequence, &b.sequence);
                if let Some(y) = &b.label { prop_assert_eq!(Some(y), a.label.as_ref()); }
            }
            prop_assert_eq!(masked.iter().filter(|e| e.label.is_some()).count(), (f * n as f64).round() as usize);
        }
    }
}
