use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::corpus::{NormalizationStats, Vocabulary};
use crate::rng;
use crate::seqnets::NetworkBundle;
use crate::smiles::{parse_smiles, tokenize, PropertyOracle};

use super::beam::{beam_search, BundleDecoder};
use super::{sample_y, CondGenError, GaussianPrior};

/// Trials decoded together before they are classified in order.
const TRIAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// `(property index, value in original units)`; empty for unconditional generation.
    pub targets: Vec<(usize, f64)>,
    pub count_goal: usize,
    pub trial_cap: usize,
    pub beam_width: usize,
    /// Longest sequence in symbols, terminal included.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenerationRequest {
    fn default() -> Self {
        GenerationRequest { targets: Vec::new(), count_goal: 3000, trial_cap: 10_000, beam_width: 5, max_len: 120, seed: 0 }
    }
}

impl GenerationRequest {
    pub fn validate(&self, num_properties: usize) -> Result<(), CondGenError> {
        let mut seen = HashSet::new();
        for &(i, v) in &self.targets {
            if i >= num_properties || !seen.insert(i) || !v.is_finite() {
                return Err(CondGenError::InvalidTarget(i));
            }
        }
        if self.count_goal > self.trial_cap {
            return Err(CondGenError::Shape("count_goal exceeds trial_cap".into()));
        }
        if self.beam_width == 0 || self.max_len == 0 {
            return Err(CondGenError::Shape("beam width and max length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Invalid,
    InTrainingSet,
    Duplicated,
    NewUnique,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedMolecule {
    pub smiles: String,
    /// Oracle values in original units.
    pub properties: Vec<f64>,
    /// Number of SMILES symbols, terminal excluded.
    pub length: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generated: usize,
    pub invalid: usize,
    pub in_training_set: usize,
    pub duplicated: usize,
    pub new_unique: usize,
    pub property_names: Vec<String>,
    pub molecules: Vec<GeneratedMolecule>,
}

impl GenerationReport {
    pub fn is_consistent(&self) -> bool {
        self.generated == self.invalid + self.in_training_set + self.duplicated + self.new_unique
            && self.molecules.len() == self.new_unique
    }

    /// `outcome,count` rows.
    pub fn write_counts<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["outcome", "count"])?;
        for (name, n) in [
            ("generated", self.generated),
            ("invalid", self.invalid),
            ("in_training_set", self.in_training_set),
            ("duplicated", self.duplicated),
            ("new_unique", self.new_unique),
        ] {
            w.write_record([name, &n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `smiles,<prop>...` rows for the new-unique molecules.
    pub fn write_molecules<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["smiles".to_owned()];
        header.extend(self.property_names.iter().cloned());
        w.write_record(&header)?;
        for m in &self.molecules {
            let mut row = vec![m.smiles.clone()];
            row.extend(m.properties.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `property,bin_left,bin_right,count` rows over `bins` equal-width bins
    /// spanning each property's realized range.
    pub fn write_histogram<W: Write>(&self, out: W, bins: usize) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["property", "bin_left", "bin_right", "count"])?;
        for (i, name) in self.property_names.iter().enumerate() {
            let values: Vec<f64> = self.molecules.iter().map(|m| m.properties[i]).collect();
            for (l, r, c) in histogram(&values, bins) {
                w.write_record([name.clone(), l.to_string(), r.to_string(), c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Equal-width bins over `[min, max]`; the last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c)).collect()
}

/// A trained network plus what is needed to turn its output into molecules.
pub struct Generator<'a> {
    pub bundle: &'a NetworkBundle,
    pub vocab: &'a Vocabulary,
    pub stats: &'a NormalizationStats,
    pub prior: &'a GaussianPrior,
    pub training_set: &'a HashSet<String>,
    /// One oracle per property, in property order.
    pub oracles: &'a [Box<dyn PropertyOracle>],
    pub property_names: &'a [String],
}

impl Generator<'_> {
    /// Decoded string of one trial, `None` if the beam hit the length cap.
    fn trial(&self, targets: &[(usize, f64)], req: &GenerationRequest, index: u64) -> Result<Option<String>, TrialError> {
        let mut r = rng::stream(rng::derive(req.seed, "trial"), index);
        let y = sample_y(self.prior, targets, &mut r)?;
        let z: Vec<f64> = (0..self.bundle.config.latent).map(|_| r.sample(StandardNormal)).collect();
        let h = beam_search(&BundleDecoder::new(self.bundle, &y, &z), req.beam_width, req.max_len)?;
        if !h.finished {
            return Ok(None);
        }
        Ok(self.vocab.decode(&h.tokens[..h.tokens.len() - 1]).ok())
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationReport, CondGenError> {
        req.validate(self.stats.num_properties())?;
        assert_eq!(self.oracles.len(), self.stats.num_properties(), "one oracle per property");
        let targets: Vec<(usize, f64)> = req.targets.iter().map(|&(i, v)| (i, self.stats.normalize_one(i, v))).collect();
        let mut report = GenerationReport { property_names: self.property_names.to_vec(), ..GenerationReport::default() };
        let mut seen = HashSet::new();
        let mut next = 0usize;
        while next < req.trial_cap && report.new_unique < req.count_goal {
            let end = (next + TRIAL_CHUNK).min(req.trial_cap);
            let decoded: Vec<Result<Option<String>, TrialError>> =
                (next..end).into_par_iter().map(|i| self.trial(&targets, req, i as u64)).collect();
            for d in decoded {
                if report.new_unique >= req.count_goal {
                    break;
                }
                let s = d.map_err(CondGenError::from)?;
                report.generated += 1;
                match self.classify(s.as_deref(), &seen) {
                    (Outcome::Invalid, _) => report.invalid += 1,
                    (Outcome::InTrainingSet, _) => report.in_training_set += 1,
                    (Outcome::Duplicated, _) => report.duplicated += 1,
                    (Outcome::NewUnique, m) => {
                        let m = m.expect("new molecules carry properties");
                        seen.insert(m.smiles.clone());
                        report.molecules.push(m);
                        report.new_unique += 1;
                    }
                }
            }
            next = end;
        }
        Ok(report)
    }

    fn classify(&self, s: Option<&str>, seen: &HashSet<String>) -> (Outcome, Option<GeneratedMolecule>) {
        let Some(s) = s else { return (Outcome::Invalid, None) };
        let Ok(g) = parse_smiles(s) else { return (Outcome::Invalid, None) };
        if self.training_set.contains(s) {
            return (Outcome::InTrainingSet, None);
        }
        if seen.contains(s) {
            return (Outcome::Duplicated, None);
        }
        let properties = self.oracles.iter().map(|o| o.evaluate(&g)).collect();
        let length = tokenize(s).map(|t| t.len()).unwrap_or(0);
        (Outcome::NewUnique, Some(GeneratedMolecule { smiles: s.to_owned(), properties, length }))
    }
}

#[derive(Debug)]
enum TrialError {
    Sample(CondGenError),
    Decode(AutodiffError),
}

impl From<CondGenError> for TrialError {
    fn from(e: CondGenError) -> Self {
        TrialError::Sample(e)
    }
}

impl From<AutodiffError> for TrialError {
    fn from(e: AutodiffError) -> Self {
        TrialError::Decode(e)
    }
}

impl From<TrialError> for CondGenError {
    fn from(e: TrialError) -> Self {
        match e {
            TrialError::Sample(e) => e,
            TrialError::Decode(e) => CondGenError::Decode(e.to_string()),
        }
    }
}

/// Mean and sample standard deviation; the deviation is `None` below two values.
pub fn mean_std(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Some((mean, std))
}

/// Realized-property and sequence-length statistics of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub n: usize,
    /// Per property `(mean, std)`; empty when `n == 0`.
    pub properties: Vec<(f64, Option<f64>)>,
    pub length: Option<(f64, Option<f64>)>,
}

impl ConditionSummary {
    pub fn of(molecules: &[GeneratedMolecule], num_properties: usize) -> Self {
        let lengths: Vec<f64> = molecules.iter().map(|m| m.length as f64).collect();
        let properties = (0..num_properties)
            .filter_map(|i| mean_std(&molecules.iter().map(|m| m.properties[i]).collect::<Vec<_>>()))
            .collect();
        ConditionSummary { n: molecules.len(), properties, length: mean_std(&lengths) }
    }
}
