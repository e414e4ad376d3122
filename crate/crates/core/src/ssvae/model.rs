use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Checkpoint, CheckpointError, ParamStore, Tensor};
use crate::condgen::GaussianPrior;
use crate::corpus::{NormalizationStats, TokenSequence, Vocabulary, TERMINAL};
use crate::seqnets::{NetConfig, NetworkBundle};

use super::train::{EarlyStopping, TrainConfig, TrainHistory, TrainState};
use super::SsvaeError;

/// Per-property mean absolute error.
pub fn mae(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(pred.len(), truth.len(), "one prediction per label");
    let m = truth.first().map_or(0, Vec::len);
    let mut out = vec![0.0; m];
    for (p, t) in pred.iter().zip(truth) {
        for ((o, a), b) in out.iter_mut().zip(p).zip(t) {
            *o += (a - b).abs();
        }
    }
    out.iter_mut().for_each(|o| *o /= truth.len().max(1) as f64);
    out
}

/// A trained network together with everything needed to use it on raw SMILES.
#[derive(Debug, Clone)]
pub struct SsvaeModel {
    pub vocab: Vocabulary,
    pub stats: NormalizationStats,
    pub prior: GaussianPrior,
    pub bundle: NetworkBundle,
    pub property_names: Vec<String>,
    pub max_len: usize,
    /// Training-set SMILES, used to recognize rediscovered molecules.
    pub training_smiles: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    format: String,
    net: NetConfig,
    symbols: Vec<String>,
    stats: NormalizationStats,
    prior_mean: Vec<f64>,
    prior_cov: Vec<f64>,
    property_names: Vec<String>,
    max_len: usize,
    training_smiles: Vec<String>,
    training: Option<TrainingMeta>,
}

#[derive(Serialize, Deserialize)]
struct TrainingMeta {
    config: TrainConfig,
    adam: AdamConfig,
    adam_step: u64,
    epochs_done: usize,
    early: EarlyStopping,
    history: TrainHistory,
    has_best: bool,
}

const FORMAT: &str = "ssvae-model";

fn corrupt(msg: impl Into<String>) -> SsvaeError {
    SsvaeError::Checkpoint(CheckpointError::Corrupt(msg.into()))
}

impl SsvaeModel {
    /// Predicted properties in original units.
    pub fn predict(&self, smiles: &str) -> Result<Vec<f64>, SsvaeError> {
        Ok(self.predict_many(&[smiles])?.remove(0))
    }

    pub fn predict_many(&self, smiles: &[&str]) -> Result<Vec<Vec<f64>>, SsvaeError> {
        let seqs = smiles.iter().map(|s| self.vocab.encode(s)).collect::<Result<Vec<_>, _>>()?;
        self.predict_sequences(&seqs.iter().collect::<Vec<_>>())
    }

    pub fn predict_sequences(&self, seqs: &[&TokenSequence]) -> Result<Vec<Vec<f64>>, SsvaeError> {
        Ok(self.bundle.predict_normalized(seqs)?.iter().map(|y| self.stats.denormalize(y)).collect())
    }

    /// Checkpoint of the model, plus the optimizer and early-stopping state
    /// when `training` is given so that training can resume.
    pub fn to_checkpoint(&self, training: Option<(&TrainConfig, &TrainState)>) -> Checkpoint {
        let symbols = self.vocab.symbols().iter().filter(|s| *s != TERMINAL).cloned().collect();
        let meta = ModelMeta {
            format: FORMAT.into(),
            net: self.bundle.config,
            symbols,
            stats: self.stats.clone(),
            prior_mean: self.prior.mean().to_vec(),
            prior_cov: self.prior.cov().transpose().as_slice().to_vec(),
            property_names: self.property_names.clone(),
            max_len: self.max_len,
            training_smiles: self.training_smiles.clone(),
            training: training.map(|(config, st)| TrainingMeta {
                config: *config,
                adam: st.adam.config,
                adam_step: st.adam.step,
                epochs_done: st.epochs_done,
                early: st.early.clone(),
                history: st.history.clone(),
                has_best: st.best_params.is_some(),
            }),
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta).expect("metadata serializes"));
        for (name, t) in self.bundle.params.iter() {
            ck.push(name, t.clone());
        }
        if let Some((_, st)) = training {
            let names: Vec<&str> = st.bundle.params.iter().map(|(n, _)| n).collect();
            for (i, name) in names.iter().enumerate() {
                ck.push(format!("train.current.{name}"), st.bundle.params.values()[i].clone());
                ck.push(format!("train.adam_m.{name}"), st.adam.m[i].clone());
                ck.push(format!("train.adam_v.{name}"), st.adam.v[i].clone());
                if let Some(best) = &st.best_params {
                    ck.push(format!("train.best.{name}"), best[i].clone());
                }
            }
        }
        ck
    }

    /// Inverse of [`SsvaeModel::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(SsvaeModel, Option<(TrainConfig, TrainState)>), SsvaeError> {
        let meta: ModelMeta = serde_json::from_value(ck.metadata.clone()).map_err(|e| corrupt(e.to_string()))?;
        if meta.format != FORMAT {
            return Err(corrupt(format!("unexpected format {:?}", meta.format)));
        }
        let vocab = Vocabulary::from_symbols(meta.symbols)?;
        if vocab.len() != meta.net.vocab {
            return Err(corrupt("vocabulary size disagrees with the network"));
        }
        let m = meta.prior_mean.len();
        if meta.prior_cov.len() != m * m || m != meta.net.props || meta.stats.num_properties() != m {
            return Err(corrupt("property dimensions disagree"));
        }
        let prior = GaussianPrior::new(meta.prior_mean, DMatrix::from_row_slice(m, m, &meta.prior_cov))?;
        let layout = NetworkBundle::new(meta.net, 0);
        let load = |prefix: &str| -> Result<ParamStore, SsvaeError> {
            let mut store = ParamStore::new();
            for (name, _) in layout.params.iter() {
                store.add(name, ck.get(&format!("{prefix}{name}"))?.clone());
            }
            Ok(store)
        };
        let bundle = NetworkBundle::from_params(meta.net, load("")?)?;
        let training = match meta.training {
            None => None,
            Some(t) => {
                let current = NetworkBundle::from_params(meta.net, load("train.current.")?)?;
                let tensors = |prefix: &str| -> Result<Vec<Tensor>, SsvaeError> {
                    Ok(load(prefix)?.values().to_vec())
                };
                let adam = Adam { config: t.adam, step: t.adam_step, m: tensors("train.adam_m.")?, v: tensors("train.adam_v.")? };
                let best_params = if t.has_best { Some(tensors("train.best.")?) } else { None };
                let state = TrainState {
                    bundle: current,
                    adam,
                    epochs_done: t.epochs_done,
                    early: t.early,
                    best_params,
                    history: t.history,
                };
                Some((t.config, state))
            }
        };
        let model = SsvaeModel {
            vocab,
            stats: meta.stats,
            prior,
            bundle,
            property_names: meta.property_names,
            max_len: meta.max_len,
            training_smiles: meta.training_smiles,
        };
        Ok((model, training))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusError;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn model() -> SsvaeModel {
        let vocab = Vocabulary::from_symbols(["C", "O", "N", "(", ")"]).unwrap();
        let config = NetConfig { vocab: vocab.len(), props: 2, latent: 3, hidden: 5, layers: 1 };
        SsvaeModel {
            vocab,
            stats: NormalizationStats { mean: vec![100.0, 1.0], std: vec![20.0, 0.5] },
            prior: GaussianPrior::new(vec![0.1, -0.1], DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0])).unwrap(),
            bundle: NetworkBundle::new(config, 11),
            property_names: vec!["MolWt".into(), "logP".into()],
            max_len: 20,
            training_smiles: vec!["CCO".into(), "CN".into()],
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let m = model();
        let mut buf = Vec::new();
        m.to_checkpoint(None).write_to(&mut buf).unwrap();
        let (back, training) = SsvaeModel::from_checkpoint(&Checkpoint::read_from(&buf[..]).unwrap()).unwrap();
        assert!(training.is_none());
        assert_eq!(back.bundle.params, m.bundle.params);
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.prior.cov(), m.prior.cov());
        assert_eq!(back.training_smiles, m.training_smiles);
        assert_eq!(back.predict("CC(O)N").unwrap(), m.predict("CC(O)N").unwrap());
    }

    #[test]
    fn training_state_round_trips() {
        let m = model();
        let cfg = TrainConfig::default();
        let mut st = TrainState::new(m.bundle.clone(), &cfg);
        st.adam.step = 3;
        st.adam.m[0].data_mut()[0] = 0.25;
        st.best_params = Some(m.bundle.params.values().to_vec());
        st.early.observe(1, 2.5);
        let ck = m.to_checkpoint(Some((&cfg, &st)));
        let (_, t) = SsvaeModel::from_checkpoint(&ck).unwrap();
        let (cfg2, st2) = t.unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(st2.adam, st.adam);
        assert_eq!(st2.early, st.early);
        assert_eq!(st2.best_params, st.best_params);
    }

    #[test]
    fn unknown_symbols_are_reported() {
        assert!(matches!(model().predict("CCS"), Err(SsvaeError::Corpus(CorpusError::OutOfVocabulary(_)))));
    }

    #[test]
    fn predictions_denormalize_the_predictor_mean() {
        let m = model();
        let seq = m.vocab.encode("CCN").unwrap();
        let raw = m.bundle.predict_normalized(&[&seq]).unwrap().remove(0);
        let y = m.predict("CCN").unwrap();
        for i in 0..2 {
            assert!((y[i] - (raw[i] * m.stats.std[i] + m.stats.mean[i])).abs() < 1e-12);
            assert!((m.stats.normalize(&y)[i] - raw[i]).abs() < 1e-12);
        }
        assert_eq!(y, m.predict("CCN").unwrap());
    }

    #[test]
    fn mae_hand_statistics() {
        let truth = vec![vec![1.0], vec![2.0], vec![6.0]];
        assert_eq!(mae(&truth, &truth), vec![0.0]);
        // Predicting the mean 3 gives the mean absolute deviation (2 + 1 + 3) / 3.
        let mean = vec![vec![3.0]; 3];
        assert!((mae(&mean, &truth)[0] - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn mae_is_permutation_invariant(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20), k in 0usize..20) {
            let (p, t): (Vec<Vec<f64>>, Vec<Vec<f64>>) = pairs.iter().map(|&(a, b)| (vec![a], vec![b])).unzip();
            let mut pr = p.clone();
            let mut tr = t.clone();
            let k = k % pr.len();
            pr.rotate_left(k);
            tr.rotate_left(k);
            prop_assert!((mae(&p, &t)[0] - mae(&pr, &tr)[0]).abs() < 1e-12);
        }
    }
}
