use std::io::Write;

use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, AutodiffError, Tape, Tensor};
use crate::condgen::GaussianPrior;
use crate::corpus::{balanced_batch_sizes, BatchPlan, Example, NormalizationStats};
use crate::rng;
use crate::seqnets::NetworkBundle;

use super::loss::{total_loss, LossBreakdown, Objective};
use super::model::mae;
use super::SsvaeError;

/// Quantity watched by early stopping on the validation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Validation objective `J`.
    Objective,
    /// Mean over properties of the validation MAE in normalized units.
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    pub lr: f64,
    /// Combined size of the labeled and unlabeled sub-batches.
    pub batch_size: usize,
    /// Fixes the labeled sub-batch size; otherwise the split follows pool sizes.
    pub labeled_batch: Option<usize>,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub seed: u64,
    pub monitor: Monitor,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1e4,
            lr: 1e-3,
            batch_size: 200,
            labeled_batch: None,
            max_epochs: 300,
            patience: 10,
            min_rel_improvement: 0.01,
            seed: 0,
            monitor: Monitor::Objective,
            objective: Objective::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SsvaeError> {
        let bad = |m: &str| Err(SsvaeError::Config(m.to_owned()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if self.labeled_batch.is_some_and(|l| l == 0 || l >= self.batch_size) {
            return bad("labeled_batch must be in [1, batch_size)");
        }
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if !(0.0..1.0).contains(&self.min_rel_improvement) {
            return bad("min_rel_improvement must be in [0, 1)");
        }
        Ok(())
    }

    fn sub_batches(&self, n_labeled: usize, n_unlabeled: usize) -> (usize, usize) {
        match self.labeled_batch {
            Some(l) => (l, self.batch_size - l),
            None => balanced_batch_sizes(self.batch_size, n_labeled, n_unlabeled),
        }
    }
}

/// Result of feeding one validation value to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub new_best: bool,
    pub stop: bool,
}

/// Stops once `patience` epochs pass without a `min_rel` relative improvement
/// over the anchor, the value at the last epoch that achieved one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    patience: usize,
    min_rel: f64,
    anchor: Option<(usize, f64)>,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_rel: f64) -> Self {
        EarlyStopping { patience, min_rel, anchor: None, best: None }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Observation {
        let new_best = self.best.is_none_or(|(_, b)| value < b);
        if new_best {
            self.best = Some((epoch, value));
        }
        match self.anchor {
            Some((_, a)) if a - value < self.min_rel * a.abs() => {}
            _ => self.anchor = Some((epoch, value)),
        }
        let (anchor_epoch, _) = self.anchor.expect("anchor set");
        Observation { new_best, stop: epoch - anchor_epoch >= self.patience }
    }

    /// Epoch and value of the lowest observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    /// Per-property validation MAE in original units, when the validation set has labels.
    pub val_mae: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_epoch: Option<usize>,
    pub stop_reason: Option<StopReason>,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, out: W, property_names: &[String]) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["epoch", "train_L", "train_U", "train_mse", "train_J", "val_J"].map(String::from).to_vec();
        header.extend(property_names.iter().map(|n| format!("val_mae_{n}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                r.train.labeled.to_string(),
                r.train.unlabeled.to_string(),
                r.train.mse.to_string(),
                r.train.total.to_string(),
                r.val.total.to_string(),
            ];
            match &r.val_mae {
                Some(m) => row.extend(m.iter().map(f64::to_string)),
                None => row.extend(property_names.iter().map(|_| String::new())),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything needed to continue training after any completed epoch.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub bundle: NetworkBundle,
    pub adam: Adam,
    pub epochs_done: usize,
    pub early: EarlyStopping,
    pub best_params: Option<Vec<Tensor>>,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(bundle: NetworkBundle, config: &TrainConfig) -> Self {
        let adam = Adam::new(&bundle.params, AdamConfig { lr: config.lr, ..AdamConfig::default() });
        TrainState {
            bundle,
            adam,
            epochs_done: 0,
            early: EarlyStopping::new(config.patience, config.min_rel_improvement),
            best_params: None,
            history: TrainHistory::default(),
        }
    }

    pub fn finished(&self) -> bool {
        self.history.stop_reason.is_some()
    }

    /// The bundle carrying the best-validation parameters.
    pub fn best_bundle(&self) -> NetworkBundle {
        let mut b = self.bundle.clone();
        if let Some(best) = &self.best_params {
            b.params.values_mut().clone_from_slice(best);
        }
        b
    }
}

/// Inputs shared by every epoch. Labels are in normalized units.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Example],
    pub val: &'a [Example],
    pub prior: &'a GaussianPrior,
    pub stats: &'a NormalizationStats,
}

#[derive(Debug, Default)]
struct Accumulator {
    labeled: f64,
    unlabeled: f64,
    mse: f64,
    n_labeled: usize,
    n_unlabeled: usize,
}

impl Accumulator {
    fn add(&mut self, b: &LossBreakdown) {
        self.labeled += b.labeled * b.n_labeled as f64;
        self.mse += b.mse * b.n_labeled as f64;
        self.unlabeled += b.unlabeled * b.n_unlabeled as f64;
        self.n_labeled += b.n_labeled;
        self.n_unlabeled += b.n_unlabeled;
    }

    fn finish(&self, beta: f64, objective: Objective) -> LossBreakdown {
        let per = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        let labeled = per(self.labeled, self.n_labeled);
        let unlabeled = per(self.unlabeled, self.n_unlabeled);
        let mse = per(self.mse, self.n_labeled);
        let total = match objective {
            Objective::Full => labeled + unlabeled + beta * mse,
            Objective::PredictorOnly => mse,
        };
        LossBreakdown { labeled, unlabeled, mse, total, n_labeled: self.n_labeled, n_unlabeled: self.n_unlabeled }
    }
}

fn training_pool(data: &[Example], objective: Objective) -> Vec<Example> {
    match objective {
        Objective::Full => data.to_vec(),
        Objective::PredictorOnly => data.iter().filter(|e| e.label.is_some()).cloned().collect(),
    }
}

fn step_error(epoch: usize, step: usize, e: AutodiffError) -> SsvaeError {
    match e {
        AutodiffError::NonFinite { .. } => SsvaeError::NonFinite { epoch, step, source: e },
        other => SsvaeError::Autodiff(other),
    }
}

/// Objective over `data` under a fixed noise stream and fixed batch order.
pub fn evaluate(
    bundle: &NetworkBundle,
    data: &[Example],
    prior: &GaussianPrior,
    config: &TrainConfig,
) -> Result<LossBreakdown, SsvaeError> {
    let pool = training_pool(data, config.objective);
    let plan = {
        let nl = pool.iter().filter(|e| e.label.is_some()).count();
        let (lb, ub) = config.sub_batches(nl, pool.len() - nl);
        BatchPlan::new(&pool, lb, ub, rng::derive(config.seed, "validation"))
    };
    let mut noise = rng::stream(rng::derive(config.seed, "validation-noise"), 0);
    let mut acc = Accumulator::default();
    for (l, u) in plan.epoch(0) {
        if l.is_empty() && u.is_empty() {
            continue;
        }
        let tape = Tape::new();
        let p = bundle.bind(&tape);
        let (bd, _) = total_loss(&tape, bundle, &p, &l, &u, prior, config.beta, config.objective, &mut noise)?;
        acc.add(&bd);
    }
    Ok(acc.finish(config.beta, config.objective))
}

/// Per-property MAE in original units over the labeled examples; `None` without labels.
pub fn labeled_mae(
    bundle: &NetworkBundle,
    data: &[Example],
    stats: &NormalizationStats,
) -> Result<Option<Vec<f64>>, SsvaeError> {
    let labeled: Vec<&Example> = data.iter().filter(|e| e.label.is_some()).collect();
    if labeled.is_empty() {
        return Ok(None);
    }
    let seqs: Vec<_> = labeled.iter().map(|e| &e.sequence).collect();
    let pred: Vec<Vec<f64>> = bundle.predict_normalized(&seqs)?.iter().map(|y| stats.denormalize(y)).collect();
    let truth: Vec<Vec<f64>> = labeled.iter().map(|e| stats.denormalize(e.label.as_ref().expect("labeled"))).collect();
    Ok(Some(mae(&pred, &truth)))
}

fn run_epoch(state: &mut TrainState, config: &TrainConfig, plan: &BatchPlan<'_>, prior: &GaussianPrior) -> Result<LossBreakdown, SsvaeError> {
    let epoch = state.epochs_done + 1;
    let mut noise = rng::stream(rng::derive(config.seed, "noise"), epoch as u64);
    let mut acc = Accumulator::default();
    for (step, (l, u)) in plan.epoch(epoch as u64).enumerate() {
        if l.is_empty() && (u.is_empty() || config.objective == Objective::PredictorOnly) {
            continue;
        }
        let grads = {
            let bundle = &state.bundle;
            let tape = Tape::new();
            let p = bundle.bind(&tape);
            let (bd, j) = total_loss(&tape, bundle, &p, &l, &u, prior, config.beta, config.objective, &mut noise)
                .map_err(|e| step_error(epoch, step, e))?;
            acc.add(&bd);
            let mut g = tape.backward(j).map_err(|e| step_error(epoch, step, e))?;
            p.gradients(&mut g, &bundle.params)
        };
        state.adam.update(&mut state.bundle.params, &grads);
    }
    Ok(acc.finish(config.beta, config.objective))
}

/// Runs epochs until early stopping or `max_epochs`, calling `on_epoch` after
/// each one. Resuming from a returned state continues the same trajectory.
pub fn train_resumable<F>(
    config: &TrainConfig,
    mut state: TrainState,
    data: TrainData<'_>,
    mut on_epoch: F,
) -> Result<TrainState, SsvaeError>
where
    F: FnMut(&TrainState) -> Result<(), SsvaeError>,
{
    config.validate()?;
    if !data.train.iter().any(|e| e.label.is_some()) {
        return Err(SsvaeError::NoLabels);
    }
    if data.val.is_empty() {
        return Err(SsvaeError::Config("validation set is empty".into()));
    }
    if config.monitor == Monitor::Mae && !data.val.iter().any(|e| e.label.is_some()) {
        return Err(SsvaeError::Config("MAE monitoring needs labeled validation examples".into()));
    }
    let pool = training_pool(data.train, config.objective);
    let nl = pool.iter().filter(|e| e.label.is_some()).count();
    let (lb, ub) = config.sub_batches(nl, pool.len() - nl);
    let plan = BatchPlan::new(&pool, lb, ub, config.seed);
    if state.history.stop_reason == Some(StopReason::MaxEpochs) && state.epochs_done < config.max_epochs {
        state.history.stop_reason = None;
        state.history.stopped_epoch = None;
    }

    while !state.finished() {
        if state.epochs_done >= config.max_epochs {
            state.history.stop_reason = Some(StopReason::MaxEpochs);
            state.history.stopped_epoch = Some(state.epochs_done);
            break;
        }
        let train = run_epoch(&mut state, config, &plan, data.prior)?;
        state.epochs_done += 1;
        let epoch = state.epochs_done;
        let val = evaluate(&state.bundle, data.val, data.prior, config)?;
        let val_mae = labeled_mae(&state.bundle, data.val, data.stats)?;
        let monitored = match config.monitor {
            Monitor::Objective => val.total,
            Monitor::Mae => {
                let m = val_mae.as_ref().expect("checked above");
                m.iter().zip(&data.stats.std).map(|(e, s)| e / s).sum::<f64>() / m.len() as f64
            }
        };
        if !monitored.is_finite() {
            return Err(SsvaeError::NonFinite {
                epoch,
                step: usize::MAX,
                source: AutodiffError::NonFinite { op: "validation", node: 0, phase: "forward" },
            });
        }
        let obs = state.early.observe(epoch, monitored);
        if obs.new_best {
            state.best_params = Some(state.bundle.params.values().to_vec());
            state.history.best_epoch = Some(epoch);
        }
        info!("epoch {epoch}: train J {:.4} val J {:.4} monitored {:.6}", train.total, val.total, monitored);
        state.history.records.push(EpochRecord { epoch, train, val, val_mae });
        if obs.stop {
            state.history.stop_reason = Some(StopReason::EarlyStopping);
            state.history.stopped_epoch = Some(epoch);
        } else if epoch >= config.max_epochs {
            state.history.stop_reason = Some(StopReason::MaxEpochs);
            state.history.stopped_epoch = Some(epoch);
        }
        on_epoch(&state)?;
    }
    Ok(state)
}

/// Trains from `bundle` and returns the best-validation bundle with its history.
pub fn train(
    config: &TrainConfig,
    bundle: NetworkBundle,
    data: TrainData<'_>,
) -> Result<(NetworkBundle, TrainHistory), SsvaeError> {
    let state = train_resumable(config, TrainState::new(bundle, config), data, |_| Ok(()))?;
    Ok((state.best_bundle(), state.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::seqnets::NetConfig;
    use nalgebra::DMatrix;

    fn run(values: &[f64]) -> Option<usize> {
        let mut es = EarlyStopping::new(10, 0.01);
        values.iter().enumerate().find_map(|(i, &v)| es.observe(i + 1, v).stop.then_some(i + 1))
    }

    #[test]
    fn plateau_stops_at_window_end() {
        assert_eq!(run(&[5.0; 30]), Some(11));
        let mut v: Vec<f64> = (0..5).map(|i| 10.0 - i as f64).collect();
        v.extend([6.0; 20]);
        assert_eq!(run(&v), Some(15));
    }

    #[test]
    fn steady_improvement_never_stops() {
        let v: Vec<f64> = (0..300).map(|i| 100.0 * 0.98f64.powi(i)).collect();
        assert_eq!(run(&v), None);
    }

    #[test]
    fn sub_threshold_gains_do_not_reset_the_window() {
        // 0.5% per epoch accumulates to 1% every few epochs, so the anchor keeps moving.
        let v: Vec<f64> = (0..30).map(|i| 100.0 * 0.995f64.powi(i)).collect();
        assert_eq!(run(&v), None);
        let mut es = EarlyStopping::new(10, 0.01);
        let w = [100.0, 99.5, 99.1, 99.0, 98.5];
        let anchors: Vec<_> = w.iter().enumerate().map(|(i, &x)| { es.observe(i + 1, x); es.anchor.unwrap().0 }).collect();
        assert_eq!(anchors, [1, 1, 1, 4, 4]);
    }

    #[test]
    fn best_tracks_the_minimum_not_the_anchor() {
        let mut es = EarlyStopping::new(10, 0.01);
        for (i, v) in [10.0, 9.95, 9.99, 9.9].iter().enumerate() {
            es.observe(i + 1, *v);
        }
        assert_eq!(es.best(), Some((4, 9.9)));
        assert_eq!(es.anchor, Some((1, 10.0)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { beta: -1.0, ..ok },
            TrainConfig { batch_size: 1, ..ok },
            TrainConfig { patience: 0, ..ok },
            TrainConfig { labeled_batch: Some(200), ..ok },
            TrainConfig { lr: 0.0, ..ok },
        ] {
            assert!(matches!(bad.validate(), Err(SsvaeError::Config(_))));
        }
    }

    fn toy(labeled_value: Option<f64>) -> (Vec<Example>, NetworkBundle, GaussianPrior, NormalizationStats) {
        let vocab = Vocabulary::from_symbols(["C", "O"]).unwrap();
        let strings = ["C", "CC", "CO", "OC", "CCO", "OCO", "CCC", "COC", "OO", "CCCO"];
        let ex = strings
            .iter()
            .enumerate()
            .map(|(i, s)| Example {
                sequence: vocab.encode(s).unwrap(),
                label: (i % 2 == 0).then(|| vec![labeled_value.unwrap_or(s.len() as f64 / 4.0 - 0.5)]),
                source: s.to_string(),
            })
            .collect();
        let bundle = NetworkBundle::new(NetConfig { vocab: 3, props: 1, latent: 2, hidden: 6, layers: 1 }, 5);
        let prior = GaussianPrior::new(vec![0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let stats = NormalizationStats { mean: vec![1.0], std: vec![2.0] };
        (ex, bundle, prior, stats)
    }

    #[test]
    fn one_epoch_budget_runs_one_epoch() {
        let (ex, bundle, prior, stats) = toy(None);
        let cfg = TrainConfig { max_epochs: 1, batch_size: 4, ..TrainConfig::default() };
        let data = TrainData { train: &ex, val: &ex[..4], prior: &prior, stats: &stats };
        let (_, h) = train(&cfg, bundle, data).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.stop_reason, Some(StopReason::MaxEpochs));
        assert_eq!(h.stopped_epoch, Some(1));
        assert_eq!(h.records[0].val_mae.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let (ex, bundle, prior, stats) = toy(None);
        let data = TrainData { train: &ex, val: &ex, prior: &prior, stats: &stats };
        let cfg = TrainConfig { max_epochs: 3, batch_size: 4, beta: 10.0, ..TrainConfig::default() };
        let full = train_resumable(&cfg, TrainState::new(bundle.clone(), &cfg), data, |_| Ok(())).unwrap();
        let first = train_resumable(&TrainConfig { max_epochs: 1, ..cfg }, TrainState::new(bundle, &cfg), data, |_| Ok(()))
            .unwrap();
        let resumed = train_resumable(&cfg, first, data, |_| Ok(())).unwrap();
        assert_eq!(full.history, resumed.history);
        assert_eq!(full.bundle.params, resumed.bundle.params);
    }

    #[test]
    fn constant_labels_are_learned() {
        let (ex, bundle, prior, stats) = toy(Some(0.3));
        let cfg = TrainConfig {
            max_epochs: 150,
            batch_size: 10,
            lr: 1e-2,
            objective: Objective::PredictorOnly,
            monitor: Monitor::Mae,
            patience: 150,
            ..TrainConfig::default()
        };
        let data = TrainData { train: &ex, val: &ex, prior: &prior, stats: &stats };
        let (b, _) = train(&cfg, bundle, data).unwrap();
        let seqs: Vec<_> = ex.iter().map(|e| &e.sequence).collect();
        for y in b.predict_normalized(&seqs).unwrap() {
            assert!((y[0] - 0.3).abs() < 0.05, "{y:?}");
        }
    }

    #[test]
    fn no_labels_is_an_error() {
        let (mut ex, bundle, prior, stats) = toy(None);
        ex.iter_mut().for_each(|e| e.label = None);
        let data = TrainData { train: &ex, val: &ex, prior: &prior, stats: &stats };
        assert!(matches!(train(&TrainConfig::default(), bundle, data), Err(SsvaeError::NoLabels)));
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train: LossBreakdown { labeled: 1.0, unlabeled: 2.0, mse: 0.5, total: 3.5, n_labeled: 1, n_unlabeled: 1 },
                val: LossBreakdown { total: 4.0, ..LossBreakdown::default() },
                val_mae: None,
            }],
            ..TrainHistory::default()
        };
        let mut out = Vec::new();
        h.write_csv(&mut out, &["MolWt".to_string(), "logP".to_string()]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "epoch,train_L,train_U,train_mse,train_J,val_J,val_mae_MolWt,val_mae_logP\n1,1,2,0.5,3.5,4,,\n"
        );
    }
}
