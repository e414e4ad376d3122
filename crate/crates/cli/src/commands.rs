use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use log::info;
use serde_json::json;

use ssvae_core::autodiff::Checkpoint;
use ssvae_core::condgen::{ConditionSummary, GenerationReport, GenerationRequest, Generator};
use ssvae_core::corpus::{build_vocab, read_dataset, synthetic_corpus, write_dataset, RawDataset, SyntheticConfig};
use ssvae_core::rng;
use ssvae_core::smiles::{oracle_for_column, PropertyOracle};
use ssvae_core::ssvae::{mae, prepare, prepare_with_vocab, train_resumable, TrainData, TrainState};
use ssvae_core::{NetworkBundle, SsvaeModel};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKPOINT: &str = "model.ckpt";
pub const GENERATE_DIR: &str = "generate";
pub const CONDITIONS: &str = "conditions.csv";
pub const MAE: &str = "mae.csv";

const PREDICT_CHUNK: usize = 256;

/// Wall-clock bookkeeping kept out of the data files.
pub struct Meta {
    command: &'static str,
    started: SystemTime,
    clock: Instant,
}

impl Meta {
    pub fn start(command: &'static str) -> Self {
        Meta { command, started: SystemTime::now(), clock: Instant::now() }
    }

    pub fn finish(self, cfg: &RunConfig, extra: serde_json::Value) -> Result<(), CliError> {
        let unix = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let meta = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": unix(self.started),
            "finished_unix": unix(SystemTime::now()),
            "elapsed_seconds": self.clock.elapsed().as_secs_f64(),
            "seed": cfg.seed,
            "config": cfg.emit(),
            "details": extra,
        });
        let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Runtime(e.into()))?;
        write_file(&cfg.out.join(format!("{}.meta.json", self.command)), |w| w.write_all(text.as_bytes()).map_err(Into::into))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).with_context(|| format!("cannot open {}", path.display())).map_err(CliError::Runtime)
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub fn write_file<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(CliError::Runtime)?;
    }
    let tmp = path.with_extension("part");
    let mut w = BufWriter::new(File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display())).map_err(CliError::Runtime)?);
    body(&mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<RawDataset, CliError> {
    let path = cfg.dataset.as_ref().ok_or_else(|| CliError::Validation("data.path is not set".into()))?;
    let columns = (!cfg.columns.is_empty()).then_some(cfg.columns.as_slice());
    let raw = read_dataset(open(path)?, columns, cfg.max_len)?;
    if raw.skipped_too_long > 0 {
        info!("skipped {} rows longer than {} symbols", raw.skipped_too_long, cfg.max_len);
    }
    Ok(raw)
}

pub fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| cfg.out.join(CHECKPOINT), Path::to_path_buf)
}

pub fn load_model(path: &Path) -> Result<SsvaeModel, CliError> {
    let ck = Checkpoint::load(path).with_context(|| format!("cannot load {}", path.display())).map_err(CliError::Runtime)?;
    Ok(SsvaeModel::from_checkpoint(&ck)?.0)
}

pub fn oracles(names: &[String]) -> Result<Vec<Box<dyn PropertyOracle>>, CliError> {
    names
        .iter()
        .map(|n| oracle_for_column(n).ok_or_else(|| CliError::Validation(format!("no property oracle for column {n:?}"))))
        .collect()
}

pub fn vocab(cfg: &RunConfig) -> Result<(), CliError> {
    let meta = Meta::start("vocab");
    let raw = load_dataset(cfg)?;
    let vocab = build_vocab(&raw.smiles())?;
    write_file(&cfg.out.join("vocab.txt"), |w| vocab.write_to(w).map_err(Into::into))?;
    println!("{} symbols from {} molecules", vocab.len(), raw.records.len());
    meta.finish(cfg, json!({ "symbols": vocab.len(), "molecules": raw.records.len() }))
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let meta = Meta::start("synth");
    let ds = synthetic_corpus(&SyntheticConfig { size: cfg.synthetic_size, seed: cfg.seed, ..SyntheticConfig::default() })?;
    let path = cfg.out.join("synthetic.csv");
    write_file(&path, |w| write_dataset(&ds, w).map_err(Into::into))?;
    println!("wrote {} molecules to {}", ds.records.len(), path.display());
    meta.finish(cfg, json!({ "molecules": ds.records.len() }))
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<(), CliError> {
    let meta = Meta::start("train");
    let raw = load_dataset(cfg)?;
    let ckpt = cfg.out.join(CHECKPOINT);
    let tc = cfg.train_config();
    let (data, state) = if resume {
        let ck = Checkpoint::load(&ckpt).with_context(|| format!("cannot resume from {}", ckpt.display())).map_err(CliError::Runtime)?;
        let (model, training) = SsvaeModel::from_checkpoint(&ck)?;
        let (stored, state) = training.ok_or_else(|| CliError::Validation("checkpoint carries no training state".into()))?;
        if stored.seed != tc.seed {
            return Err(CliError::Validation(format!("checkpoint was trained with seed {}, not {}", stored.seed, tc.seed)));
        }
        let data = prepare_with_vocab(&raw, model.vocab, &cfg.data_config())?;
        if data.stats != model.stats || data.property_names != model.property_names {
            return Err(CliError::Validation("dataset or data settings differ from the checkpoint".into()));
        }
        info!("resuming after epoch {}", state.epochs_done);
        (data, state)
    } else {
        let data = prepare(&raw, &cfg.data_config())?;
        let net = cfg.preset.config(data.vocab.len(), data.property_names.len());
        (data, TrainState::new(NetworkBundle::new(net, rng::derive(cfg.seed, "init")), &tc))
    };
    let labeled = data.train.iter().filter(|e| e.label.is_some()).count();
    info!("train {} ({} labeled), validation {}, test {}", data.train.len(), labeled, data.val.len(), data.test.len());

    let mut model = SsvaeModel {
        vocab: data.vocab.clone(),
        stats: data.stats.clone(),
        prior: data.prior.clone(),
        bundle: state.best_bundle(),
        property_names: data.property_names.clone(),
        max_len: data.max_len,
        training_smiles: data.train.iter().map(|e| e.source.clone()).collect(),
    };
    let td = TrainData { train: &data.train, val: &data.val, prior: &data.prior, stats: &data.stats };
    let state = train_resumable(&tc, state, td, |st| {
        if let Some(r) = st.history.records.last() {
            info!("epoch {}: train J {:.4}, validation J {:.4}", r.epoch, r.train.total, r.val.total);
        }
        model.bundle = st.best_bundle();
        model.to_checkpoint(Some((&tc, st))).save(&ckpt)?;
        Ok(())
    })?;
    model.bundle = state.best_bundle();
    model.to_checkpoint(Some((&tc, &state))).save(&ckpt)?;
    write_file(&cfg.out.join("history.csv"), |w| state.history.write_csv(w, &model.property_names).map_err(Into::into))?;
    let h = &state.history;
    println!(
        "trained {} epochs, best epoch {:?}, stop reason {:?}",
        state.epochs_done, h.best_epoch, h.stop_reason
    );
    meta.finish(
        cfg,
        json!({
            "epochs_done": state.epochs_done,
            "best_epoch": h.best_epoch,
            "stopped_epoch": h.stopped_epoch,
            "stop_reason": h.stop_reason,
            "resumed": resume,
            "train": data.train.len(),
            "labeled": labeled,
            "validation": data.val.len(),
            "test": data.test.len(),
        }),
    )
}

pub fn predict(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let meta = Meta::start("predict");
    let model = load_model(&checkpoint_path(cfg, checkpoint))?;
    let names = &model.property_names;
    let (smiles, truth): (Vec<String>, Vec<Option<Vec<f64>>>) = match &cfg.predict_dataset {
        Some(path) => {
            let raw = read_dataset(open(path)?, None, usize::MAX)?;
            let cols: Option<Vec<usize>> =
                names.iter().map(|n| raw.property_names.iter().position(|c| c == n)).collect();
            raw.records
                .into_iter()
                .map(|r| {
                    let y = cols.as_ref().zip(r.label.as_ref()).map(|(c, y)| c.iter().map(|&i| y[i]).collect());
                    (r.smiles, y)
                })
                .unzip()
        }
        None => {
            let data = prepare_with_vocab(&load_dataset(cfg)?, model.vocab.clone(), &cfg.data_config())?;
            data.test.iter().map(|e| (e.source.clone(), e.label.as_ref().map(|y| data.stats.denormalize(y)))).unzip()
        }
    };
    let mut pred = Vec::with_capacity(smiles.len());
    for chunk in smiles.chunks(PREDICT_CHUNK) {
        let refs: Vec<&str> = chunk.iter().map(String::as_str).collect();
        pred.extend(model.predict_many(&refs)?);
    }
    let labeled = truth.iter().any(Option::is_some);
    write_file(&cfg.out.join("predictions.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["smiles".to_owned()];
        header.extend(names.iter().map(|n| format!("pred_{n}")));
        if labeled {
            header.extend(names.iter().map(|n| format!("true_{n}")));
        }
        out.write_record(&header)?;
        for ((s, p), t) in smiles.iter().zip(&pred).zip(&truth) {
            let mut row = vec![s.clone()];
            row.extend(p.iter().map(f64::to_string));
            if labeled {
                match t {
                    Some(t) => row.extend(t.iter().map(f64::to_string)),
                    None => row.extend(names.iter().map(|_| String::new())),
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    })?;
    let mae_path = cfg.out.join(MAE);
    let (p, t): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
        pred.iter().zip(&truth).filter_map(|(p, t)| t.as_ref().map(|t| (p.clone(), t.clone()))).unzip();
    let mut details = json!({ "molecules": smiles.len(), "labeled": t.len() });
    if t.is_empty() {
        if mae_path.exists() {
            fs::remove_file(&mae_path)?;
        }
        println!("predicted {} molecules; no labels, MAE omitted", smiles.len());
    } else {
        let m = mae(&p, &t);
        write_file(&mae_path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["property", "n", "mae"])?;
            for (n, v) in names.iter().zip(&m) {
                out.write_record([n.clone(), t.len().to_string(), v.to_string()])?;
            }
            out.flush()?;
            Ok(())
        })?;
        for (n, v) in names.iter().zip(&m) {
            println!("MAE {n}: {v:.6} over {} molecules", t.len());
        }
        details["mae"] = json!(m);
    }
    meta.finish(cfg, details)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_summary(path: &Path, label: &str, report: &GenerationReport, targets: &[(usize, f64)]) -> Result<(), CliError> {
    let names = &report.property_names;
    let s = ConditionSummary::of(&report.molecules, names.len());
    write_file(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["condition".to_owned()];
        header.extend(targets.iter().map(|&(i, _)| format!("target_{}", names[i])));
        header.push("n".into());
        for n in names {
            header.extend([format!("mean_{n}"), format!("std_{n}")]);
        }
        header.extend(["mean_length".into(), "std_length".into()]);
        out.write_record(&header)?;
        let mut row = vec![label.to_owned()];
        row.extend(targets.iter().map(|(_, v)| v.to_string()));
        row.push(s.n.to_string());
        for i in 0..names.len() {
            let (m, sd) = s.properties.get(i).copied().map_or((None, None), |(m, sd)| (Some(m), sd));
            row.extend([opt(m), opt(sd)]);
        }
        let (m, sd) = s.length.map_or((None, None), |(m, sd)| (Some(m), sd));
        row.extend([opt(m), opt(sd)]);
        out.write_record(&row)?;
        out.flush()?;
        Ok(())
    })
}

pub fn generate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let meta = Meta::start("generate");
    let model = load_model(&checkpoint_path(cfg, checkpoint))?;
    let oracles = oracles(&model.property_names)?;
    let training: HashSet<String> = model.training_smiles.iter().cloned().collect();
    let gen = Generator {
        bundle: &model.bundle,
        vocab: &model.vocab,
        stats: &model.stats,
        prior: &model.prior,
        training_set: &training,
        oracles: &oracles,
        property_names: &model.property_names,
    };
    let g = &cfg.generate;
    let dir = cfg.out.join(GENERATE_DIR);
    let mut index = Vec::new();
    let mut details = Vec::new();
    for (i, condition) in g.conditions.iter().enumerate() {
        let label = format!("c{i}");
        let targets = condition.resolve(&model.property_names, &model.stats).map_err(CliError::Validation)?;
        let req = GenerationRequest {
            targets: targets.clone(),
            count_goal: g.count_goal,
            trial_cap: g.trial_cap,
            beam_width: g.beam_width,
            max_len: g.max_len.unwrap_or(model.max_len),
            seed: rng::derive(cfg.seed, &label),
        };
        req.validate(model.property_names.len())?;
        let report = gen.generate(&req)?;
        let cdir = dir.join(&label);
        write_file(&cdir.join("counts.csv"), |w| report.write_counts(w).map_err(Into::into))?;
        write_file(&cdir.join("molecules.csv"), |w| report.write_molecules(w).map_err(Into::into))?;
        write_file(&cdir.join("histogram.csv"), |w| report.write_histogram(w, g.histogram_bins).map_err(Into::into))?;
        write_summary(&cdir.join("summary.csv"), &label, &report, &targets)?;
        println!(
            "{label} ({condition}): generated {}, invalid {}, in training set {}, duplicated {}, new unique {}",
            report.generated, report.invalid, report.in_training_set, report.duplicated, report.new_unique
        );
        details.push(json!({ "condition": label, "spec": condition.to_string(), "generated": report.generated }));
        index.push((label, condition.to_string()));
    }
    write_file(&dir.join(CONDITIONS), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["condition", "spec"])?;
        for (label, spec) in &index {
            out.write_record([label, spec])?;
        }
        out.flush()?;
        Ok(())
    })?;
    meta.finish(cfg, json!(details))
}
