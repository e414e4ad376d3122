//! Run configuration: a flat INI file with one section per subcommand.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use thiserror::Error;

use ssvae_core::corpus::{NormalizationStats, DEFAULT_MAX_LEN};
use ssvae_core::ssvae::{DataConfig, Monitor, Objective};
use ssvae_core::{Preset, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(#[from] ini::ParseError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// Every accepted `section.key`.
const KEYS: &[(&str, &[&str])] = &[
    ("run", &["seed", "out"]),
    ("data", &["path", "columns", "labeled_fraction", "split", "max_len", "synthetic_size"]),
    ("model", &["preset"]),
    (
        "train",
        &["beta", "lr", "batch_size", "labeled_batch", "max_epochs", "patience", "min_rel_improvement", "monitor", "objective"],
    ),
    ("predict", &["path"]),
    ("generate", &["conditions", "count_goal", "trial_cap", "beam_width", "max_len", "histogram_bins"]),
];

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|(s, ks)| *s == section && ks.contains(&key))
}

/// A target for one property, in original units or as standard deviations
/// from the labeled training mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Absolute(f64),
    Deviations(f64),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Target::Absolute(v) => write!(f, "{v}"),
            Target::Deviations(0.0) => write!(f, "mean"),
            Target::Deviations(k) => write!(f, "mean{}{}sd", if k < 0.0 { '-' } else { '+' }, k.abs()),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let finite = |v: f64| if v.is_finite() { Ok(v) } else { Err(format!("target {s:?} is not finite")) };
        if s == "mean" {
            return Ok(Target::Deviations(0.0));
        }
        if let Some(rest) = s.strip_prefix("mean") {
            let k = rest
                .strip_suffix("sd")
                .and_then(|k| k.strip_prefix('+').or_else(|| k.starts_with('-').then_some(k)))
                .and_then(|k| k.parse::<f64>().ok())
                .ok_or_else(|| format!("expected mean, mean+Ksd or mean-Ksd, got {s:?}"))?;
            return finite(k).map(Target::Deviations);
        }
        s.parse::<f64>().map_err(|_| format!("bad target value {s:?}")).and_then(finite).map(Target::Absolute)
    }
}

/// One generation condition; no targets means unconditional.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Condition {
    pub targets: Vec<(String, Target)>,
}

impl Condition {
    /// Targets as `(property index, value in original units)`.
    pub fn resolve(&self, names: &[String], stats: &NormalizationStats) -> Result<Vec<(usize, f64)>, String> {
        self.targets
            .iter()
            .map(|(name, t)| {
                let i = names.iter().position(|n| n == name).ok_or_else(|| format!("model has no property {name:?}"))?;
                let v = match *t {
                    Target::Absolute(v) => v,
                    Target::Deviations(k) => stats.mean[i] + k * stats.std[i],
                };
                Ok((i, v))
            })
            .collect()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.targets.is_empty() {
            return write!(f, "unconditional");
        }
        let parts: Vec<String> = self.targets.iter().map(|(n, t)| format!("{n}={t}")).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "unconditional" {
            return Ok(Condition::default());
        }
        let mut targets = Vec::new();
        for part in s.split(',') {
            let (name, value) = part.split_once('=').ok_or_else(|| format!("expected name=value, got {part:?}"))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(format!("empty property name in {s:?}"));
            }
            if targets.iter().any(|(n, _): &(String, Target)| n == name) {
                return Err(format!("property {name:?} is fixed twice"));
            }
            targets.push((name.to_owned(), value.parse()?));
        }
        Ok(Condition { targets })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub conditions: Vec<Condition>,
    pub count_goal: usize,
    pub trial_cap: usize,
    pub beam_width: usize,
    /// `None` uses the longest training sequence.
    pub max_len: Option<usize>,
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    /// Property columns to use; empty selects every column.
    pub columns: Vec<String>,
    pub labeled_fraction: f64,
    pub split: [f64; 3],
    /// Longest accepted sequence, terminal included.
    pub max_len: usize,
    /// Rows written by `synth`.
    pub synthetic_size: usize,
    pub preset: Preset,
    /// `seed` is ignored in favour of the run seed.
    pub train: TrainConfig,
    /// `None` predicts on the held-out test split.
    pub predict_dataset: Option<PathBuf>,
    pub generate: GenerateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            dataset: None,
            columns: Vec::new(),
            labeled_fraction: 1.0,
            split: [0.8, 0.1, 0.1],
            max_len: DEFAULT_MAX_LEN,
            synthetic_size: 2000,
            preset: Preset::Desk,
            train: TrainConfig { batch_size: 32, ..TrainConfig::default() },
            predict_dataset: None,
            generate: GenerateConfig {
                conditions: vec![Condition::default()],
                count_goal: 300,
                trial_cap: 1000,
                beam_width: 5,
                max_len: None,
                histogram_bins: 20,
            },
        }
    }
}

fn monitor_str(m: Monitor) -> &'static str {
    match m {
        Monitor::Objective => "objective",
        Monitor::Mae => "mae",
    }
}

fn objective_str(o: Objective) -> &'static str {
    match o {
        Objective::Full => "full",
        Objective::PredictorOnly => "predictor_only",
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn auto<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "auto".to_owned(), |v| v.to_string())
}

struct Reader<'a>(&'a Ini);

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.0.section(Some(section)).and_then(|s| s.get(key))
    }

    fn get<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v.trim().parse().or_else(|_| invalid(format!("{section}.{key}: cannot parse {v:?}"))),
        }
    }

    fn path(&self, section: &str, key: &str, default: Option<PathBuf>) -> Option<PathBuf> {
        match self.raw(section, key) {
            None => default,
            Some(v) if v.trim().is_empty() => None,
            Some(v) => Some(PathBuf::from(v.trim())),
        }
    }

    fn auto<T: FromStr>(&self, section: &str, key: &str, default: Option<T>) -> Result<Option<T>, ConfigError> {
        match self.raw(section, key).map(str::trim) {
            None => Ok(default),
            Some("auto") => Ok(None),
            Some(v) => v.parse().map(Some).or_else(|_| invalid(format!("{section}.{key}: cannot parse {v:?}"))),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when absent), then applies `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
        let mut ini = match path {
            None => Ini::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.into(), source })?;
                Ini::load_from_str(&text)?
            }
        };
        for o in overrides {
            apply_override(&mut ini, o)?;
        }
        let cfg = RunConfig::from_ini(&ini)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_ini(&Ini::load_from_str(text)?)
    }

    pub fn from_ini(ini: &Ini) -> Result<RunConfig, ConfigError> {
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return invalid(format!("key {k:?} is outside any section"));
                }
                continue;
            };
            for (key, _) in props.iter() {
                if !known(section, key) {
                    return invalid(format!("unknown config key {section}.{key}"));
                }
            }
        }
        let r = Reader(ini);
        let d = RunConfig::default();
        let split = match r.raw("data", "split") {
            None => d.split,
            Some(v) => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .or_else(|_| invalid(format!("data.split: cannot parse {v:?}")))?;
                parts.try_into().or_else(|_| invalid("data.split needs three fractions"))?
            }
        };
        let columns = match r.raw("data", "columns") {
            None => d.columns.clone(),
            Some(v) => v.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect(),
        };
        let preset = match r.raw("model", "preset") {
            None => d.preset,
            Some(v) => Preset::parse(v).ok_or_else(|| ConfigError::Invalid(format!("model.preset: unknown preset {v:?}")))?,
        };
        let monitor = match r.raw("train", "monitor").map(str::trim) {
            None => d.train.monitor,
            Some("objective") => Monitor::Objective,
            Some("mae") => Monitor::Mae,
            Some(v) => return invalid(format!("train.monitor: expected objective or mae, got {v:?}")),
        };
        let objective = match r.raw("train", "objective").map(str::trim) {
            None => d.train.objective,
            Some("full") => Objective::Full,
            Some("predictor_only") => Objective::PredictorOnly,
            Some(v) => return invalid(format!("train.objective: expected full or predictor_only, got {v:?}")),
        };
        let conditions = match r.raw("generate", "conditions") {
            None => d.generate.conditions.clone(),
            Some(v) => v
                .split(';')
                .filter(|c| !c.trim().is_empty())
                .map(|c| c.parse::<Condition>().map_err(|e| ConfigError::Invalid(format!("generate.conditions: {e}"))))
                .collect::<Result<_, _>>()?,
        };
        let seed = r.get("run", "seed", d.seed)?;
        let dt = d.train;
        Ok(RunConfig {
            seed,
            out: r.path("run", "out", Some(d.out.clone())).unwrap_or(d.out),
            dataset: r.path("data", "path", None),
            columns,
            labeled_fraction: r.get("data", "labeled_fraction", d.labeled_fraction)?,
            split,
            max_len: r.get("data", "max_len", d.max_len)?,
            synthetic_size: r.get("data", "synthetic_size", d.synthetic_size)?,
            preset,
            train: TrainConfig {
                beta: r.get("train", "beta", dt.beta)?,
                lr: r.get("train", "lr", dt.lr)?,
                batch_size: r.get("train", "batch_size", dt.batch_size)?,
                labeled_batch: r.auto("train", "labeled_batch", dt.labeled_batch)?,
                max_epochs: r.get("train", "max_epochs", dt.max_epochs)?,
                patience: r.get("train", "patience", dt.patience)?,
                min_rel_improvement: r.get("train", "min_rel_improvement", dt.min_rel_improvement)?,
                seed,
                monitor,
                objective,
            },
            predict_dataset: r.path("predict", "path", None),
            generate: GenerateConfig {
                conditions,
                count_goal: r.get("generate", "count_goal", d.generate.count_goal)?,
                trial_cap: r.get("generate", "trial_cap", d.generate.trial_cap)?,
                beam_width: r.get("generate", "beam_width", d.generate.beam_width)?,
                max_len: r.auto("generate", "max_len", d.generate.max_len)?,
                histogram_bins: r.get("generate", "histogram_bins", d.generate.histogram_bins)?,
            },
        })
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        ini.with_section(Some("run")).set("seed", self.seed.to_string()).set("out", self.out.display().to_string());
        ini.with_section(Some("data"))
            .set("path", opt_path(&self.dataset))
            .set("columns", self.columns.join(","))
            .set("labeled_fraction", self.labeled_fraction.to_string())
            .set("split", self.split.map(|f| f.to_string()).join(","))
            .set("max_len", self.max_len.to_string())
            .set("synthetic_size", self.synthetic_size.to_string());
        ini.with_section(Some("model")).set("preset", self.preset.as_str());
        let t = &self.train;
        ini.with_section(Some("train"))
            .set("beta", t.beta.to_string())
            .set("lr", t.lr.to_string())
            .set("batch_size", t.batch_size.to_string())
            .set("labeled_batch", auto(t.labeled_batch))
            .set("max_epochs", t.max_epochs.to_string())
            .set("patience", t.patience.to_string())
            .set("min_rel_improvement", t.min_rel_improvement.to_string())
            .set("monitor", monitor_str(t.monitor))
            .set("objective", objective_str(t.objective));
        ini.with_section(Some("predict")).set("path", opt_path(&self.predict_dataset));
        let g = &self.generate;
        let conditions: Vec<String> = g.conditions.iter().map(Condition::to_string).collect();
        ini.with_section(Some("generate"))
            .set("conditions", conditions.join("; "))
            .set("count_goal", g.count_goal.to_string())
            .set("trial_cap", g.trial_cap.to_string())
            .set("beam_width", g.beam_width.to_string())
            .set("max_len", auto(g.max_len))
            .set("histogram_bins", g.histogram_bins.to_string());
        ini
    }

    pub fn emit(&self) -> String {
        let mut buf = Vec::new();
        self.to_ini().write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("config text is UTF-8")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return invalid("data.labeled_fraction must be in [0, 1]");
        }
        if self.split.iter().any(|f| f.is_nan() || *f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("data.split fractions must be non-negative and sum to 1");
        }
        if self.max_len < 2 {
            return invalid("data.max_len must be at least 2");
        }
        if self.synthetic_size == 0 {
            return invalid("data.synthetic_size must be positive");
        }
        let distinct: BTreeSet<&String> = self.columns.iter().collect();
        if distinct.len() != self.columns.len() {
            return invalid("data.columns lists a column twice");
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        let g = &self.generate;
        if g.conditions.is_empty() {
            return invalid("generate.conditions is empty");
        }
        if g.count_goal > g.trial_cap {
            return invalid("generate.count_goal exceeds generate.trial_cap");
        }
        if g.beam_width == 0 || g.histogram_bins == 0 || g.max_len == Some(0) {
            return invalid("generate.beam_width, histogram_bins and max_len must be positive");
        }
        Ok(())
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig { split: self.split, labeled_fraction: self.labeled_fraction, seed: self.seed }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }
}

/// Applies one `section.key=value` override.
pub fn apply_override(ini: &mut Ini, spec: &str) -> Result<(), ConfigError> {
    let (key, value) = spec.split_once('=').ok_or_else(|| ConfigError::Invalid(format!("override {spec:?} is not key=value")))?;
    let (section, key) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| ConfigError::Invalid(format!("override key {key:?} is not section.key")))?;
    if !known(section, key) {
        return invalid(format!("unknown config key {section}.{key}"));
    }
    ini.with_section(Some(section)).set(key, value.trim());
    Ok(())
}
