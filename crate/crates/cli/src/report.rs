//! Aggregates a run directory into a single summary table.

use std::path::Path;

use anyhow::{anyhow, Context};
use serde_json::json;

use ssvae_core::condgen::mean_std;
use ssvae_core::smiles::{parse_smiles, tokenize};

use crate::commands::{self, Meta, CONDITIONS, GENERATE_DIR, MAE};
use crate::config::RunConfig;
use crate::error::CliError;

/// One line of `report.csv`. Unused cells stay empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub section: &'static str,
    pub condition: String,
    pub spec: String,
    pub quantity: String,
    pub n: Option<usize>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub value: Option<f64>,
}

const HEADER: [&str; 8] = ["section", "condition", "spec", "quantity", "n", "mean", "std", "value"];

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let ctx = || format!("cannot read {}", path.display());
    let mut r = csv::Reader::from_path(path).with_context(ctx).map_err(CliError::Runtime)?;
    let header = r.headers().with_context(ctx).map_err(CliError::Runtime)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .with_context(ctx)
        .map_err(CliError::Runtime)?;
    Ok((header, rows))
}

fn number<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T, CliError> {
    s.parse().map_err(|_| CliError::Runtime(anyhow!("{}: malformed number {s:?}", path.display())))
}

/// Per-property then sequence-length statistics; `n == 0` leaves them empty.
fn statistics(condition: &str, spec: &str, names: &[String], values: &[Vec<f64>], lengths: &[f64]) -> Vec<Row> {
    let row = |quantity: &str, v: &[f64]| {
        let s = mean_std(v);
        Row {
            section: "properties",
            condition: condition.to_owned(),
            spec: spec.to_owned(),
            quantity: quantity.to_owned(),
            n: Some(v.len()),
            mean: s.map(|s| s.0),
            std: s.and_then(|s| s.1),
            value: None,
        }
    };
    let mut rows: Vec<Row> = names
        .iter()
        .enumerate()
        .map(|(i, n)| row(n, &values.iter().map(|v| v[i]).collect::<Vec<_>>()))
        .collect();
    rows.push(row("length", lengths));
    rows
}

/// Builds the report rows, or lists every missing input.
pub fn collect(out: &Path, checkpoint: Option<&Path>) -> Result<Vec<Row>, CliError> {
    let gen = out.join(GENERATE_DIR);
    let mut missing = Vec::new();
    let mae_path = out.join(MAE);
    let index_path = gen.join(CONDITIONS);
    for p in [&mae_path, &index_path] {
        if !p.is_file() {
            missing.push(p.display().to_string());
        }
    }
    let conditions: Vec<(String, String)> = if index_path.is_file() {
        read_csv(&index_path)?.1.into_iter().map(|r| (r[0].clone(), r.get(1).cloned().unwrap_or_default())).collect()
    } else {
        Vec::new()
    };
    for (label, _) in &conditions {
        for f in ["counts.csv", "molecules.csv"] {
            let p = gen.join(label).join(f);
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::runtime(format!("missing sub-reports: {}", missing.join(", "))));
    }

    let mut rows = Vec::new();
    let (_, mae_rows) = read_csv(&mae_path)?;
    for r in mae_rows {
        rows.push(Row {
            section: "mae",
            quantity: r[0].clone(),
            n: Some(number(&r[1], &mae_path)?),
            value: Some(number(&r[2], &mae_path)?),
            ..Row::default()
        });
    }
    for (label, spec) in &conditions {
        let path = gen.join(label).join("counts.csv");
        for r in read_csv(&path)?.1 {
            rows.push(Row {
                section: "counts",
                condition: label.clone(),
                spec: spec.clone(),
                quantity: r[0].clone(),
                value: Some(number::<usize>(&r[1], &path)? as f64),
                ..Row::default()
            });
        }
    }

    let ckpt = commands::checkpoint_path(&RunConfig { out: out.to_path_buf(), ..RunConfig::default() }, checkpoint);
    if ckpt.is_file() {
        let model = commands::load_model(&ckpt)?;
        let oracles = commands::oracles(&model.property_names)?;
        let mut values = Vec::new();
        let mut lengths = Vec::new();
        for s in &model.training_smiles {
            let g = parse_smiles(s).map_err(|e| CliError::runtime(format!("training molecule {s:?}: {e}")))?;
            values.push(oracles.iter().map(|o| o.evaluate(&g)).collect());
            lengths.push(tokenize(s).map_err(|e| CliError::runtime(e.to_string()))?.len() as f64);
        }
        rows.extend(statistics("training", "", &model.property_names, &values, &lengths));
    }
    for (label, spec) in &conditions {
        let path = gen.join(label).join("molecules.csv");
        let (header, mols) = read_csv(&path)?;
        let names = &header[1..];
        let mut values = Vec::with_capacity(mols.len());
        let mut lengths = Vec::with_capacity(mols.len());
        for r in &mols {
            values.push(r[1..].iter().map(|v| number(v, &path)).collect::<Result<Vec<f64>, _>>()?);
            let len = tokenize(&r[0]).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?.len();
            lengths.push(len as f64);
        }
        rows.extend(statistics(label, spec, names, &values, &lengths));
    }
    Ok(rows)
}

pub fn report(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let meta = Meta::start("report");
    let rows = collect(&cfg.out, checkpoint)?;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    commands::write_file(&cfg.out.join("report.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(HEADER)?;
        for r in &rows {
            out.write_record([
                r.section.to_owned(),
                r.condition.clone(),
                r.spec.clone(),
                r.quantity.clone(),
                r.n.map(|n| n.to_string()).unwrap_or_default(),
                cell(r.mean),
                cell(r.std),
                cell(r.value),
            ])?;
        }
        out.flush()?;
        Ok(())
    })?;
    for r in rows.iter().filter(|r| r.section == "properties") {
        match (r.mean, r.std) {
            (Some(m), Some(s)) => println!("{} {}: n {} mean {m:.4} std {s:.4}", r.condition, r.quantity, r.n.unwrap_or(0)),
            (Some(m), None) => println!("{} {}: n {} mean {m:.4}", r.condition, r.quantity, r.n.unwrap_or(0)),
            _ => println!("{} {}: n 0", r.condition, r.quantity),
        }
    }
    meta.finish(cfg, json!({ "rows": rows.len() }))
}
