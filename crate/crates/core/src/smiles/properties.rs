use std::collections::HashMap;
use std::io::Read;

use log::warn;
use thiserror::Error;

use super::{Element, MoleculeGraph};

/// The shipped contribution table for [`logp_proxy`].
pub const DEFAULT_LOGP_TABLE: &str = include_str!("../../data/logp_proxy_v1.csv");

/// A molecular property computable directly from a hydrogen-annotated graph.
pub trait PropertyOracle: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, g: &MoleculeGraph) -> f64;
}

/// Molecular weight in g/mol. Formal charges are ignored.
pub fn mol_weight(g: &MoleculeGraph) -> f64 {
    let heavy: f64 = g.atoms.iter().map(|a| a.element.mass()).sum();
    heavy + Element::H.mass() * f64::from(g.total_hydrogens())
}

/// Additive partition-coefficient proxy: one contribution per heavy atom,
/// keyed by element and aromaticity, plus one per attached hydrogen.
pub fn logp_proxy(g: &MoleculeGraph, table: &LogpTable) -> f64 {
    let mut total = 0.0;
    for atom in &g.atoms {
        match table.contribution(atom.element, atom.aromatic) {
            Some(c) => total += c,
            None => warn!(
                "no logP contribution for {}{}; counting it as 0",
                atom.element,
                if atom.aromatic { " (aromatic)" } else { "" }
            ),
        }
    }
    total + table.hydrogen * f64::from(g.total_hydrogens())
}

#[derive(Debug, Error)]
pub enum LogpTableError {
    #[error("reading logP table: {0}")]
    Csv(#[from] csv::Error),
    #[error("logP table line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Contribution table in the form
///
/// ```text
/// version,1
/// element,aromatic,contribution
/// C,0,0.1441
/// ```
///
/// The `H` row is the per-hydrogen contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LogpTable {
    pub version: u32,
    entries: HashMap<(Element, bool), f64>,
    pub hydrogen: f64,
}

impl LogpTable {
    pub fn empty() -> Self {
        LogpTable { version: 0, entries: HashMap::new(), hydrogen: 0.0 }
    }

    pub fn shipped() -> Self {
        Self::parse(DEFAULT_LOGP_TABLE.as_bytes()).expect("shipped logP table is well formed")
    }

    pub fn with_entry(mut self, element: Element, aromatic: bool, contribution: f64) -> Self {
        if element == Element::H {
            self.hydrogen = contribution;
        } else {
            self.entries.insert((element, aromatic), contribution);
        }
        self
    }

    pub fn contribution(&self, element: Element, aromatic: bool) -> Option<f64> {
        self.entries.get(&(element, aromatic)).copied()
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self, LogpTableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let format = |line: usize, reason: &str| LogpTableError::Format { line, reason: reason.to_owned() };

        let version_row = records.next().ok_or_else(|| format(1, "missing version line"))??;
        let version = match (version_row.get(0), version_row.get(1)) {
            (Some("version"), Some(v)) => v.parse().map_err(|_| format(1, "version is not an integer"))?,
            _ => return Err(format(1, "first line must be `version,<n>`")),
        };
        let header = records.next().ok_or_else(|| format(2, "missing column header"))??;
        if header.iter().collect::<Vec<_>>() != ["element", "aromatic", "contribution"] {
            return Err(format(2, "header must be `element,aromatic,contribution`"));
        }

        let mut table = LogpTable { version, ..LogpTable::empty() };
        for (i, row) in records.enumerate() {
            let row = row?;
            let line = row.position().map_or(i + 3, |p| p.line() as usize);
            if row.len() != 3 {
                return Err(format(line, "expected three fields"));
            }
            let element = Element::from_symbol(&row[0])
                .filter(|e| e.symbol() == &row[0])
                .ok_or_else(|| format(line, &format!("unknown element {:?}", &row[0])))?;
            let aromatic = match &row[1] {
                "0" => false,
                "1" => true,
                _ => return Err(format(line, "aromatic must be 0 or 1")),
            };
            let contribution: f64 = row[2]
                .parse()
                .ok()
                .filter(|c: &f64| c.is_finite())
                .ok_or_else(|| format(line, "contribution is not a finite number"))?;
            table = table.with_entry(element, aromatic, contribution);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MolWt;

impl PropertyOracle for MolWt {
    fn name(&self) -> &str {
        "MolWt"
    }

    fn evaluate(&self, g: &MoleculeGraph) -> f64 {
        mol_weight(g)
    }
}

#[derive(Debug, Clone)]
pub struct LogpProxy {
    pub table: LogpTable,
}

impl Default for LogpProxy {
    fn default() -> Self {
        LogpProxy { table: LogpTable::shipped() }
    }
}

impl PropertyOracle for LogpProxy {
    fn name(&self) -> &str {
        "LogP"
    }

    fn evaluate(&self, g: &MoleculeGraph) -> f64 {
        logp_proxy(g, &self.table)
    }
}

/// Maps a dataset column name onto a built-in oracle, if there is one.
pub fn oracle_for_column(column: &str) -> Option<Box<dyn PropertyOracle>> {
    match column.to_ascii_lowercase().as_str() {
        "molwt" | "mw" | "molecular_weight" => Some(Box::new(MolWt)),
        "logp" | "logp_proxy" => Some(Box::new(LogpProxy::default())),
        _ => None,
    }
}
