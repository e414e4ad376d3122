//! SMILES lexing, parsing and chemical validation.
//!
//! The pipeline is `tokenize -> parse -> assign_implicit_hydrogens ->
//! kekulize_check`. [`validate`] runs all four stages and reports the first
//! failure as a [`ValidityVerdict`]; [`parse_smiles`] does the same but hands
//! back the hydrogen-annotated graph.

mod element;
mod graph;
mod parse;
mod properties;
mod tokenize;
mod valence;

use std::fmt;

use thiserror::Error;

pub use element::Element;
pub use graph::{Atom, Bond, BondOrder, MoleculeGraph};
pub use parse::parse;
pub use properties::{
    logp_proxy, mol_weight, oracle_for_column, LogpProxy, LogpTable, LogpTableError, MolWt,
    PropertyOracle, DEFAULT_LOGP_TABLE,
};
pub use tokenize::{tokenize, Token, SYMBOL_ALPHABET};
pub use valence::{assign_implicit_hydrogens, kekulize, kekulize_check};

/// The failure classes a SMILES string can be rejected with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Failure {
    LexError,
    UnbalancedParentheses,
    UnclosedRing,
    ValenceViolation,
    KekulizationFailure,
}

impl Failure {
    pub fn as_str(self) -> &'static str {
        match self {
            Failure::LexError => "lex_error",
            Failure::UnbalancedParentheses => "unbalanced_parentheses",
            Failure::UnclosedRing => "unclosed_ring",
            Failure::ValenceViolation => "valence_violation",
            Failure::KekulizationFailure => "kekulization_failure",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty input")]
    Empty,
    #[error("non-ASCII input")]
    NonAscii,
    #[error("unexpected character {ch:?} at offset {offset}")]
    UnexpectedChar { ch: char, offset: usize },
    #[error("malformed bracket atom at token {pos}: {reason}")]
    MalformedBracket { pos: usize, reason: &'static str },
    #[error("syntax error at token {pos}: {reason}")]
    Syntax { pos: usize, reason: &'static str },
    #[error("unbalanced parentheses at token {pos}")]
    UnbalancedParentheses { pos: usize },
    #[error("ring bond {digit} opened but never closed")]
    UnclosedRing { digit: u8 },
    #[error("valence violation on atom {atom} ({element})")]
    Valence { atom: usize, element: Element },
    #[error("aromatic system cannot be kekulized")]
    Kekulization,
}

impl SmilesError {
    pub fn failure(&self) -> Failure {
        match self {
            SmilesError::Empty
            | SmilesError::NonAscii
            | SmilesError::UnexpectedChar { .. }
            | SmilesError::MalformedBracket { .. }
            | SmilesError::Syntax { .. } => Failure::LexError,
            SmilesError::UnbalancedParentheses { .. } => Failure::UnbalancedParentheses,
            SmilesError::UnclosedRing { .. } => Failure::UnclosedRing,
            SmilesError::Valence { .. } => Failure::ValenceViolation,
            SmilesError::Kekulization => Failure::KekulizationFailure,
        }
    }
}

/// Outcome of [`validate`]. `failure` is `Some` exactly when the string is invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidityVerdict {
    failure: Option<Failure>,
}

impl ValidityVerdict {
    pub const VALID: ValidityVerdict = ValidityVerdict { failure: None };

    pub fn invalid(failure: Failure) -> Self {
        ValidityVerdict { failure: Some(failure) }
    }

    pub fn is_valid(&self) -> bool {
        self.failure.is_none()
    }

    pub fn failure(&self) -> Option<Failure> {
        self.failure
    }
}

/// Runs the whole pipeline and returns the hydrogen-annotated graph of a
/// valid, kekulizable molecule.
pub fn parse_smiles(s: &str) -> Result<MoleculeGraph, SmilesError> {
    let tokens = tokenize(s)?;
    let graph = parse(&tokens)?;
    let graph = assign_implicit_hydrogens(graph)?;
    if !kekulize_check(&graph) {
        return Err(SmilesError::Kekulization);
    }
    Ok(graph)
}

/// Classifies a string as valid or reports the first pipeline stage that rejects it.
pub fn validate(s: &str) -> ValidityVerdict {
    match parse_smiles(s) {
        Ok(_) => ValidityVerdict::VALID,
        Err(e) => ValidityVerdict::invalid(e.failure()),
    }
}

/// [`validate`] for raw bytes; anything that is not ASCII is a lex error.
pub fn validate_bytes(bytes: &[u8]) -> ValidityVerdict {
    match std::str::from_utf8(bytes) {
        Ok(s) => validate(s),
        Err(_) => ValidityVerdict::invalid(Failure::LexError),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts_for_documented_cases() {
        assert!(validate("c1ccccc1").is_valid());
        assert_eq!(validate("C(C").failure(), Some(Failure::UnbalancedParentheses));
        assert_eq!(validate("C=1").failure(), Some(Failure::UnclosedRing));
        assert_eq!(validate("C1CC").failure(), Some(Failure::UnclosedRing));
        assert_eq!(validate("CC)C").failure(), Some(Failure::UnbalancedParentheses));
        assert_eq!(validate("C(C)(C)(C)(C)C").failure(), Some(Failure::ValenceViolation));
        assert_eq!(validate("c1cccc1").failure(), Some(Failure::KekulizationFailure));
        assert_eq!(validate("C@C").failure(), Some(Failure::LexError));
        assert_eq!(validate("").failure(), Some(Failure::LexError));
    }

    #[test]
    fn realistic_drug_like_strings_are_valid() {
        for s in [
            "CC(=O)Oc1ccccc1C(=O)O",
            "CN1CCC[C@H]1c1cccnc1",
            "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
            "c1ccc2ccccc2c1",
            "c1ccsc1",
            "c1ccoc1",
            "c1cc[nH]c1",
            "O=[N+]([O-])c1ccccc1",
            "C[Si](C)(C)Cl",
            "CC(C)(C)c1ccc(Br)cc1",
            "C#N",
            "[NH4+]",
        ] {
            let verdict = validate(s);
            if s.contains('@') {
                assert_eq!(verdict.failure(), Some(Failure::LexError), "{s}");
            } else {
                assert!(verdict.is_valid(), "{s}: {:?}", parse_smiles(s).err());
            }
        }
    }

    #[test]
    fn non_utf8_bytes_are_lex_errors() {
        assert_eq!(validate_bytes(&[0xff, 0x43]).failure(), Some(Failure::LexError));
        assert_eq!(validate_bytes("CÖ".as_bytes()).failure(), Some(Failure::LexError));
    }
}
