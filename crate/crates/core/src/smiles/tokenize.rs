use std::fmt;

use super::SmilesError;

/// Every symbol the lexer accepts. Two-character element symbols come first
/// so a linear scan implements maximal munch.
pub const SYMBOL_ALPHABET: &[&str] = &[
    "Cl", "Br", "Si", "Sn", "B", "C", "N", "O", "P", "S", "F", "I", "H", "b", "c", "n", "o", "p",
    "s", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "(", ")", "[", "]", "=", "#", "+", "-",
];

/// One lexical symbol of a SMILES string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(&'static str);

impl Token {
    /// Looks a symbol up in [`SYMBOL_ALPHABET`].
    pub fn from_symbol(symbol: &str) -> Option<Token> {
        SYMBOL_ALPHABET
            .iter()
            .find(|s| **s == symbol)
            .map(|s| Token(s))
    }

    pub fn as_str(&self) -> &'static str {
        self.0
    }

    pub fn digit(&self) -> Option<u8> {
        let b = self.0.as_bytes();
        (b.len() == 1 && b[0].is_ascii_digit()).then(|| b[0] - b'0')
    }

    pub fn is_atom_symbol(&self) -> bool {
        self.0.as_bytes()[0].is_ascii_alphabetic()
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// Splits a SMILES string into symbols, matching `Cl`, `Br`, `Si` and `Sn`
/// greedily before single characters.
pub fn tokenize(s: &str) -> Result<Vec<Token>, SmilesError> {
    if s.is_empty() {
        return Err(SmilesError::Empty);
    }
    if !s.is_ascii() {
        return Err(SmilesError::NonAscii);
    }
    let mut tokens = Vec::with_capacity(s.len());
    let mut rest = s;
    while !rest.is_empty() {
        let symbol = SYMBOL_ALPHABET
            .iter()
            .find(|sym| rest.starts_with(**sym))
            .ok_or_else(|| SmilesError::UnexpectedChar {
                ch: rest.chars().next().unwrap_or('\0'),
                offset: s.len() - rest.len(),
            })?;
        tokens.push(Token(symbol));
        rest = &rest[symbol.len()..];
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(s: &str) -> Vec<&'static str> {
        tokenize(s).unwrap().iter().map(Token::as_str).collect()
    }

    #[test]
    fn benzene_is_one_token_per_character() {
        assert_eq!(strs("c1ccccc1"), ["c", "1", "c", "c", "c", "c", "c", "1"]);
    }

    #[test]
    fn two_character_elements_are_single_symbols() {
        assert_eq!(strs("CCl"), ["C", "Cl"]);
        assert_eq!(strs("BrC[Si](C)[Sn]"), ["Br", "C", "[", "Si", "]", "(", "C", ")", "[", "Sn", "]"]);
        assert_eq!(strs("[NH4+]"), ["[", "N", "H", "4", "+", "]"]);
    }

    #[test]
    fn empty_and_foreign_characters_are_rejected() {
        assert_eq!(tokenize(""), Err(SmilesError::Empty));
        assert_eq!(
            tokenize("C.C"),
            Err(SmilesError::UnexpectedChar { ch: '.', offset: 1 })
        );
        assert!(matches!(tokenize("C/C=C/C"), Err(SmilesError::UnexpectedChar { ch: '/', .. })));
        assert!(matches!(tokenize("[C@H]"), Err(SmilesError::UnexpectedChar { ch: '@', .. })));
        assert!(matches!(tokenize("Cl\\C"), Err(SmilesError::UnexpectedChar { ch: '\\', .. })));
    }

    #[test]
    fn the_symbol_alphabet_covers_the_drug_like_vocabulary() {
        // The 35 drug-like symbols plus aromatic boron and the ring digit 0.
        assert_eq!(SYMBOL_ALPHABET.len(), 37);
    }
}
