use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::smiles::tokenize;

use super::CorpusError;

/// Spelling of the end-of-sequence symbol in vocabulary files.
pub const TERMINAL: &str = "<end>";

/// Bijection between SMILES symbols and indices. Symbols are sorted and the
/// terminal symbol always takes the last index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from the given non-terminal symbols.
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.iter().any(|s| s == TERMINAL || s.is_empty()) {
            return Err(CorpusError::VocabularyFormat("reserved or empty symbol".into()));
        }
        let before = symbols.len();
        symbols.sort();
        symbols.dedup();
        if symbols.len() != before {
            return Err(CorpusError::VocabularyFormat("duplicate symbol".into()));
        }
        symbols.push(TERMINAL.to_owned());
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Vocabulary { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn terminal(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    /// Token indices of `s` followed by the terminal index.
    pub fn encode(&self, s: &str) -> Result<TokenSequence, CorpusError> {
        let tokens = tokenize(s).map_err(|source| CorpusError::Lex { line: None, source })?;
        let mut indices = Vec::with_capacity(tokens.len() + 1);
        for tok in tokens {
            let i = self
                .index_of(tok.as_str())
                .ok_or_else(|| CorpusError::OutOfVocabulary(tok.as_str().to_owned()))?;
            indices.push(i);
        }
        indices.push(self.terminal());
        Ok(TokenSequence { indices })
    }

    /// Concatenates symbols up to (not including) the first terminal.
    pub fn decode(&self, indices: &[usize]) -> Result<String, CorpusError> {
        let mut out = String::new();
        for &i in indices {
            if i == self.terminal() {
                break;
            }
            out.push_str(self.symbol(i).ok_or(CorpusError::IndexOutOfRange(i))?);
        }
        Ok(out)
    }

    /// One symbol per line in index order, terminal last.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.symbols {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        let mut symbols = Vec::new();
        let mut saw_terminal = false;
        for line in r.lines() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            if line == TERMINAL {
                if saw_terminal {
                    return Err(CorpusError::VocabularyFormat("terminal listed twice".into()));
                }
                saw_terminal = true;
            } else {
                if saw_terminal {
                    return Err(CorpusError::VocabularyFormat("terminal must be the last symbol".into()));
                }
                symbols.push(line.to_owned());
            }
        }
        if !saw_terminal {
            return Err(CorpusError::VocabularyFormat(format!("missing {TERMINAL}")));
        }
        let vocab = Vocabulary::from_symbols(symbols.clone())?;
        if vocab.symbols[..vocab.terminal()] != symbols[..] {
            return Err(CorpusError::VocabularyFormat("symbols are not sorted".into()));
        }
        Ok(vocab)
    }
}

/// Collects the sorted set of symbols used by a training corpus.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Result<Vocabulary, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut seen = BTreeSet::new();
    for (i, s) in corpus.iter().enumerate() {
        let tokens = tokenize(s.as_ref()).map_err(|source| CorpusError::Lex { line: Some(i + 1), source })?;
        seen.extend(tokens.into_iter().map(|t| t.as_str()));
    }
    Vocabulary::from_symbols(seen)
}

/// Vocabulary indices of one SMILES string, terminal included.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    indices: Vec<usize>,
}

impl TokenSequence {
    /// Checks that `indices` ends with the vocabulary's terminal and contains it nowhere else.
    pub fn new(indices: Vec<usize>, vocab: &Vocabulary) -> Result<Self, CorpusError> {
        let terminal = vocab.terminal();
        match indices.split_last() {
            Some((&last, body)) if last == terminal => {
                if let Some(&bad) = body.iter().find(|&&i| i >= vocab.len()) {
                    return Err(CorpusError::IndexOutOfRange(bad));
                }
                if body.contains(&terminal) {
                    return Err(CorpusError::MisplacedTerminal);
                }
                Ok(TokenSequence { indices })
            }
            _ => Err(CorpusError::MisplacedTerminal),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Length including the terminal.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_vocabulary() {
        let v = build_vocab(&["CC", "CO"]).unwrap();
        assert_eq!(v.symbols(), ["C", "O", TERMINAL]);
        assert_eq!(v.terminal(), 2);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: [&str; 0] = [];
        assert!(matches!(build_vocab(&empty), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn lex_errors_carry_the_line() {
        let err = build_vocab(&["CC", "C.C"]).unwrap_err();
        assert!(matches!(err, CorpusError::Lex { line: Some(2), .. }), "{err:?}");
    }

    #[test]
    fn drug_like_vocabulary_has_35_symbols() {
        let corpus = [
            "CC(=O)Nc1ccc(O)cc1",
            "C#N",
            "C[NH+]1CCC2(CC1)OCCO2",
            "[O-]C(=O)c1cnc2ccccn12",
            "FC(F)(F)c1ccc(Cl)c(Br)c1",
            "C[Si](C)(C)OC1CC1",
            "CCCC[Sn](CCCC)(CCCC)I",
            "OB(O)c1ccsc1",
            "COP(=O)(OC)c1ccoc1",
            "c1cc2cc3cc4cc5cc6cc7cc8cc9ccccc9cc8cc7cc6cc5cc4cc3cc2cc1",
            "c1ccc2c(c1)[nH]c1ccncc12",
            "C1CC2CC3CC4CC5CC6CC7CC8CC9CC1C9C8C7C6C5C4C3C2",
            "c1ccpcc1",
            "CS(=O)(=O)N",
        ];
        let v = build_vocab(&corpus).unwrap();
        assert_eq!(v.len(), 36, "{:?}", v.symbols());
    }

    #[test]
    fn encode_appends_the_terminal() {
        let v = Vocabulary::from_symbols(["C"]).unwrap();
        assert_eq!(v.encode("CC").unwrap().indices(), [0, 0, 1]);
        assert!(matches!(v.encode("CN"), Err(CorpusError::OutOfVocabulary(t)) if t == "N"));
    }

    #[test]
    fn decode_stops_at_the_terminal() {
        let v = build_vocab(&["CC(=O)O", "c1ccccc1Cl"]).unwrap();
        for s in ["CC(=O)O", "c1ccccc1Cl", "ClC(Cl)=O"] {
            assert_eq!(v.decode(v.encode(s).unwrap().indices()).unwrap(), s);
        }
        assert_eq!(v.decode(&[v.terminal()]).unwrap(), "");
        assert!(matches!(v.decode(&[v.len()]), Err(CorpusError::IndexOutOfRange(_))));
    }

    #[test]
    fn token_sequence_invariants() {
        let v = Vocabulary::from_symbols(["C", "O"]).unwrap();
        assert!(TokenSequence::new(vec![0, 1, 2], &v).is_ok());
        assert!(TokenSequence::new(vec![0, 1], &v).is_err());
        assert!(TokenSequence::new(vec![2, 0, 2], &v).is_err());
        assert!(TokenSequence::new(vec![], &v).is_err());
        assert!(TokenSequence::new(vec![7, 2], &v).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = build_vocab(&["CC", "CO"]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "C\nO\n<end>\n");
        assert_eq!(Vocabulary::read_from(&buf[..]).unwrap(), v);
        assert!(Vocabulary::read_from(&b"O\nC\n<end>\n"[..]).is_err());
        assert!(Vocabulary::read_from(&b"C\nO\n"[..]).is_err());
    }
}
