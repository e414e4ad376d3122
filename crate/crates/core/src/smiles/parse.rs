use std::collections::BTreeMap;

use super::{Atom, Bond, BondOrder, Element, MoleculeGraph, SmilesError, Token};

struct OpenRing {
    atom: usize,
    order: Option<BondOrder>,
}

struct Branch {
    /// Atom the branch hangs off.
    anchor: usize,
    open_pos: usize,
    has_atom: bool,
}

#[derive(Default)]
struct Builder {
    graph: MoleculeGraph,
    prev: Option<usize>,
    pending: Option<BondOrder>,
    branches: Vec<Branch>,
    rings: BTreeMap<u8, OpenRing>,
}

impl Builder {
    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        explicit: Option<BondOrder>,
        ring_closure: bool,
        pos: usize,
    ) -> Result<(), SmilesError> {
        if a == b {
            return Err(SmilesError::Syntax { pos, reason: "ring closure onto the same atom" });
        }
        if self.graph.bond_between(a, b).is_some() {
            return Err(SmilesError::Syntax { pos, reason: "duplicate bond between an atom pair" });
        }
        let both_aromatic = self.graph.atoms[a].aromatic && self.graph.atoms[b].aromatic;
        let order = match explicit {
            Some(order) => order,
            None if both_aromatic => BondOrder::Aromatic,
            None => BondOrder::Single,
        };
        self.graph.bonds.push(Bond { endpoints: (a, b), order, ring_closure });
        Ok(())
    }

    fn push_atom(&mut self, atom: Atom, pos: usize) -> Result<(), SmilesError> {
        let idx = self.graph.atoms.len();
        self.graph.atoms.push(atom);
        match self.prev {
            Some(prev) => {
                let order = self.pending.take();
                self.add_bond(prev, idx, order, false, pos)?;
            }
            None if self.pending.is_some() => {
                return Err(SmilesError::Syntax { pos, reason: "bond symbol before the first atom" });
            }
            None => {}
        }
        if let Some(branch) = self.branches.last_mut() {
            branch.has_atom = true;
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_digit(&mut self, digit: u8, pos: usize) -> Result<(), SmilesError> {
        let Some(current) = self.prev else {
            return Err(SmilesError::Syntax { pos, reason: "ring digit before any atom" });
        };
        let order = self.pending.take();
        match self.rings.remove(&digit) {
            Some(open) => {
                let resolved = match (open.order, order) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(SmilesError::Syntax { pos, reason: "conflicting ring bond orders" });
                    }
                    (a, b) => a.or(b),
                };
                self.add_bond(open.atom, current, resolved, true, pos)
            }
            None => {
                self.rings.insert(digit, OpenRing { atom: current, order });
                Ok(())
            }
        }
    }
}

/// Builds the atom/bond graph from a token stream. Hydrogens are not assigned here.
pub fn parse(tokens: &[Token]) -> Result<MoleculeGraph, SmilesError> {
    if tokens.is_empty() {
        return Err(SmilesError::Empty);
    }
    let mut b = Builder::default();
    let mut pos = 0;
    while pos < tokens.len() {
        let tok = tokens[pos];
        let sym = tok.as_str();
        match sym {
            "(" => {
                let Some(anchor) = b.prev else {
                    return Err(SmilesError::Syntax { pos, reason: "branch before any atom" });
                };
                if b.pending.is_some() {
                    return Err(SmilesError::Syntax { pos, reason: "bond symbol before a branch" });
                }
                b.branches.push(Branch { anchor, open_pos: pos, has_atom: false });
            }
            ")" => {
                let Some(branch) = b.branches.pop() else {
                    return Err(SmilesError::UnbalancedParentheses { pos });
                };
                if b.pending.is_some() {
                    return Err(SmilesError::Syntax { pos, reason: "dangling bond at branch end" });
                }
                if !branch.has_atom {
                    return Err(SmilesError::Syntax { pos, reason: "empty branch" });
                }
                if let Some(outer) = b.branches.last_mut() {
                    outer.has_atom = true;
                }
                b.prev = Some(branch.anchor);
            }
            "-" | "=" | "#" => {
                if b.pending.is_some() {
                    return Err(SmilesError::Syntax { pos, reason: "consecutive bond symbols" });
                }
                b.pending = Some(match sym {
                    "-" => BondOrder::Single,
                    "=" => BondOrder::Double,
                    _ => BondOrder::Triple,
                });
            }
            "[" => {
                let (atom, next) = parse_bracket(tokens, pos)?;
                b.push_atom(atom, pos)?;
                pos = next;
                continue;
            }
            "]" => return Err(SmilesError::Syntax { pos, reason: "unmatched ']'" }),
            "+" => return Err(SmilesError::Syntax { pos, reason: "charge outside brackets" }),
            "H" => return Err(SmilesError::Syntax { pos, reason: "hydrogen outside brackets" }),
            _ => {
                if let Some(d) = tok.digit() {
                    b.ring_digit(d, pos)?;
                } else {
                    let aromatic = sym.as_bytes()[0].is_ascii_lowercase();
                    let element = Element::from_symbol(sym)
                        .ok_or(SmilesError::Syntax { pos, reason: "unknown atom symbol" })?;
                    b.push_atom(Atom::organic(element, aromatic), pos)?;
                }
            }
        }
        pos += 1;
    }
    if b.pending.is_some() {
        return Err(SmilesError::Syntax { pos: tokens.len(), reason: "dangling bond at end of input" });
    }
    if let Some(branch) = b.branches.first() {
        return Err(SmilesError::UnbalancedParentheses { pos: branch.open_pos });
    }
    if let Some((&digit, _)) = b.rings.iter().next() {
        return Err(SmilesError::UnclosedRing { digit });
    }
    Ok(b.graph)
}

/// Parses `[` isotope? symbol (`H` count?)? charge? `]` starting at `open`.
/// Returns the atom and the index just past `]`.
fn parse_bracket(tokens: &[Token], open: usize) -> Result<(Atom, usize), SmilesError> {
    let malformed = |pos, reason| SmilesError::MalformedBracket { pos, reason };
    let at = |i: usize| tokens.get(i).map(Token::as_str);
    let mut i = open + 1;

    if tokens.get(i).and_then(Token::digit).is_some() {
        return Err(malformed(i, "isotope labels are not supported"));
    }
    let sym = at(i).ok_or(malformed(i, "unterminated bracket"))?;
    if !tokens[i].is_atom_symbol() {
        return Err(malformed(i, "expected an element symbol"));
    }
    let aromatic = sym.as_bytes()[0].is_ascii_lowercase();
    let element = Element::from_symbol(sym).ok_or(malformed(i, "unknown element"))?;
    if aromatic && !element.can_be_aromatic() {
        return Err(malformed(i, "element cannot be aromatic"));
    }
    i += 1;

    let mut explicit_h = 0;
    if at(i) == Some("H") {
        i += 1;
        explicit_h = 1;
        if let Some(d) = tokens.get(i).and_then(Token::digit) {
            explicit_h = u32::from(d);
            i += 1;
        }
    }

    let mut charge: i32 = 0;
    if let Some(sign_sym @ ("+" | "-")) = at(i) {
        let sign = if sign_sym == "+" { 1 } else { -1 };
        i += 1;
        let mut magnitude = 1;
        if let Some(d) = tokens.get(i).and_then(Token::digit) {
            magnitude = i32::from(d);
            i += 1;
        } else {
            while at(i) == Some(sign_sym) {
                magnitude += 1;
                i += 1;
            }
        }
        charge = sign * magnitude;
    }

    match at(i) {
        Some("]") => {}
        None => return Err(malformed(i, "unterminated bracket")),
        Some(_) => return Err(malformed(i, "unexpected symbol inside bracket")),
    }
    let atom = Atom {
        element,
        aromatic,
        formal_charge: charge,
        explicit_h: Some(explicit_h),
        bracketed: true,
    };
    Ok((atom, i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::tokenize;

    fn graph(s: &str) -> Result<MoleculeGraph, SmilesError> {
        parse(&tokenize(s)?)
    }

    #[test]
    fn single_atom() {
        let g = graph("C").unwrap();
        assert_eq!(g.atoms.len(), 1);
        assert!(g.bonds.is_empty());
    }

    #[test]
    fn cyclopropane_ring_closure() {
        let g = graph("C1CC1").unwrap();
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(g.bonds.len(), 3);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single));
        assert_eq!(g.ring_closure_count(), 1);
        assert!(g.bond_between(0, 2).unwrap().ring_closure);
    }

    #[test]
    fn unclosed_ring_is_reported() {
        assert_eq!(graph("C1CC"), Err(SmilesError::UnclosedRing { digit: 1 }));
        assert_eq!(graph("C=1"), Err(SmilesError::UnclosedRing { digit: 1 }));
    }

    #[test]
    fn branches_attach_to_their_anchor() {
        let g = graph("CC(C)(O)N").unwrap();
        assert_eq!(g.atoms.len(), 5);
        for other in [0, 2, 3, 4] {
            assert!(g.bond_between(1, other).is_some(), "missing 1-{other}");
        }
    }

    #[test]
    fn bond_symbols_apply_to_the_next_attachment() {
        let g = graph("C=CC#N").unwrap();
        assert_eq!(g.bonds[0].order, BondOrder::Double);
        assert_eq!(g.bonds[1].order, BondOrder::Single);
        assert_eq!(g.bonds[2].order, BondOrder::Triple);
        let g = graph("C=1CC1").unwrap();
        assert_eq!(g.bond_between(0, 2).unwrap().order, BondOrder::Double);
        let g = graph("C(=O)O").unwrap();
        assert_eq!(g.bond_between(0, 1).unwrap().order, BondOrder::Double);
    }

    #[test]
    fn aromatic_adjacency_defaults_to_aromatic_bonds() {
        let g = graph("c1ccccc1-c1ccccc1").unwrap();
        assert_eq!(g.bonds.iter().filter(|b| b.order == BondOrder::Aromatic).count(), 12);
        assert_eq!(g.bond_between(5, 6).unwrap().order, BondOrder::Single);
        assert_eq!(g.ring_closure_count(), 2);
    }

    #[test]
    fn bracket_atoms() {
        let g = graph("[NH4+]").unwrap();
        let a = &g.atoms[0];
        assert_eq!((a.element, a.explicit_h, a.formal_charge, a.bracketed), (Element::N, Some(4), 1, true));
        let g = graph("[O-]").unwrap();
        assert_eq!((g.atoms[0].explicit_h, g.atoms[0].formal_charge), (Some(0), -1));
        let g = graph("[Fe]");
        assert!(matches!(g, Err(SmilesError::UnexpectedChar { .. })));
        let g = graph("[nH]1cccc1").unwrap();
        assert!(g.atoms[0].aromatic);
        assert_eq!(graph("[Sn++]").unwrap().atoms[0].formal_charge, 2);
        assert_eq!(graph("[C-2]").unwrap().atoms[0].formal_charge, -2);
    }

    #[test]
    fn malformed_inputs() {
        for s in ["[CH", "[]", "[13C]", "[C+H]", "C=", "=C", "C==C", "C()C", "(C)", "C11", "C1C1", "1C", "C]", "[cl]"] {
            let err = graph(s).unwrap_err();
            assert!(
                matches!(err, SmilesError::Syntax { .. } | SmilesError::MalformedBracket { .. } | SmilesError::UnexpectedChar { .. }),
                "{s}: {err:?}"
            );
        }
    }

    #[test]
    fn parentheses_balance() {
        assert_eq!(graph("C(C"), Err(SmilesError::UnbalancedParentheses { pos: 1 }));
        assert_eq!(graph("CC)"), Err(SmilesError::UnbalancedParentheses { pos: 2 }));
        assert!(graph("C(C(C)C)C").is_ok());
    }

    #[test]
    fn ring_digits_can_be_reused() {
        let g = graph("c1ccccc1Cc1ccccc1").unwrap();
        assert_eq!(g.ring_closure_count(), 2);
        assert_eq!(g.atoms.len(), 13);
    }
}
