use super::Element;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i32,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms.
    pub explicit_h: Option<u32>,
    pub bracketed: bool,
}

impl Atom {
    pub fn organic(element: Element, aromatic: bool) -> Self {
        Atom {
            element,
            aromatic,
            formal_charge: 0,
            explicit_h: None,
            bracketed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the σ+π bond count when aromatic bonds are read as single.
    pub fn localized_order(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub endpoints: (usize, usize),
    pub order: BondOrder,
    /// Bond was created by a ring-closure digit pair rather than adjacency.
    pub ring_closure: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> Option<usize> {
        match self.endpoints {
            (a, b) if a == atom => Some(b),
            (a, b) if b == atom => Some(a),
            _ => None,
        }
    }
}

/// Atoms and bonds of a parsed SMILES string. Hydrogen counts and the
/// per-atom "needs an aromatic double bond" flags are empty until
/// [`assign_implicit_hydrogens`](super::assign_implicit_hydrogens) runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MoleculeGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub implicit_h: Vec<u32>,
    pub(crate) needs_pi: Vec<bool>,
}

impl MoleculeGraph {
    pub fn hydrogens_assigned(&self) -> bool {
        self.implicit_h.len() == self.atoms.len() && !self.atoms.is_empty()
    }

    /// Hydrogens attached to atom `i`, explicit or implicit.
    pub fn hydrogen_count(&self, i: usize) -> u32 {
        match self.atoms[i].explicit_h {
            Some(h) => h,
            None => self.implicit_h.get(i).copied().unwrap_or(0),
        }
    }

    pub fn total_hydrogens(&self) -> u32 {
        (0..self.atoms.len()).map(|i| self.hydrogen_count(i)).sum()
    }

    /// Whether aromatic atom `i` must take one double bond in a Kekulé structure.
    pub fn needs_aromatic_double(&self, i: usize) -> bool {
        self.needs_pi.get(i).copied().unwrap_or(false)
    }

    pub fn bonds_of(&self, atom: usize) -> impl Iterator<Item = (usize, &Bond)> + '_ {
        self.bonds
            .iter()
            .enumerate()
            .filter(move |(_, b)| b.endpoints.0 == atom || b.endpoints.1 == atom)
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.bonds
            .iter()
            .find(|bond| bond.endpoints == (a, b) || bond.endpoints == (b, a))
    }

    pub fn ring_closure_count(&self) -> usize {
        self.bonds.iter().filter(|b| b.ring_closure).count()
    }
}
