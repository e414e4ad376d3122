use super::{BondOrder, MoleculeGraph, SmilesError};

/// Fills in implicit hydrogens and decides which aromatic atoms need a
/// double bond in a Kekulé structure.
///
/// Organic-subset atoms take the smallest allowed valence that fits their
/// bonds. For aromatic atoms, aromatic bonds count as single bonds plus one
/// shared double bond: an atom whose localized bond count already equals an
/// allowed valence (furan `o`, thiophene `s`, N-substituted pyrrole `n`)
/// contributes no double bond; otherwise it claims one and the remainder is
/// hydrogen. Bracket atoms keep their written hydrogen count.
pub fn assign_implicit_hydrogens(mut g: MoleculeGraph) -> Result<MoleculeGraph, SmilesError> {
    let n = g.atoms.len();
    let mut localized = vec![0u32; n];
    for bond in &g.bonds {
        let (a, b) = bond.endpoints;
        localized[a] += bond.order.localized_order();
        localized[b] += bond.order.localized_order();
    }

    let mut implicit_h = vec![0u32; n];
    let mut needs_pi = vec![false; n];
    for (i, atom) in g.atoms.iter().enumerate() {
        let violation = SmilesError::Valence { atom: i, element: atom.element };
        let allowed = atom.element.charged_valences(atom.formal_charge);
        let used = localized[i];
        match atom.explicit_h {
            Some(h) => {
                let total = used + h;
                let Some(&v) = allowed.iter().find(|&&v| v >= total) else {
                    return Err(violation);
                };
                needs_pi[i] = atom.aromatic && v - total == 1;
            }
            None if atom.aromatic => {
                if allowed.contains(&used) {
                    needs_pi[i] = false;
                } else {
                    let Some(&v) = allowed.iter().find(|&&v| v > used) else {
                        return Err(violation);
                    };
                    implicit_h[i] = v - used - 1;
                    needs_pi[i] = true;
                }
            }
            None => {
                let Some(&v) = allowed.iter().find(|&&v| v >= used) else {
                    return Err(violation);
                };
                implicit_h[i] = v - used;
            }
        }
    }
    g.implicit_h = implicit_h;
    g.needs_pi = needs_pi;
    Ok(g)
}

/// Searches for an assignment of the aromatic bonds to single/double such
/// that every aromatic atom that needs a double bond gets exactly one and no
/// other atom gets any. Returns the indices of bonds made double.
pub fn kekulize(g: &MoleculeGraph) -> Option<Vec<usize>> {
    let n = g.atoms.len();
    if !g.hydrogens_assigned() {
        return None;
    }
    // Adjacency restricted to aromatic bonds between two needy atoms.
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (bi, bond) in g.bonds.iter().enumerate() {
        let (a, b) = bond.endpoints;
        if bond.order == BondOrder::Aromatic && g.needs_pi[a] && g.needs_pi[b] {
            adjacency[a].push((b, bi));
            adjacency[b].push((a, bi));
        }
    }
    let mut partner: Vec<Option<usize>> = vec![None; n];
    let mut chosen = Vec::new();
    if match_from(0, g, &adjacency, &mut partner, &mut chosen) {
        chosen.sort_unstable();
        Some(chosen)
    } else {
        None
    }
}

fn match_from(
    start: usize,
    g: &MoleculeGraph,
    adjacency: &[Vec<(usize, usize)>],
    partner: &mut [Option<usize>],
    chosen: &mut Vec<usize>,
) -> bool {
    let Some(atom) = (start..g.atoms.len()).find(|&i| g.needs_pi[i] && partner[i].is_none()) else {
        return true;
    };
    // Fail fast when any needy atom has run out of free partners.
    for (i, neighbours) in adjacency.iter().enumerate() {
        if g.needs_pi[i] && partner[i].is_none() && !neighbours.iter().any(|&(j, _)| partner[j].is_none()) {
            return false;
        }
    }
    for &(other, bond) in &adjacency[atom] {
        if partner[other].is_some() {
            continue;
        }
        partner[atom] = Some(other);
        partner[other] = Some(atom);
        chosen.push(bond);
        if match_from(atom + 1, g, adjacency, partner, chosen) {
            return true;
        }
        chosen.pop();
        partner[atom] = None;
        partner[other] = None;
    }
    false
}

pub fn kekulize_check(g: &MoleculeGraph) -> bool {
    kekulize(g).is_some()
}
