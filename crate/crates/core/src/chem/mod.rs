//! Molecular graphs for polymer repeat units.
//!
//! Graphs come from SMILES ([`parse_smiles`]) or PDB text ([`parse_pdb`]).
//! Hydrogens are carried as per-atom `implicit_h` counts; explicit hydrogen
//! atoms are folded into their heavy neighbour after parsing. Attachment
//! points of a repeat unit are wildcard atoms (`*`) which weigh nothing and
//! are removed by [`strip_wildcards`] before descriptors are computed.

mod element;
mod pdb;
mod smiles;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use element::Element;
pub use pdb::parse_pdb;
pub use smiles::parse_smiles;

/// Mass of one hydrogen, g/mol.
pub const HYDROGEN_MASS: f64 = 1.008;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("SMILES error at offset {offset}: {message}")]
    Smiles { offset: usize, message: String },
    #[error("PDB error at line {line}: {message}")]
    Pdb { line: usize, message: String },
}

impl ParseError {
    /// Character offset (SMILES) or line number (PDB) of the failure.
    pub fn position(&self) -> usize {
        match self {
            ParseError::Smiles { offset, .. } => *offset,
            ParseError::Pdb { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("graph still contains {0} wildcard atom(s); strip them first")]
    WildcardPresent(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub aromatic: bool,
    pub implicit_h: u8,
    pub isotope: Option<u16>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Self {
            element,
            formal_charge: 0,
            aromatic: false,
            implicit_h: 0,
            isotope: None,
        }
    }

    /// Standard atomic weight, or the isotope's mass number when one is given.
    /// Wildcards weigh nothing.
    pub fn mass(&self) -> f64 {
        match (self.element, self.isotope) {
            (Element::Wildcard, _) => 0.0,
            (_, Some(iso)) => f64::from(iso),
            (e, None) => e.atomic_weight(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Bond order in half-units so aromatic bonds count 1.5 exactly.
    pub fn half_units(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> Option<usize> {
        if self.a == atom {
            Some(self.b)
        } else if self.b == atom {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphSource {
    Smiles,
    Pdb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub source: GraphSource,
}

impl MolGraph {
    pub fn empty(source: GraphSource) -> Self {
        Self {
            atoms: Vec::new(),
            bonds: Vec::new(),
            source,
        }
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Neighbour lists with the bond index that connects them.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (k, bond) in self.bonds.iter().enumerate() {
            adj[bond.a].push((bond.b, k));
            adj[bond.b].push((bond.a, k));
        }
        adj
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds.iter().filter(|b| b.a == atom || b.b == atom).count()
    }

    pub fn has_bond(&self, a: usize, b: usize) -> bool {
        self.bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
    }

    /// Component id per atom, numbered in order of first appearance.
    pub fn component_ids(&self) -> Vec<usize> {
        let adj = self.adjacency();
        let mut comp = vec![usize::MAX; self.atoms.len()];
        let mut next = 0;
        for start in 0..self.atoms.len() {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn component_count(&self) -> usize {
        self.component_ids().into_iter().max().map_or(0, |m| m + 1)
    }

    /// Cycle rank: bonds - atoms + connected components.
    pub fn cycle_rank(&self) -> usize {
        (self.bonds.len() + self.component_count()).saturating_sub(self.atoms.len())
    }

    /// Per bond: whether it lies on at least one cycle.
    pub fn ring_bond_mask(&self) -> Vec<bool> {
        // A bond is in a ring iff removing it keeps its endpoints connected.
        let adj = self.adjacency();
        self.bonds
            .iter()
            .enumerate()
            .map(|(k, bond)| {
                let mut seen = vec![false; self.atoms.len()];
                seen[bond.a] = true;
                let mut queue = VecDeque::from([bond.a]);
                while let Some(u) = queue.pop_front() {
                    for &(v, via) in &adj[u] {
                        if via == k || seen[v] {
                            continue;
                        }
                        if v == bond.b {
                            return true;
                        }
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
                false
            })
            .collect()
    }

    pub fn wildcard_count(&self) -> usize {
        self.atoms
            .iter()
            .filter(|a| a.element == Element::Wildcard)
            .count()
    }

    /// Folds explicit hydrogen atoms bonded to exactly one non-hydrogen atom
    /// into that atom's `implicit_h`. Other hydrogens (H2, bare protons) stay.
    pub fn fold_explicit_hydrogens(&mut self) {
        let adj = self.adjacency();
        let mut remove = vec![false; self.atoms.len()];
        let mut gain = vec![0u8; self.atoms.len()];
        for (i, atom) in self.atoms.iter().enumerate() {
            if atom.element != Element::H || atom.isotope.is_some() || atom.formal_charge != 0 {
                continue;
            }
            if let [(nbr, _)] = adj[i][..] {
                let host = &self.atoms[nbr].element;
                if *host != Element::H && *host != Element::Wildcard {
                    remove[i] = true;
                    gain[nbr] = gain[nbr].saturating_add(1);
                }
            }
        }
        for (atom, g) in self.atoms.iter_mut().zip(&gain) {
            atom.implicit_h = atom.implicit_h.saturating_add(*g);
        }
        self.remove_atoms(&remove);
    }

    /// Removes flagged atoms and every bond touching them; indices are
    /// compacted preserving order.
    fn remove_atoms(&mut self, remove: &[bool]) {
        let mut new_index = vec![usize::MAX; self.atoms.len()];
        let mut next = 0;
        for (i, r) in remove.iter().enumerate() {
            if !r {
                new_index[i] = next;
                next += 1;
            }
        }
        self.bonds = self
            .bonds
            .iter()
            .filter(|b| !remove[b.a] && !remove[b.b])
            .map(|b| Bond {
                a: new_index[b.a],
                b: new_index[b.b],
                order: b.order,
            })
            .collect();
        let mut i = 0;
        self.atoms.retain(|_| {
            let keep = !remove[i];
            i += 1;
            keep
        });
    }

    /// Isomorphism-invariant fingerprint: iterated neighbourhood labels
    /// (Weisfeiler-Lehman refinement) collected as a sorted multiset.
    pub fn fingerprint(&self) -> Vec<String> {
        let adj = self.adjacency();
        let mut labels: Vec<String> = self
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                format!(
                    "{}{}d{}h{}q{}i{}",
                    a.element.symbol(),
                    if a.aromatic { "a" } else { "" },
                    adj[i].len(),
                    a.implicit_h,
                    a.formal_charge,
                    a.isotope.unwrap_or(0)
                )
            })
            .collect();
        for _ in 0..self.atoms.len().min(8) {
            labels = (0..self.atoms.len())
                .map(|i| {
                    let mut nbrs: Vec<String> = adj[i]
                        .iter()
                        .map(|&(j, k)| format!("{:?}:{}", self.bonds[k].order, labels[j]))
                        .collect();
                    nbrs.sort();
                    format!("({}|{})", labels[i], nbrs.join(","))
                })
                .collect();
        }
        labels.sort();
        labels
    }
}

/// Removes wildcard atoms and their bonds. Neighbours keep their hydrogen
/// counts; the open valences are left uncapped.
pub fn strip_wildcards(graph: &MolGraph) -> (MolGraph, usize) {
    let remove: Vec<bool> = graph
        .atoms
        .iter()
        .map(|a| a.element == Element::Wildcard)
        .collect();
    let count = remove.iter().filter(|r| **r).count();
    let mut out = graph.clone();
    if count > 0 {
        out.remove_atoms(&remove);
    }
    (out, count)
}

/// Formula weight in g/mol: atomic weights plus `implicit_h * 1.008`.
pub fn molecular_weight(graph: &MolGraph) -> Result<f64, ChemError> {
    let wildcards = graph.wildcard_count();
    if wildcards > 0 {
        return Err(ChemError::WildcardPresent(wildcards));
    }
    Ok(graph
        .atoms
        .iter()
        .map(|a| a.mass() + f64::from(a.implicit_h) * HYDROGEN_MASS)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripped(smiles: &str) -> (MolGraph, usize) {
        strip_wildcards(&parse_smiles(smiles).unwrap())
    }

    #[test]
    fn strip_polyethylene() {
        let (g, n) = stripped("*C*");
        assert_eq!(n, 2);
        assert_eq!(g.atoms.len(), 1);
        assert_eq!(g.atoms[0].implicit_h, 2);
        assert!(g.bonds.is_empty());
        assert!((molecular_weight(&g).unwrap() - 14.03).abs() < 0.01);
    }

    #[test]
    fn strip_without_wildcards_is_identity() {
        let g = parse_smiles("CCO").unwrap();
        let (s, n) = strip_wildcards(&g);
        assert_eq!(n, 0);
        assert_eq!(s, g);
    }

    #[test]
    fn strip_all_wildcards_leaves_empty_graph() {
        let (g, n) = stripped("*[*]");
        assert_eq!(n, 2);
        assert!(g.atoms.is_empty());
        assert!(g.bonds.is_empty());
        assert_eq!(molecular_weight(&g).unwrap(), 0.0);
    }

    #[test]
    fn styrene_weight() {
        let (g, _) = stripped("*C(c1ccccc1)C*");
        assert!((molecular_weight(&g).unwrap() - 104.15).abs() < 0.01);
    }

    #[test]
    fn weight_requires_stripped_graph() {
        let g = parse_smiles("*C*").unwrap();
        assert_eq!(molecular_weight(&g), Err(ChemError::WildcardPresent(2)));
    }

    #[test]
    fn cycle_ranks() {
        assert_eq!(parse_smiles("c1ccccc1").unwrap().cycle_rank(), 1);
        assert_eq!(parse_smiles("C1CC1.C1CC1").unwrap().cycle_rank(), 2);
        assert_eq!(parse_smiles("CCC").unwrap().cycle_rank(), 0);
    }

    #[test]
    fn ring_bond_mask_marks_only_ring_bonds() {
        let g = parse_smiles("CC1CC1").unwrap();
        assert_eq!(g.ring_bond_mask(), vec![false, true, true, true]);
    }

    #[test]
    fn explicit_hydrogens_fold() {
        let g = parse_smiles("[H]C([H])([H])[H]").unwrap();
        assert_eq!(g.atoms.len(), 1);
        assert_eq!(g.atoms[0].implicit_h, 4);
        let h2 = parse_smiles("[H][H]").unwrap();
        assert_eq!(h2.atoms.len(), 2);
    }

    #[test]
    fn fingerprint_ignores_atom_order() {
        let a = parse_smiles("OCC").unwrap();
        let b = parse_smiles("CCO").unwrap();
        let c = parse_smiles("COC").unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
