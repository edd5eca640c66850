//! Graph descriptors computed from a wildcard-stripped repeat unit.
//!
//! A [`DescriptorCatalog`] fixes the names and order of the feature vector.
//! The default catalog, `CHEM-1`, holds counts, ratios and topological
//! indices. Path-based indices are summed over connected components.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{self, BondOrder, Element, MolGraph, ParseError};
use crate::dataset::FeatureTable;

pub const CHEM1_ID: &str = "CHEM-1";

#[derive(Debug, Error, PartialEq)]
pub enum DescriptorError {
    #[error("structure still carries {0} wildcard atom(s)")]
    WildcardPresent(usize),
    #[error("unknown descriptor `{0}`")]
    UnknownDescriptor(String),
    #[error("duplicate descriptor `{0}` in catalog")]
    DuplicateDescriptor(String),
    #[error("structure {index}: {source}")]
    Structure {
        index: usize,
        #[source]
        source: Box<DescriptorError>,
    },
    #[error("structure {index}: {source}")]
    Parse { index: usize, source: ParseError },
    #[error("catalog manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorEntry {
    pub name: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorCatalog {
    pub catalog_id: String,
    pub entries: Vec<DescriptorEntry>,
}

const CHEM1: &[(&str, &str)] = &[
    (
        "molecular_weight",
        "sum of standard atomic weights plus 1.008 per hydrogen, g/mol",
    ),
    ("heavy_atom_count", "atoms other than hydrogen and wildcards"),
    ("carbon_count", "number of C atoms"),
    ("nitrogen_count", "number of N atoms"),
    ("oxygen_count", "number of O atoms"),
    ("sulfur_count", "number of S atoms"),
    ("fluorine_count", "number of F atoms"),
    ("chlorine_count", "number of Cl atoms"),
    ("halogen_count", "number of F, Cl, Br and I atoms"),
    ("hydrogen_count", "implicit plus explicit hydrogens"),
    (
        "heteroatom_fraction",
        "non-carbon heavy atoms over heavy atoms (0 if no heavy atoms)",
    ),
    ("single_bond_count", "bonds of order 1"),
    ("double_bond_count", "bonds of order 2"),
    ("triple_bond_count", "bonds of order 3"),
    ("aromatic_bond_count", "bonds written aromatic"),
    ("aromatic_atom_count", "atoms written aromatic"),
    ("ring_count", "cycle rank: bonds - atoms + connected components"),
    (
        "rotatable_bond_count",
        "acyclic single bonds whose endpoints both have heavy degree >= 2",
    ),
    ("hbd_count", "N or O atoms carrying at least one hydrogen"),
    ("hba_count", "number of N plus O atoms"),
    (
        "fraction_csp3",
        "carbons without double, triple or aromatic bonds over carbons (0 if none)",
    ),
    ("branching_atom_count", "heavy atoms with heavy degree >= 3"),
    ("max_degree", "largest heavy degree"),
    ("mean_degree", "mean heavy degree over heavy atoms (0 if none)"),
    (
        "mean_atomic_mass",
        "molecular weight over total atom count including hydrogens (0 if none)",
    ),
    ("o_c_ratio", "oxygen count over carbon count (0 if no carbon)"),
    ("h_c_ratio", "hydrogen count over carbon count (0 if no carbon)"),
    (
        "wiener_index",
        "sum of shortest-path distances over heavy-atom pairs within each component",
    ),
    ("zagreb_m1", "sum of squared heavy degrees"),
    (
        "zagreb_m2",
        "sum over heavy-heavy bonds of the product of endpoint degrees",
    ),
    ("wildcard_count", "attachment points removed from the repeat unit"),
];

impl DescriptorCatalog {
    /// The default catalog.
    pub fn chem1() -> Self {
        Self {
            catalog_id: CHEM1_ID.to_string(),
            entries: CHEM1
                .iter()
                .map(|(n, d)| DescriptorEntry {
                    name: n.to_string(),
                    definition: d.to_string(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Names must be unique and known to the engine.
    pub fn validate(&self) -> Result<(), DescriptorError> {
        for (i, e) in self.entries.iter().enumerate() {
            if !CHEM1.iter().any(|(n, _)| *n == e.name) {
                return Err(DescriptorError::UnknownDescriptor(e.name.clone()));
            }
            if self.entries[..i].iter().any(|p| p.name == e.name) {
                return Err(DescriptorError::DuplicateDescriptor(e.name.clone()));
            }
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> String {
        toml::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_manifest(text: &str) -> Result<Self, DescriptorError> {
        let catalog: Self = toml::from_str(text).map_err(|e| DescriptorError::Manifest(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self, DescriptorError> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| DescriptorError::Manifest(e.to_string()))?;
        Self::from_manifest(&text)
    }
}

/// A repeat unit ready for descriptor computation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStructure {
    pub graph: MolGraph,
    pub wildcard_count: usize,
}

impl PreparedStructure {
    pub fn from_graph(graph: &MolGraph) -> Self {
        let (graph, wildcard_count) = chem::strip_wildcards(graph);
        Self {
            graph,
            wildcard_count,
        }
    }

    pub fn from_smiles(smiles: &str) -> Result<Self, ParseError> {
        Ok(Self::from_graph(&chem::parse_smiles(smiles)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub catalog_id: String,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Sum of pairwise BFS distances between heavy atoms in the same component.
fn wiener_index(heavy_adj: &[Vec<usize>]) -> f64 {
    let n = heavy_adj.len();
    let mut total = 0usize;
    for start in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &heavy_adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        total += dist[start + 1..]
            .iter()
            .filter(|&&d| d != usize::MAX)
            .sum::<usize>();
    }
    total as f64
}

/// Every CHEM-1 descriptor, in CHEM-1 order.
fn all_descriptors(s: &PreparedStructure) -> Result<Vec<f64>, DescriptorError> {
    let g = &s.graph;
    let wildcards = g.wildcard_count();
    if wildcards > 0 {
        return Err(DescriptorError::WildcardPresent(wildcards));
    }
    let mw = chem::molecular_weight(g).map_err(|_| DescriptorError::WildcardPresent(wildcards))?;

    // Compact heavy-atom indexing for the topological indices.
    let heavy: Vec<usize> = (0..g.atoms.len())
        .filter(|&i| g.atoms[i].element.is_heavy())
        .collect();
    let mut heavy_pos = vec![usize::MAX; g.atoms.len()];
    for (k, &i) in heavy.iter().enumerate() {
        heavy_pos[i] = k;
    }
    let mut heavy_adj = vec![Vec::new(); heavy.len()];
    for b in &g.bonds {
        let (pa, pb) = (heavy_pos[b.a], heavy_pos[b.b]);
        if pa != usize::MAX && pb != usize::MAX {
            heavy_adj[pa].push(pb);
            heavy_adj[pb].push(pa);
        }
    }
    let degree: Vec<usize> = heavy_adj.iter().map(Vec::len).collect();
    let deg_of = |atom: usize| degree[heavy_pos[atom]];

    let count = |e: Element| g.atoms.iter().filter(|a| a.element == e).count() as f64;
    let heavy_count = heavy.len() as f64;
    let carbons = count(Element::C);
    let oxygens = count(Element::O);
    let nitrogens = count(Element::N);
    let explicit_h = count(Element::H);
    let hydrogens = g.atoms.iter().map(|a| f64::from(a.implicit_h)).sum::<f64>() + explicit_h;
    let halogens = g.atoms.iter().filter(|a| a.element.is_halogen()).count() as f64;

    let bonds_of = |o: BondOrder| g.bonds.iter().filter(|b| b.order == o).count() as f64;

    let in_ring = g.ring_bond_mask();
    let rotatable = g
        .bonds
        .iter()
        .zip(&in_ring)
        .filter(|(b, ring)| {
            b.order == BondOrder::Single
                && !**ring
                && heavy_pos[b.a] != usize::MAX
                && heavy_pos[b.b] != usize::MAX
                && deg_of(b.a) >= 2
                && deg_of(b.b) >= 2
        })
        .count() as f64;

    let hbd = g
        .atoms
        .iter()
        .filter(|a| matches!(a.element, Element::N | Element::O) && a.implicit_h > 0)
        .count() as f64;

    let mut unsaturated = vec![false; g.atoms.len()];
    for b in &g.bonds {
        if b.order != BondOrder::Single {
            unsaturated[b.a] = true;
            unsaturated[b.b] = true;
        }
    }
    let sp3 = g
        .atoms
        .iter()
        .enumerate()
        .filter(|(i, a)| a.element == Element::C && !a.aromatic && !unsaturated[*i])
        .count() as f64;

    let branching = degree.iter().filter(|&&d| d >= 3).count() as f64;
    let max_degree = degree.iter().copied().max().unwrap_or(0) as f64;
    let degree_sum: usize = degree.iter().sum();
    let zagreb1: usize = degree.iter().map(|d| d * d).sum();
    let zagreb2: usize = heavy_adj
        .iter()
        .enumerate()
        .flat_map(|(u, nbrs)| nbrs.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
        .map(|(u, v)| degree[u] * degree[v])
        .sum();
    let total_atoms = heavy_count + hydrogens;

    Ok(vec![
        mw,
        heavy_count,
        carbons,
        nitrogens,
        oxygens,
        count(Element::S),
        count(Element::F),
        count(Element::Cl),
        halogens,
        hydrogens,
        ratio(heavy_count - carbons, heavy_count),
        bonds_of(BondOrder::Single),
        bonds_of(BondOrder::Double),
        bonds_of(BondOrder::Triple),
        bonds_of(BondOrder::Aromatic),
        g.atoms.iter().filter(|a| a.aromatic).count() as f64,
        g.cycle_rank() as f64,
        rotatable,
        hbd,
        nitrogens + oxygens,
        ratio(sp3, carbons),
        branching,
        max_degree,
        ratio(degree_sum as f64, heavy_count),
        ratio(mw, total_atoms),
        ratio(oxygens, carbons),
        ratio(hydrogens, carbons),
        wiener_index(&heavy_adj),
        zagreb1 as f64,
        zagreb2 as f64,
        s.wildcard_count as f64,
    ])
}

pub fn compute_descriptors(
    structure: &PreparedStructure,
    catalog: &DescriptorCatalog,
) -> Result<FeatureVector, DescriptorError> {
    let all = all_descriptors(structure)?;
    let values = catalog
        .entries
        .iter()
        .map(|e| {
            CHEM1
                .iter()
                .position(|(n, _)| *n == e.name)
                .map(|i| all[i])
                .ok_or_else(|| DescriptorError::UnknownDescriptor(e.name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureVector {
        values,
        catalog_id: catalog.catalog_id.clone(),
    })
}

/// One row per structure, computed in parallel, output order = input order.
pub fn descriptor_table(
    structures: &[PreparedStructure],
    catalog: &DescriptorCatalog,
) -> Result<FeatureTable, DescriptorError> {
    let rows = structures
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            compute_descriptors(s, catalog)
                .map(|v| v.values)
                .map_err(|e| DescriptorError::Structure {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureTable {
        column_names: catalog.names(),
        rows,
        catalog_id: catalog.catalog_id.clone(),
        target_column: None,
        row_names: None,
    })
}

/// Parses each SMILES and tabulates its descriptors; a parse failure names
/// the offending index.
pub fn descriptor_table_from_smiles<S: AsRef<str> + Sync>(
    smiles: &[S],
    catalog: &DescriptorCatalog,
) -> Result<FeatureTable, DescriptorError> {
    let structures = smiles
        .iter()
        .enumerate()
        .map(|(index, s)| {
            PreparedStructure::from_smiles(s.as_ref())
                .map_err(|source| DescriptorError::Parse { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    descriptor_table(&structures, catalog)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn describe(smiles: &str) -> Vec<(String, f64)> {
        let cat = DescriptorCatalog::chem1();
        let v = compute_descriptors(&PreparedStructure::from_smiles(smiles).unwrap(), &cat).unwrap();
        cat.names().into_iter().zip(v.values).collect()
    }

    fn get(d: &[(String, f64)], name: &str) -> f64 {
        d.iter().find(|(n, _)| n == name).unwrap().1
    }

    #[test]
    fn catalog_is_valid_and_ordered() {
        let cat = DescriptorCatalog::chem1();
        cat.validate().unwrap();
        assert_eq!(cat.len(), 31);
        assert_eq!(cat.index_of("molecular_weight"), Some(0));
        assert_eq!(cat.index_of("wildcard_count"), Some(30));
        let round = DescriptorCatalog::from_manifest(&cat.to_manifest()).unwrap();
        assert_eq!(round, cat);
    }

    #[test]
    fn polyethylene_unit() {
        let d = describe("*C*");
        assert!((get(&d, "molecular_weight") - 14.03).abs() < 0.01);
        assert_eq!(get(&d, "heavy_atom_count"), 1.0);
        assert_eq!(get(&d, "ring_count"), 0.0);
        assert_eq!(get(&d, "rotatable_bond_count"), 0.0);
        assert_eq!(get(&d, "wildcard_count"), 2.0);
        assert_eq!(get(&d, "h_c_ratio"), 2.0);
        assert_eq!(get(&d, "fraction_csp3"), 1.0);
    }

    #[test]
    fn benzene() {
        let d = describe("c1ccccc1");
        assert_eq!(get(&d, "aromatic_atom_count"), 6.0);
        assert_eq!(get(&d, "ring_count"), 1.0);
        assert_eq!(get(&d, "zagreb_m1"), 24.0);
        assert_eq!(get(&d, "zagreb_m2"), 24.0);
        assert_eq!(get(&d, "fraction_csp3"), 0.0);
        assert_eq!(get(&d, "wiener_index"), 27.0);
    }

    #[test]
    fn ethanol() {
        let d = describe("CCO");
        assert_eq!(get(&d, "hbd_count"), 1.0);
        assert_eq!(get(&d, "hba_count"), 1.0);
        assert_eq!(get(&d, "wiener_index"), 4.0);
        assert_eq!(get(&d, "rotatable_bond_count"), 0.0);
    }

    #[test]
    fn zero_denominators_give_zero() {
        let d = describe("*C(F)(F)*");
        assert_eq!(get(&d, "o_c_ratio"), 0.0);
        assert_eq!(get(&d, "h_c_ratio"), 0.0);
        let d = describe("*[*]");
        assert_eq!(get(&d, "heteroatom_fraction"), 0.0);
        assert_eq!(get(&d, "mean_degree"), 0.0);
        assert_eq!(get(&d, "mean_atomic_mass"), 0.0);
    }

    #[test]
    fn disconnected_wiener_sums_components() {
        let d = describe("CCC.CC");
        assert_eq!(get(&d, "wiener_index"), 4.0 + 1.0);
    }

    #[test]
    fn unstripped_graph_is_rejected() {
        let s = PreparedStructure {
            graph: chem::parse_smiles("*C*").unwrap(),
            wildcard_count: 0,
        };
        assert_eq!(
            compute_descriptors(&s, &DescriptorCatalog::chem1()),
            Err(DescriptorError::WildcardPresent(2))
        );
    }

    #[test]
    fn table_shapes_and_errors() {
        let cat = DescriptorCatalog::chem1();
        let empty: [&str; 0] = [];
        let t = descriptor_table_from_smiles(&empty, &cat).unwrap();
        assert_eq!(t.n_rows(), 0);
        assert_eq!(t.column_names.len(), cat.len());

        let err = descriptor_table_from_smiles(&["CC", "C1CC", "O"], &cat).unwrap_err();
        assert!(matches!(err, DescriptorError::Parse { index: 1, .. }));

        let structures = vec![
            PreparedStructure::from_smiles("CC").unwrap(),
            PreparedStructure {
                graph: chem::parse_smiles("*C").unwrap(),
                wildcard_count: 0,
            },
        ];
        let err = descriptor_table(&structures, &cat).unwrap_err();
        assert!(matches!(err, DescriptorError::Structure { index: 1, .. }));
    }

    #[test]
    fn unknown_catalog_entry() {
        let text = "catalog_id = \"X\"\n[[entries]]\nname = \"logp\"\ndefinition = \"?\"\n";
        assert_eq!(
            DescriptorCatalog::from_manifest(text),
            Err(DescriptorError::UnknownDescriptor("logp".into()))
        );
    }
}
