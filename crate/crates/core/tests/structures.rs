use polyflam_core::assets::{Assets, SAMPLE_PDB_FILE};
use polyflam_core::chem::{self, parse_pdb, parse_smiles};
use polyflam_core::descriptors::{compute_descriptors, DescriptorCatalog, PreparedStructure};

const MW_TOLERANCE: f64 = 0.05;

#[test]
fn repeat_unit_weights_match_table() {
    let assets = Assets::load_default().unwrap();
    let mut checked = 0;
    let mut misses = Vec::new();
    for record in &assets.fi_records {
        let Some(smiles) = assets.smiles_for(&record.name) else {
            continue;
        };
        let graph = parse_smiles(smiles).unwrap();
        let (stripped, _) = chem::strip_wildcards(&graph);
        let mw = chem::molecular_weight(&stripped).unwrap();
        if (mw - record.mol_wt).abs() > MW_TOLERANCE {
            misses.push(format!("{}: {mw:.3} vs {}", record.name, record.mol_wt));
        }
        checked += 1;
    }
    assert!(checked >= 26, "only {checked} polymers have a repeat unit");
    assert!(misses.is_empty(), "{misses:?}");
}

#[test]
fn curated_pdb_matches_smiles() {
    let bytes = std::fs::read(polyflam_core::assets::default_assets_dir().join(SAMPLE_PDB_FILE)).unwrap();
    let from_pdb = parse_pdb(&bytes).unwrap();
    let from_smiles = parse_smiles("CCC1=CC=CC=C1").unwrap();
    assert_eq!(from_pdb.fingerprint(), from_smiles.fingerprint());

    let mw = chem::molecular_weight(&from_pdb).unwrap();
    assert!((mw - 106.168).abs() < 0.01, "{mw}");

    let catalog = DescriptorCatalog::chem1();
    let a = compute_descriptors(&PreparedStructure::from_graph(&from_pdb), &catalog).unwrap();
    let b = compute_descriptors(&PreparedStructure::from_graph(&from_smiles), &catalog).unwrap();
    // atom order differs, so sums may differ in the last bit
    for (name, (x, y)) in catalog.names().iter().zip(a.values.iter().zip(&b.values)) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{name}: {x} vs {y}");
    }
}

#[test]
fn pdb_without_conect_infers_single_bonds() {
    let bytes = std::fs::read(polyflam_core::assets::default_assets_dir().join(SAMPLE_PDB_FILE)).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    let atoms_only: String = text
        .lines()
        .filter(|l| !l.starts_with("CONECT"))
        .map(|l| format!("{l}\n"))
        .collect();
    let graph = parse_pdb(atoms_only.as_bytes()).unwrap();
    assert_eq!(graph.bonds.len(), 8);
    // all-single ring: the hydrogens fill to a saturated ethylcyclohexane
    assert_eq!(
        graph.fingerprint(),
        parse_smiles("CCC1CCCCC1").unwrap().fingerprint()
    );
}
