//! Shipped reference data and its integrity checks.
//!
//! The asset directory holds the FI table, the cone-calorimetry table, the
//! expert label file, the curated repeat-unit SMILES and a manifest
//! (`manifest.toml`) recording each file's source, row count and SHA-256.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{self, ConeRecord, FiLabel, IngestError, PolymerRecord};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TABLE1_FILE: &str = "table1.csv";
pub const TABLE2_FILE: &str = "table2.csv";
pub const EXPERT_LABELS_FILE: &str = "expert_labels.csv";
pub const REPEAT_UNITS_FILE: &str = "repeat_units.csv";
pub const CATALOG_FILE: &str = "catalog_chem1.toml";
pub const SAMPLE_PDB_FILE: &str = "ethylbenzene.pdb";

/// Environment variable overriding the asset directory.
pub const ASSETS_ENV: &str = "POLYFLAM_ASSETS";

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("{file}: {message}")]
    Read { file: String, message: String },
    #[error("{file}: {source}")]
    Ingest {
        file: String,
        #[source]
        source: IngestError,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("asset verification failed: {}", .0.join("; "))]
    Verification(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub file: String,
    pub source: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetManifest {
    pub assets: Vec<AssetEntry>,
}

impl AssetManifest {
    pub fn load(dir: &Path) -> Result<Self, AssetError> {
        let text = read_text(&dir.join(MANIFEST_FILE))?;
        toml::from_str(&text).map_err(|e| AssetError::Manifest(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Asset directory: `$POLYFLAM_ASSETS` if set, else the copy shipped in
/// this crate.
pub fn default_assets_dir() -> PathBuf {
    std::env::var_os(ASSETS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/assets")))
}

fn read_text(path: &Path) -> Result<String, AssetError> {
    std::fs::read_to_string(path).map_err(|e| AssetError::Read {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Data rows (non-blank lines after the header) of a CSV file.
fn csv_rows(bytes: &[u8]) -> usize {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    rdr.records().filter_map(Result::ok).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatUnit {
    pub name: String,
    pub smiles: String,
    pub provenance: String,
}

/// Everything loaded from an asset directory.
#[derive(Debug, Clone)]
pub struct Assets {
    pub dir: PathBuf,
    pub fi_records: Vec<PolymerRecord>,
    pub cone_records: Vec<ConeRecord>,
    pub expert_labels: Vec<(String, FiLabel)>,
    pub repeat_units: Vec<RepeatUnit>,
}

impl Assets {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, AssetError> {
        let dir = dir.as_ref().to_path_buf();
        fn ingest(file: &'static str) -> impl Fn(IngestError) -> AssetError {
            move |source| AssetError::Ingest {
                file: file.to_string(),
                source,
            }
        }
        let fi_records = dataset::load_fi_table(dir.join(TABLE1_FILE)).map_err(ingest(TABLE1_FILE))?;
        let cone_records = dataset::load_cone_table(dir.join(TABLE2_FILE)).map_err(ingest(TABLE2_FILE))?;
        let expert_labels = read_expert_labels(&read_text(&dir.join(EXPERT_LABELS_FILE))?)?;
        let repeat_units = read_repeat_units(&read_text(&dir.join(REPEAT_UNITS_FILE))?)?;
        Ok(Self {
            dir,
            fi_records,
            cone_records,
            expert_labels,
            repeat_units,
        })
    }

    pub fn load_default() -> Result<Self, AssetError> {
        Self::load(default_assets_dir())
    }

    pub fn smiles_for(&self, name: &str) -> Option<&str> {
        self.repeat_units
            .iter()
            .find(|u| u.name == name)
            .map(|u| u.smiles.as_str())
    }
}

fn read_rows(text: &str, file: &str, columns: &[&str]) -> Result<Vec<Vec<String>>, AssetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| AssetError::Read {
            file: file.into(),
            message: e.to_string(),
        })?
        .clone();
    let idx = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| AssetError::Read {
                    file: file.into(),
                    message: format!("missing column `{c}`"),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| AssetError::Read {
                file: file.into(),
                message: format!("row {}: {e}", i + 1),
            })?;
            Ok(idx
                .iter()
                .map(|&j| rec.get(j).unwrap_or("").to_string())
                .collect())
        })
        .collect()
}

pub fn read_expert_labels(text: &str) -> Result<Vec<(String, FiLabel)>, AssetError> {
    read_rows(text, EXPERT_LABELS_FILE, &["name", "label"])?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let label = r[1].parse().map_err(|e: String| AssetError::Read {
                file: EXPERT_LABELS_FILE.into(),
                message: format!("row {}: {e}", i + 1),
            })?;
            Ok((r[0].clone(), label))
        })
        .collect()
}

pub fn read_repeat_units(text: &str) -> Result<Vec<RepeatUnit>, AssetError> {
    Ok(
        read_rows(text, REPEAT_UNITS_FILE, &["name", "smiles", "provenance"])?
            .into_iter()
            .map(|r| RepeatUnit {
                name: r[0].clone(),
                smiles: r[1].clone(),
                provenance: r[2].clone(),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssetCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssetReport {
    pub checks: Vec<AssetCheck>,
}

impl AssetReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(AssetCheck {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for AssetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Runs every integrity check and returns the full report; callers decide
/// whether failures are fatal (see [`verify_assets`]).
pub fn check_assets(dir: &Path) -> Result<AssetReport, AssetError> {
    let manifest = AssetManifest::load(dir)?;
    let mut report = AssetReport { checks: Vec::new() };

    for entry in &manifest.assets {
        match std::fs::read(dir.join(&entry.file)) {
            Err(e) => report.push(format!("{} present", entry.file), false, e.to_string()),
            Ok(bytes) => {
                let digest = sha256_hex(&bytes);
                report.push(
                    format!("{} checksum", entry.file),
                    digest == entry.sha256,
                    if digest == entry.sha256 {
                        "sha256 matches".to_string()
                    } else {
                        format!("expected {}, found {digest}", entry.sha256)
                    },
                );
                if entry.file.ends_with(".csv") {
                    let rows = csv_rows(&bytes);
                    report.push(
                        format!("{} row count", entry.file),
                        rows == entry.rows,
                        format!("expected {}, found {rows}", entry.rows),
                    );
                }
            }
        }
    }

    match dataset::load_fi_table(dir.join(TABLE1_FILE)) {
        Ok(records) => report.push(
            "table1 FI consistency",
            true,
            format!("{} rows within {}", records.len(), dataset::FI_TOLERANCE),
        ),
        Err(e) => report.push("table1 FI consistency", false, e.to_string()),
    }

    match read_text(&dir.join(EXPERT_LABELS_FILE)).and_then(|t| read_expert_labels(&t)) {
        Ok(labels) => {
            let mut per_class: BTreeMap<FiLabel, usize> = BTreeMap::new();
            for (_, l) in &labels {
                *per_class.entry(*l).or_default() += 1;
            }
            let balanced = FiLabel::ALL.iter().all(|l| per_class.get(l) == Some(&5));
            report.push(
                "expert labels balanced",
                balanced && labels.len() == 15,
                format!("{per_class:?}"),
            );
        }
        Err(e) => report.push("expert labels balanced", false, e.to_string()),
    }

    let units = read_text(&dir.join(REPEAT_UNITS_FILE)).and_then(|t| read_repeat_units(&t));
    let cone = dataset::load_cone_table(dir.join(TABLE2_FILE));
    match (units, cone) {
        (Ok(units), Ok(cone)) => {
            let missing: Vec<&str> = cone
                .iter()
                .map(|c| c.name.as_str())
                .filter(|n| !units.iter().any(|u| u.name == *n))
                .collect();
            report.push(
                "repeat units cover table2",
                missing.is_empty(),
                if missing.is_empty() {
                    "all names covered".to_string()
                } else {
                    format!("missing {missing:?}")
                },
            );
        }
        (Err(e), _) => report.push("repeat units cover table2", false, e.to_string()),
        (_, Err(e)) => report.push("repeat units cover table2", false, e.to_string()),
    }
    Ok(report)
}

/// Verifies the asset directory; any failed check becomes a named error.
pub fn verify_assets(dir: &Path) -> Result<AssetReport, AssetError> {
    let report = check_assets(dir)?;
    if report.passed() {
        Ok(report)
    } else {
        Err(AssetError::Verification(report.failures()))
    }
}

/// Rebuilds the manifest entries (row counts and checksums) for `dir`,
/// keeping the recorded sources.
pub fn refresh_manifest(dir: &Path) -> Result<AssetManifest, AssetError> {
    let mut manifest = AssetManifest::load(dir)?;
    for entry in &mut manifest.assets {
        let bytes = std::fs::read(dir.join(&entry.file)).map_err(|e| AssetError::Read {
            file: entry.file.clone(),
            message: e.to_string(),
        })?;
        entry.sha256 = sha256_hex(&bytes);
        if entry.file.ends_with(".csv") {
            entry.rows = csv_rows(&bytes);
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::DescriptorCatalog;

    fn shipped() -> PathBuf {
        PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/assets"))
    }

    /// Rewrites the shipped catalog manifest and checksums. Run with
    /// `cargo test -p polyflam-core regenerate -- --ignored` after editing assets.
    #[test]
    #[ignore]
    fn regenerate_shipped_files() {
        let dir = shipped();
        std::fs::write(dir.join(CATALOG_FILE), DescriptorCatalog::chem1().to_manifest()).unwrap();
        let manifest = refresh_manifest(&dir).unwrap();
        std::fs::write(dir.join(MANIFEST_FILE), manifest.to_toml()).unwrap();
    }

    #[test]
    fn shipped_assets_verify() {
        let report = verify_assets(&shipped()).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn shipped_catalog_matches_builtin() {
        let cat = DescriptorCatalog::load_manifest(shipped().join(CATALOG_FILE)).unwrap();
        assert_eq!(cat, DescriptorCatalog::chem1());
    }

    #[test]
    fn tampered_file_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        for f in [
            MANIFEST_FILE,
            TABLE1_FILE,
            TABLE2_FILE,
            EXPERT_LABELS_FILE,
            REPEAT_UNITS_FILE,
            CATALOG_FILE,
        ] {
            std::fs::copy(shipped().join(f), tmp.path().join(f)).unwrap();
        }
        let mut text = std::fs::read_to_string(tmp.path().join(TABLE2_FILE)).unwrap();
        text.push_str("Extra,1,1,1,1\n");
        std::fs::write(tmp.path().join(TABLE2_FILE), text).unwrap();
        match verify_assets(tmp.path()) {
            Err(AssetError::Verification(failures)) => {
                assert!(failures.iter().any(|f| f.starts_with("table2.csv checksum")));
                assert!(failures.iter().any(|f| f.starts_with("table2.csv row count")));
            }
            other => panic!("expected verification failure, got {other:?}"),
        }
    }

    #[test]
    fn assets_load() {
        let a = Assets::load(shipped()).unwrap();
        assert_eq!(a.fi_records.len(), 32);
        assert_eq!(a.cone_records.len(), 15);
        assert_eq!(a.expert_labels.len(), 15);
        assert!(a.smiles_for("Poly(styrene)").is_some());
    }
}
