//! Trained model bundles: persistence, prediction and reference data.
//!
//! A bundle is a single JSON document holding the descriptor catalog, one
//! forest per metric (as explicit node lists) and the training metadata.
//! Floats are written with round-trip precision, so a reloaded bundle
//! predicts bit-identically.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::Assets;
use crate::chem::{self, ParseError};
use crate::descriptors::{self, DescriptorCatalog, DescriptorError, PreparedStructure};
use crate::pipeline::{
    self, EvaluationReport, ExperimentConfig, PipelineError, RepeatedEvaluation, Target, TargetModel,
    TargetRun,
};
use crate::rng::derive_seed;

pub const BUNDLE_FORMAT: &str = "polyflam-bundle";
pub const BUNDLE_VERSION: u32 = 1;

/// Environment variable naming the default bundle path.
pub const BUNDLE_ENV: &str = "POLYFLAM_BUNDLE";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("bundle is corrupt or truncated: {0}")]
    Corrupt(String),
    #[error("not a model bundle (format `{0}`)")]
    WrongFormat(String),
    #[error("bundle version {found} is not supported (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("configuration error: {0}")]
    Configuration(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    /// Seconds since the Unix epoch when the bundle was written.
    pub created_unix: u64,
    pub master_seed: u64,
    pub crate_version: String,
    /// FI polymers kept by the outlier filter, i.e. the FI training table.
    pub retained_fi_polymers: Vec<String>,
    pub reports: Vec<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedBundle {
    pub format: String,
    pub version: u32,
    pub catalog: DescriptorCatalog,
    pub models: Vec<TargetModel>,
    pub metadata: BundleMetadata,
}

impl TrainedBundle {
    pub fn new(
        catalog: DescriptorCatalog,
        models: Vec<TargetModel>,
        metadata: BundleMetadata,
    ) -> Result<Self, BundleError> {
        let bundle = Self {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            catalog,
            models,
            metadata,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn catalog_id(&self) -> &str {
        &self.catalog.catalog_id
    }

    pub fn model(&self, target: Target) -> Option<&TargetModel> {
        self.models.iter().find(|m| m.target == target)
    }

    /// Checks the format tag, the version, and that every model reads only
    /// catalog descriptors, in the catalog's own terms.
    pub fn validate(&self) -> Result<(), BundleError> {
        if self.format != BUNDLE_FORMAT {
            return Err(BundleError::WrongFormat(self.format.clone()));
        }
        if self.version != BUNDLE_VERSION {
            return Err(BundleError::UnsupportedVersion {
                found: self.version.into(),
                supported: BUNDLE_VERSION,
            });
        }
        self.catalog
            .validate()
            .map_err(|e| BundleError::Configuration(e.to_string()))?;
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].iter().any(|o| o.target == m.target) {
                return Err(BundleError::Configuration(format!("two models for {}", m.target)));
            }
            if let Some(f) = m
                .feature_names
                .iter()
                .find(|f| self.catalog.index_of(f).is_none())
            {
                return Err(BundleError::Configuration(format!(
                    "{} model uses `{f}`, which is not in catalog {}",
                    m.target,
                    self.catalog_id()
                )));
            }
            if m.forest.feature_count != m.feature_names.len() {
                return Err(BundleError::Configuration(format!(
                    "{} model expects {} inputs but lists {} features",
                    m.target,
                    m.forest.feature_count,
                    m.feature_names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        // Read the header first so a newer layout reports its version rather
        // than a schema mismatch.
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| BundleError::Corrupt(e.to_string()))?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
        if format != BUNDLE_FORMAT {
            return Err(BundleError::WrongFormat(format.to_string()));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(BUNDLE_VERSION) => {}
            Some(v) => {
                return Err(BundleError::UnsupportedVersion {
                    found: v,
                    supported: BUNDLE_VERSION,
                })
            }
            None => return Err(BundleError::Corrupt("missing version".into())),
        }
        let bundle: Self = serde_json::from_value(value).map_err(|e| BundleError::Corrupt(e.to_string()))?;
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn save_bundle(bundle: &TrainedBundle, path: impl AsRef<Path>) -> Result<(), BundleError> {
    let path = path.as_ref();
    std::fs::write(path, bundle.to_json()).map_err(|e| BundleError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<TrainedBundle, BundleError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| BundleError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    TrainedBundle::from_json(&text)
}

// ---------------------------------------------------------------------------
// Training and evaluation over the shipped assets

/// Unix time for bundle metadata; `SOURCE_DATE_EPOCH` overrides the clock
/// for reproducible builds.
fn now_unix() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Filters the FI table, then runs the sweeps and final training for every
/// configured target.
pub fn train_bundle(
    cfg: &ExperimentConfig,
    assets: &Assets,
    catalog: &DescriptorCatalog,
) -> Result<(TrainedBundle, Vec<TargetRun>), PipelineError> {
    let retained: Vec<String> = pipeline::filter_fi_table(assets, catalog)?
        .kept
        .into_iter()
        .map(|r| r.name)
        .collect();
    let mut runs = Vec::with_capacity(cfg.targets.len());
    for &target in &cfg.targets {
        let real = pipeline::real_table(assets, target, catalog, &retained)?;
        runs.push(pipeline::run_target(&real, cfg)?);
    }
    let metadata = BundleMetadata {
        created_unix: now_unix(),
        master_seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        retained_fi_polymers: retained,
        reports: runs.iter().map(|r| r.report.clone()).collect(),
    };
    let models = runs.iter().map(|r| r.model.clone()).collect();
    let bundle = TrainedBundle::new(catalog.clone(), models, metadata)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok((bundle, runs))
}

/// Repeated evaluation of each bundled model's settings (synthetic size,
/// top-k, forest hyperparameters) under the configured repeat count.
pub fn evaluate_bundle(
    cfg: &ExperimentConfig,
    assets: &Assets,
    bundle: &TrainedBundle,
) -> Result<Vec<RepeatedEvaluation>, PipelineError> {
    bundle
        .models
        .iter()
        .map(|m| {
            let real = pipeline::real_table(
                assets,
                m.target,
                &bundle.catalog,
                &bundle.metadata.retained_fi_polymers,
            )?;
            pipeline::repeated_eval(
                &real,
                m.n_synthetic,
                m.top_k,
                &m.forest.hyperparams,
                cfg.repeats,
                cfg.test_size,
                derive_seed(cfg.seed, "eval", m.target as u64),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Prediction

/// A structure submitted for prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum StructureInput {
    Smiles(String),
    Pdb(Vec<u8>),
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("descriptor computation failed: {0}")]
    Descriptor(#[from] DescriptorError),
    #[error("configuration error: {0}")]
    Configuration(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub target: Target,
    pub units: String,
    pub n_synthetic: usize,
    pub top_k: pipeline::TopK,
    pub feature_names: Vec<String>,
    pub target_range: (f64, f64),
}

impl ModelInfo {
    fn of(m: &TargetModel) -> Self {
        Self {
            target: m.target,
            units: m.target.units().into(),
            n_synthetic: m.n_synthetic,
            top_k: m.top_k,
            feature_names: m.feature_names.clone(),
            target_range: m.target_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlammabilityPrediction {
    pub fi: f64,
    pub tig: f64,
    pub phrr: f64,
    pub tsr: f64,
    pub figra: f64,
    pub catalog_id: String,
    pub descriptors: Vec<DescriptorValue>,
    pub models: Vec<ModelInfo>,
}

impl FlammabilityPrediction {
    pub fn value(&self, target: Target) -> f64 {
        match target {
            Target::Fi => self.fi,
            Target::Tig => self.tig,
            Target::Phrr => self.phrr,
            Target::Tsr => self.tsr,
            Target::Figra => self.figra,
        }
    }
}

/// Summary of a bundle for clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub format: String,
    pub version: u32,
    pub catalog_id: String,
    pub metadata: BundleMetadata,
    pub models: Vec<ModelInfo>,
}

impl TrainedBundle {
    pub fn summary(&self) -> BundleSummary {
        BundleSummary {
            format: self.format.clone(),
            version: self.version,
            catalog_id: self.catalog_id().into(),
            metadata: self.metadata.clone(),
            models: self.models.iter().map(ModelInfo::of).collect(),
        }
    }

    /// Predicts every metric from a full catalog descriptor vector.
    pub fn predict_descriptors(&self, values: &[f64]) -> Result<[f64; 5], PredictError> {
        if values.len() != self.catalog.len() {
            return Err(PredictError::Configuration(format!(
                "{} descriptor values for a {}-entry catalog",
                values.len(),
                self.catalog.len()
            )));
        }
        let mut out = [0.0; 5];
        for (slot, target) in out.iter_mut().zip(Target::ALL) {
            let model = self
                .model(target)
                .ok_or_else(|| PredictError::Configuration(format!("bundle has no {target} model")))?;
            *slot = model
                .predict(&self.catalog, values)
                .map_err(|e| PredictError::Configuration(e.to_string()))?;
        }
        Ok(out)
    }
}

/// Parses the structure, strips attachment points, computes the bundle's
/// descriptors and predicts all five metrics.
pub fn predict_all(
    input: &StructureInput,
    bundle: &TrainedBundle,
) -> Result<FlammabilityPrediction, PredictError> {
    let graph = match input {
        StructureInput::Smiles(s) => chem::parse_smiles(s)?,
        StructureInput::Pdb(bytes) => chem::parse_pdb(bytes)?,
    };
    let structure = PreparedStructure::from_graph(&graph);
    let vector = descriptors::compute_descriptors(&structure, &bundle.catalog)?;
    let [fi, tig, phrr, tsr, figra] = bundle.predict_descriptors(&vector.values)?;
    Ok(FlammabilityPrediction {
        fi,
        tig,
        phrr,
        tsr,
        figra,
        catalog_id: vector.catalog_id,
        descriptors: bundle
            .catalog
            .names()
            .into_iter()
            .zip(vector.values)
            .map(|(name, value)| DescriptorValue { name, value })
            .collect(),
        models: Target::ALL
            .iter()
            .filter_map(|t| bundle.model(*t))
            .map(ModelInfo::of)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseValues {
    pub metric: Target,
    pub units: String,
    pub values: Vec<f64>,
}

/// Experimental values of `metric` for comparison plots: the retained FI
/// values, or a cone-calorimetry column.
pub fn database_comparison(
    bundle: &TrainedBundle,
    assets: &Assets,
    metric: &str,
) -> Result<DatabaseValues, BundleError> {
    let target: Target = metric.parse().map_err(BundleError::Configuration)?;
    Ok(DatabaseValues {
        metric: target,
        units: target.units().into(),
        values: pipeline::database_values(assets, target, &bundle.metadata.retained_fi_polymers),
    })
}
