//! Polymer flammability prediction.
//!
//! The crate covers the whole offline pipeline: experimental tables
//! ([`dataset`]), repeat-unit structure parsing ([`chem`]), a fixed
//! descriptor catalog ([`descriptors`]), Gaussian-copula augmentation
//! ([`copula`]), random forests ([`forest`]) and the experiment drivers
//! ([`pipeline`]). [`bundle`] holds trained models and serves predictions.

pub mod assets;
pub mod bundle;
pub mod chem;
pub mod copula;
pub mod dataset;
pub mod descriptors;
pub mod forest;
pub mod metrics;
pub mod pipeline;
pub mod rng;
