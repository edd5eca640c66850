//! Command-line front end and HTTP service for the polymer flammability
//! models in `polyflam-core`.

pub mod cli;
pub mod http;
