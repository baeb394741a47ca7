//! Semantic-aware personalized federated training of Wi-Fi gesture
//! classifiers and zero-shot model transfer to unlabelled receivers.

pub mod config;
pub mod csi;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod mapping;
pub mod metric;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod semantics;
pub mod train;
pub mod transfer;

pub use error::{PsanError, Result};
pub use metric::Metric;
