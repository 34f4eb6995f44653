//! Learned binary hash codes for labeled data.
//!
//! The pipeline embeds features through an anchor-based RBF map, learns one
//! binary SVM per bit plus a multi-class SVM over the codes (all trained by
//! a cutting-plane solver with warm starts), and alternates SVM training
//! with discrete per-column code optimization. Models support incremental
//! retraining after database modifications and Hamming-ranking evaluation.
//!
//! All numeric code is generic over the scalar type via [`real::Real`];
//! `f64` aliases are exported at the crate root and are what the CLI and
//! the binary file formats use.

pub mod codes;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod incremental;
pub mod kernel;
pub mod model_io;
pub mod real;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;

/// `f64` aliases for the main domain types.
pub type Dataset64 = dataset::Dataset<f64>;
pub type PreprocessStats64 = dataset::PreprocessStats<f64>;
pub type AnchorSet64 = kernel::AnchorSet<f64>;
pub type TrainConfig64 = trainer::TrainConfig<f64>;
pub type HashModel64 = trainer::HashModel<f64>;
pub type TrainState64 = incremental::TrainState<f64>;
pub type ModificationEvent64 = incremental::ModificationEvent<f64>;

/// `f32` aliases for memory-lean deployments.
pub type Dataset32 = dataset::Dataset<f32>;
pub type PreprocessStats32 = dataset::PreprocessStats<f32>;
pub type AnchorSet32 = kernel::AnchorSet<f32>;
pub type TrainConfig32 = trainer::TrainConfig<f32>;
pub type HashModel32 = trainer::HashModel<f32>;
pub type TrainState32 = incremental::TrainState<f32>;
pub type ModificationEvent32 = incremental::ModificationEvent<f32>;
