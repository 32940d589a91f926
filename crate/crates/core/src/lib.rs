//! Two-modality stacking with upstream probabilistic meta-imputation.
//!
//! Per-modality feature tables are reduced by a four-stage selection chain,
//! fed to class-weighted logistic regressions, and the out-of-fold
//! probabilities are turned into 7-D meta-feature vectors. Class-conditional
//! Gaussian mixtures fit on each training fold's meta-features generate
//! validity-constrained synthetic vectors, and a random forest is trained on
//! the union of real and synthetic meta-features.
//!
//! The crate also ships the evaluation harness (ablation over synthetic dose,
//! ROC/AUC, paired tests, bootstrap intervals, two-sample KS) and a
//! synthetic cohort generator for desk-scale experiments.

pub mod ablation;
pub mod cli;
pub mod cohort;
pub mod config;
pub mod error;
pub mod forest;
pub mod gmm;
pub mod logistic;
pub mod meta;
pub mod metrics;
pub mod rng;
pub mod scale;
pub mod selection;
pub mod stats;
pub mod table;

pub use error::{Result, UpmiError};
