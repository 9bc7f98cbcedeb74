//! Out-of-distribution (OoD) detection for semantic segmentation from
//! softmax outputs.
//!
//! The crate covers the full post-hoc pipeline:
//!
//! * [`tensor`] and [`manifest`]: validated softmax, label, heat and feature
//!   maps with a little-endian binary file format, plus JSON dataset manifests.
//! * [`dispersion`]: pixel-wise uncertainty (normalized entropy, variation
//!   ratio, probability margin, max-softmax).
//! * [`segments`]: entropy thresholding, 8-connected OoD segments and their
//!   matching against ground truth.
//! * [`features`]: hand-crafted per-segment metrics used for meta classification.
//! * [`meta`]: logistic-regression meta classifier, leave-one-out validation,
//!   false-positive removal and least angle regression.
//! * [`eval`]: ROC/PR curves, FPR at fixed TPR, segment error tables, road
//!   miss rate, mIoU with an OoD class and quantile summaries.
//! * [`toy`]: a small per-pixel network trained with the entropy-maximization
//!   objective on synthetic scenes, and the MSP/ODIN/Mahalanobis/MC-dropout
//!   baselines.
//! * [`pipeline`]: end-to-end runs over seeds, used by the CLI and the
//!   acceptance suite.
//!
//! Data-parallel loops go through [`par`], which falls back to sequential
//! execution when the `parallel` feature is disabled.

pub mod dispersion;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod meta;
pub mod par;
pub mod pipeline;
pub mod segments;
pub mod tensor;
pub mod toy;

pub use error::{Error, ErrorClass, Result};
