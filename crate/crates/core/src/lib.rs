//! Voxel-wise fMRI encoding models for naturalistic language experiments.
//!
//! The crate covers the whole path from per-word feature matrices and BOLD
//! runs to brain-correlation maps and the statistics built on them:
//!
//! * [`matio`]: NPY matrices, TSV tables and JSON manifests.
//! * [`preprocess`]: temporal cleaning, averaging, trimming, group masks.
//! * [`design`]: HRF convolution of word-level features into scan regressors.
//! * [`encoder`]: multi-target ridge with nested run-wise cross-validation.
//! * [`reliability`]: model-free inter-subject correlation.
//! * [`analysis`]: scaling laws, voxel-wise slopes, hemispheric asymmetry.
//! * [`synth`]: synthetic studies with known ground truth.

pub mod analysis;
pub mod design;
pub mod encoder;
pub mod matio;
pub mod preprocess;
pub mod reliability;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod volume;

pub use volume::{Hemisphere, Mask, VoxelGeometry};
