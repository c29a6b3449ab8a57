//! Interaction-aware multimodal mixture-of-experts fusion.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small tape-based reverse-mode engine over dense 2-D
//!   `f64` tensors, plus a central-difference gradient checker.
//! - [`cellgraph`]: k-nearest-neighbour nuclei graphs.
//! - [`encoders`]: gated attention MIL pooling, GraphSAGE, and the token
//!   projectors that turn each modality into a `P x d` token matrix.
//! - [`moe`]: uniqueness / synergy / redundancy experts, random-tensor
//!   perturbation, the input-dependent gate, and the combined loss.
//! - [`synthbench`]: synthetic multimodal datasets with planted
//!   interaction structure.
//! - [`harness`]: patient-level folds, training, metrics, checkpoints,
//!   explanation dumps and backbone comparisons.

pub mod autodiff;
pub mod cellgraph;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod moe;
pub mod synthbench;

pub use error::{Error, Result};
