//! Dual-encoder ("Y"-shaped) segmentation network for polyp detection, built
//! on a small tape-based reverse-mode autodiff core.
//!
//! The crate is organized around six subsystems:
//!
//! - [`tensor`] — dense `f32` tensors, the operation tape, and finite-difference
//!   gradient checking for every backward rule.
//! - [`model`] — the dual-encoder network (pretrained-transferable encoder one,
//!   SELU encoder two, shared decoder with sum-skip-concatenation) plus the two
//!   single-encoder baselines, all scalable down to desk-size configs.
//! - [`optim`] — the weighted cross-entropy + dice composite loss, RMSProp with
//!   per-parameter-group rate scaling, the training loop, and early stopping.
//! - [`data`] — dataset layout and manifests, preprocessing, the offline/online
//!   augmentation pipelines, and a synthetic dataset generator for fully
//!   reproducible desk-scale runs.
//! - [`eval`] — detection extraction from probability masks, frame matching,
//!   precision/recall/F1/F2 scoring, and per-video detection latency.
//! - [`weights`] — a deterministic binary checkpoint format (`.ynw`) and the
//!   pretrained-encoder transfer path.
//!
//! See the `examples/` directory for one runnable program per capability; the
//! thin `ynet` binary exposes the same workflow as subcommands
//! (`synth | pretrain | train | eval | infer | score`).

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
