//! Dual-branch graph domain adaptation for multimodal emotion recognition
//! in conversations.
//!
//! The crate bundles a small reverse-mode autodiff engine, the hypergraph
//! and path message-passing branches, adversarial alignment, cross-branch
//! pseudo-label coupling, a noise-robust classification loss, exact
//! Wasserstein-1 and risk-bound evaluators, a synthetic two-domain data
//! generator with its binary feature format, and the training loop.

pub mod alignment;
pub mod bounds;
pub mod config;
pub mod coupling;
pub mod encoder;
pub mod error;
pub mod format;
pub mod gradcheck;
pub mod graph;
pub mod hgnn;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod pathnn;
pub mod robust;
pub mod synth;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use optim::{Adam, AdamConfig, Binder, ParamStore};
pub use tape::{Gradients, SparsePattern, Tape, Var};
pub use tensor::Tensor;
