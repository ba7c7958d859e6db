//! Personalized re-ranking with a contextualized transformer.
//!
//! A session pairs a user's clicked history with an initial candidate list.
//! Each item is fused with the user's features by a shared two-layer MLP,
//! the history attends to itself, and every candidate (plus a learnable
//! summary token) attends over the merged pool of history and candidate
//! keys. Per-candidate click heads and a list-level "any click" head are
//! trained jointly.
//!
//! Everything runs on [`tensor::Matrix`] (row-major `f64`) with gradients
//! from the taped reverse-mode engine in [`autograd`].

pub mod ablation;
pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod datasim;
pub mod dropout;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod params;
pub mod ranker;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Matrix;
