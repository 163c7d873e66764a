//! Kolmogorov-Arnold convolution for text classification.
//!
//! The crate is organized bottom-up:
//!
//! - [`spline`]: B-spline grids, basis evaluation and coefficient fitting.
//! - [`autodiff`]: dense tensors, a reverse-mode tape and the Adam optimizer.
//! - [`layers`]: `Conv1d`, `KaConv1d`, the KAN layer, the MLP head and a
//!   two-stage KAN stack for function fitting.
//! - [`models`]: the four classifier variants and parameter accounting.
//! - [`embeddings`]: vocabulary, text vector files and embedding modes.
//! - [`pipeline`]: datasets, stratified splits, training, metrics,
//!   checkpoints and spline export.

pub mod autodiff;
pub mod embeddings;
pub mod error;
pub mod layers;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod spline;

pub use error::{Error, Result};
