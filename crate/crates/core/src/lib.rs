//! Exact maximum-likelihood training of square, fully connected invertible
//! networks.
//!
//! The gradient of `log |det W|` is `W⁻ᵀ`, which costs `O(D³)` per layer.
//! Right-multiplying the whole layer gradient by `WᵀW` (the relative
//! gradient) removes the inverse and leaves an update that needs only
//! matrix-vector products, so a training step costs `O(L·D²)` per sample.
//!
//! Modules, bottom-up:
//!
//! - [`linalg`]: dense kernels, LU, seeded RNG
//! - [`model`]: networks, nonlinearities, base densities, log-likelihood
//! - [`grad`]: δ-recursion, ordinary and relative gradients, oracles
//! - [`train`]: SGD / Adam loop with early stopping
//! - [`invert`]: exact inversion and sampling
//! - [`data`]: toy generators, delimited-text ingestion, standardization
//! - [`bench`]: gradient timing harness
//! - [`cli`]: the `relgrad` command

pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod invert;
pub mod linalg;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use grad::{GradientFlavor, LayerGradient};
pub use linalg::{Matrix, Rng, Vector};
pub use model::{BaseDistribution, Network, Nonlinearity};
