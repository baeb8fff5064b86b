//! Unified spatial-temporal attention networks for skeleton-based action
//! recognition, self-contained at desk scale.
//!
//! The crate provides a dense-tensor kernel with reverse-mode differentiation
//! (`tensor`), skeleton graphs, synthetic data and file formats (`data`), the
//! multi-scale pooling attention module (`attention`), the unified attention
//! block (`block`), the stacked classifier model (`model`), exact parameter
//! and FLOP accounting (`accounting`), and a deterministic training loop
//! (`training`). `reference` holds independent scalar reimplementations used
//! as oracles by the test suites, and `checks` bundles the finite-difference
//! gradient verification run by tests and the CLI.

pub mod accounting;
pub mod attention;
pub mod block;
pub mod checks;
pub mod data;
pub mod error;
pub mod model;
pub mod reference;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
