//! Tree tensor networks for least-squares statistical learning.
//!
//! The crate provides:
//!
//! - [`tree`]: dimension partition trees over `{1, ..., d}`;
//! - [`tensor`]: dense/sparse tensor kernels (contractions, matricization,
//!   truncated SVD, operator norms);
//! - [`network`]: the tree tensor network model class with evaluation,
//!   complexity counting, normalization and orthogonalization;
//! - [`features`]: per-variable polynomial bases and the tensorized
//!   (quantized) feature space;
//! - [`learn`]: alternating least squares and adaptive exploration (rank
//!   paths, tree adaptation, candidate generation);
//! - [`select`]: penalized model selection with the exact selection path and
//!   the complexity-jump calibration of the penalty weight;
//! - [`harness`]: benchmark problems, the experiment protocol, CSV/SVG
//!   reports.

pub mod error;
pub mod features;
pub mod harness;
pub mod learn;
pub mod network;
pub mod select;
pub mod tensor;
pub mod tree;

pub use error::{Error, Result};
pub use features::{FeatureMap, TensorizationMap, VariableBasis};
pub use learn::{Dataset, FitOptions, ModelRecord};
pub use network::{ModelSpec, TreeTensorNetwork};
pub use select::{RecordSummary, SelectionPath};
pub use tensor::{DenseTensor, SparsityPattern};
pub use tree::DimensionTree;
