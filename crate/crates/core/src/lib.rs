//! Graph Gaussian process (GGP) node classification.
//!
//! The GGP prior places a Gaussian process on node features and averages it
//! over each node's closed 1-hop neighborhood, so the covariance between two
//! nodes is the inner product of their empirical kernel mean embeddings.
//! Inference uses whitened inducing points with a robust-max likelihood.
//!
//! Modules:
//! - [`graph`]: sparse undirected graphs, Laplacian and averaging operators
//! - [`features`]: sparse features, TFIDF, base kernels
//! - [`prior`]: GGP covariance blocks
//! - [`svgp`]: variational family, likelihood, ELBO and prediction
//! - [`train`]: initialization, ADAM fitting and gradient checking
//! - [`active`]: Σ-optimal / random acquisition, label propagation, ALC
//! - [`data`]: dataset files and synthetic block-model graphs
//! - [`checkpoint`]: model persistence

#[macro_use]
mod par;

pub mod active;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod features;
pub mod graph;
pub mod linalg;
pub mod prior;
pub mod svgp;
pub mod train;

pub use error::{GgpError, Result};
pub use features::{FeatureMatrix, KernelFamily, KernelSpec};
pub use graph::SparseGraph;
pub use prior::GgpPrior;
pub use svgp::{QuadratureRule, RobustMaxLikelihood, VariationalState};
pub use train::{TrainConfig, TrainedModel};


