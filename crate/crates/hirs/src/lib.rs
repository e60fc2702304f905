//! Feature-interaction recommendation with generated hyperedges.
//!
//! Each data sample (a set of feature-value pairs with an implicit-feedback
//! label) is treated as a hypergraph over its features. A gate network
//! predicts a continuous incidence matrix whose columns are candidate
//! feature interactions of arbitrary order, a hypergraph network classifies
//! the gated graph, and training combines four signals: prediction BCE,
//! a closed-form L0 activation penalty on the gates, a supervised infomax
//! term tying hyperedge representations to label-conditioned graph
//! representations, and an infomin term pushing hyperedges apart.
//!
//! The crate is organized to mirror that pipeline:
//!
//! - [`numerics`]: tensors, the reverse-mode tape, Adam, gradcheck
//! - [`data`]: ingestion, implicit-feedback conversion, negative sampling,
//!   splits, batching, dataset cache
//! - [`edgegen`]: hard-concrete gate sampling and the L0 penalty
//! - [`ihgnn`]: hyperedge modeling, graph readout, and fixed-incidence
//!   reductions (FM / NFM / DeepFM / pairwise-MLP)
//! - [`infomax`]: bilinear discriminators and contrastive pair sampling
//! - [`trainer`]: the combined objective, Adam training loop, checkpoints,
//!   ablation switches
//! - [`evalsuite`]: ranking metrics, order histograms, incidence dumps,
//!   runtime scaling bench
//! - [`synthbench`]: planted-interaction synthetic data and recovery
//!   scoring
//! - [`config`] / [`cli`]: flat key=value run configuration and the
//!   subcommand surface used by the `hirs` binary
//!
//! See `examples/` for one runnable walkthrough per capability.



pub mod cli;
pub mod config;
pub mod data;
pub mod edgegen;
pub mod error;



pub mod ihgnn;
pub mod infomax;
pub mod model;
pub mod numerics;
pub mod synthbench;
pub mod trainer;
pub mod evalsuite;



pub use error::{DataError, HirsError, NumericsError, Result};
