//! Meta-path learning on heterogeneous graphs.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`graph`] loads or builds a typed, multi-relational graph with dense
//!    node features and labelled splits.
//! 2. [`scoring`] ranks candidate relations by how well a learned
//!    neighbour-weighting explains the current targets, and evolves those
//!    targets into multi-instance bags for deeper hops.
//! 3. [`search`] chains relation scoring into greedy or beam meta-path
//!    search, training a model per prefix to pick the best depth.
//! 4. [`model`] implements the meta-path-structured GNN (plus an RGCN
//!    reference forward pass) on the hand-rolled kernels in [`nn`].
//! 5. [`syngen`] generates synthetic heterogeneous graphs with a planted
//!    ground-truth meta-path, used by the recovery experiments.
//!
//! Everything is `f64`, seeded, and deterministic: same inputs, same seed,
//! same bytes out.

pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod scoring;
pub mod search;
pub mod syngen;

pub use error::{Error, Result};
