//! Sparse hypergraph process simulation and nonparametric embeddings of
//! sparse high-order interaction events.
//!
//! The crate has two halves:
//!
//! * [`procsim`] samples hypergraphs from the Gamma-process / Poisson point
//!   process construction and evaluates closed-form asymptotic bounds on the
//!   sparsity ratio.
//! * [`embeddings`], [`gp`], [`inference`] and [`eval`] implement the
//!   embedding model: stick-breaking sociabilities feed a sparse variational
//!   Gaussian process whose square modulates a Poisson process per
//!   interaction.
//!
//! [`data`] handles event files and synthetic data. Data-parallel loops go
//! through [`par`], which uses rayon when the `parallel` feature is enabled
//! and plain iterators otherwise.

pub mod data;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod gp;
pub mod inference;
pub mod par;
pub mod procsim;
pub mod rng;

pub use error::{NeshError, Result};
