//! Multi-modal entity alignment between two knowledge graphs in the
//! Poincaré ball.
//!
//! The pipeline is:
//!
//! 1. [`data`] loads (or synthesizes) two triple stores, optional per-entity
//!    visual feature vectors and a list of known equivalent entity pairs.
//! 2. [`graph`] turns the triples into the symmetric normalized adjacency
//!    `D^-1/2 (A + I) D^-1/2` of the disjoint union of both graphs.
//! 3. [`model`] runs a hyperbolic GCN per channel (structure, visual):
//!    log map to the tangent space at the origin, propagate and transform,
//!    ReLU, exp map back at the next layer's curvature.
//! 4. [`train`] minimizes a margin ranking loss over seed pairs with
//!    negative sampling and Adam, using hand-written backward passes.
//! 5. [`eval`] fuses the two channels with Möbius operations and ranks
//!    candidates by the L1 norm of the Möbius difference.
//!
//! Data-parallel inner loops (row-wise maps, distance rows, per-pair loss
//! terms) go through [`exec::Exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to a plain loop otherwise. Both paths
//! produce bit-identical results.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod graph;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
