//! Dense pseudo segmentation labels from extreme-point annotations.
//!
//! The four extreme points of an object seed a random walk over a
//! symmetric doubly-stochastic transition matrix built from patch
//! similarities. Nodes inside the box that the foreground seeds reach more
//! readily than the background seeds become pseudo-foreground points, the
//! reverse become pseudo-background points, and the rest stay unlabeled.
//!
//! Modules, bottom-up:
//!
//! - [`grid`]: extreme points, boxes, crop windows, pixel to patch mapping
//! - [`tpm`]: Sinkhorn-Knopp scaling, symmetrization, α-hop and absorbing propagation
//! - [`retrieval`]: propagation scores, threshold labeling, point dropout, sparse targets
//! - [`loss`]: dice, MIL projection, point, CRF and overall losses
//! - [`crf`]: binary dense-CRF mean-field refinement
//! - [`synth`]: synthetic scenes with occluders and their similarity matrices
//! - [`metrics`]: IoU, point precision/recall, retention
//! - [`io`] and [`config`]: file formats and run configuration
//! - [`pipeline`]: the per-object pipeline tying everything together

pub mod config;
pub mod crf;
mod error;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
pub mod tpm;

pub use error::{Error, Result};
