//! Graph-regression Laplacian learning and Chebyshev graph convolution for
//! skeleton-based action recognition.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: dense row-major matrices and a symmetric spectral-radius
//!   estimate.
//! * [`graph`]: weighted graphs, Laplacians, total variation.
//! * [`regression`]: Laplacian learning from spatio-temporal frames by
//!   projected gradient on the weight simplex, plus common-graph aggregation.
//! * [`stgraph`]: skeleton topologies and the `3n`-vertex spatio-temporal
//!   graph templates.
//! * [`chebynet`]: Chebyshev graph convolution and the classifier network.
//! * [`data`]: sequence files, preprocessing and a synthetic generator.
//! * [`metrics`]: confusion matrices and per-class scores.

pub mod chebynet;
pub mod data;
mod error;
pub mod graph;
pub mod metrics;
pub mod numerics;
pub mod regression;
pub mod stgraph;

pub use error::{Error, ErrorKind, Result};
pub use numerics::Matrix;
