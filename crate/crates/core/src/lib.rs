//! 3D multi-object tracking by edge classification on sparse spatio-temporal
//! graphs of oriented detections.
//!
//! Detections become graph nodes; candidate associations become inter-frame
//! edges carrying pairwise localized-polar features, and nearby detections in
//! the same frame are linked by intra-frame context edges. A message-passing
//! network classifies inter-frame edges; greedy constrained decoding turns the
//! scores into tracks. Both an offline (whole-sequence graph) and an online
//! (continuously evolving graph) mode are provided.

pub mod autodiff;
pub mod baseline;
pub mod config;
pub mod decoding;
pub mod detections;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod online;
pub mod relgeom;
pub mod synth;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
