//! Pseudo-label quality toolkit for semi-supervised object detection.
//!
//! Box geometry, anchor pyramids and feature resampling, label assigners
//! with a noise-robustness harness, loss kernels, GMM-based adaptive score
//! thresholds, COCO-style evaluation and a seeded mean-teacher simulator.

pub mod assign;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fmt;
pub mod geom;
pub mod gmm;
pub mod io;
pub mod losses;
pub mod pyramid;
pub mod seed;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
pub use geom::BBox;
