//! Texture segmentation from wavelet-leader regularity estimates.
//!
//! Pipeline: [`wavelet::analyze`] turns an image into a log-leader pyramid,
//! [`fidelity`] condenses it into per-pixel regression statistics, the
//! [`solvers`] compute total-variation regularised estimates of local
//! regularity, and [`segmentation`] thresholds them into a mask.
//! [`synthesis`] produces piecewise fractal textures with known ground truth
//! and [`harness`] runs the benchmark grids.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fidelity;
pub mod gridops;
pub mod harness;
pub mod io;
pub mod segmentation;
pub mod solvers;
pub mod synthesis;
pub mod wavelet;

pub use error::{Error, Result};
