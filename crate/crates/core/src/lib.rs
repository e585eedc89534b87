//! Total-variation image reconstruction with the fast parallel proximal
//! algorithm (FPPA) and its trainable unrolled counterpart (TPPA).
//!
//! The crate is organized bottom-up:
//!
//! - [`linops`]: circular convolution, its adjoint, Gaussian PSFs and the
//!   operator norm.
//! - [`haar4`]: the union of four orthogonal single-level Haar transforms
//!   that realizes anisotropic TV as a tight frame.
//! - [`shrinkage`]: soft-thresholding, B-spline shrinkage functions and the
//!   positive step-size map.
//! - [`solver`]: classical FPPA reconstruction and the TV cost.
//! - [`network`]: the unrolled trainable network with a tape of
//!   intermediates.
//! - [`backprop`]: exact reverse-mode gradient through the network and a
//!   finite-difference oracle.
//! - [`trainer`]: Nesterov-accelerated full-batch training.
//! - [`harness`]: noise, metrics, phantoms, patches and datasets.
//! - [`io`]: the FIMG, PGM, TPPA checkpoint and CSV file formats.

pub mod backprop;
pub mod error;
pub mod haar4;
pub mod harness;
pub mod image;
pub mod io;
pub mod linops;
pub mod network;
pub mod rng;
pub mod shrinkage;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;
