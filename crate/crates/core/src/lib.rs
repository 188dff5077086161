//! Error-propagation calculus on finite-dimensional Gaussian structures.
//!
//! Layers, bottom to top: [`expr`] (expressions with exact derivatives),
//! [`structures`] (carré du champ, Dirichlet form, generator composition),
//! [`white_noise`] (truncated orthonormal white noise measures),
//! [`mv_gradient`] (D-gradients and measure-valued gradients), [`image`]
//! (image structures), [`wiener`] (truncated Wiener space) and [`harness`]
//! (configuration, named checks, reports).

pub mod error;
pub mod expr;
pub mod linalg;
pub mod rng;
pub mod stats;
pub mod structures;
pub mod white_noise;
pub mod mv_gradient;
pub mod image;
pub mod wiener;
pub mod harness;

pub use error::{Error, Result};
