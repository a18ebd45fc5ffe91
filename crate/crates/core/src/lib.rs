//! Tomographic reconstruction with learned nonnegative patch dictionaries.
//!
//! The crate is organised in two stages. [`dictlearn`] learns a nonnegative
//! dictionary from training patches by ADMM-based non-negative sparse coding.
//! [`recon`] then reconstructs an image from a few noisy parallel-beam
//! projections as a conic combination of dictionary columns over
//! non-overlapping blocks. [`projector`] builds the system matrix and
//! simulates data, [`eval`] measures cone approximation and reconstruction
//! errors, and [`io`] holds the on-disk formats.
//!
//! All images are vectorized column-major. Blocks are ordered column-major
//! over the block grid and pixels inside a block are column-major as well.

pub mod blocks;
pub mod dictionary;
pub mod dictlearn;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod phantom;
pub mod projector;
pub mod recon;
pub mod sparse;

pub use blocks::{BlockPermutation, BoundaryOperator};
pub use dictionary::{ConstraintSet, Dictionary, Provenance};
pub use error::{Error, Result};
pub use image::{GrayImage, PatchGeometry, PatchMatrix};
pub use sparse::CsrMatrix;
