//! E(3)-equivariant diffusion for 3D molecule generation.
//!
//! A joint diffusion process over continuous atom coordinates and
//! categorical/integer atom features, denoised by an equivariant graph
//! network, with exact log-likelihood estimation, conditional generation,
//! and distance-based chemistry metrics. Built on a small tape-based
//! autodiff engine; 64-bit floats throughout.

pub mod autodiff;
pub mod chem;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod diffusion;
pub mod egnn;
mod error;
pub mod geometry;
pub mod molecule;
pub mod schedule;

pub use error::{EdmError, Result};
pub use molecule::Molecule;
