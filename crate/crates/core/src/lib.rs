//! Reconstruct point configurations from a random subset of pairwise squared
//! distances by completing the low-rank centered Gram matrix.

pub mod basis;
pub mod coherence;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod sampling;
pub mod solver;
pub mod verify;

pub use error::{EdgError, Result};
