//! Localized orthogonal decomposition for the indefinite time-harmonic
//! Maxwell problem on structured tetrahedral meshes.

pub mod analysis;
pub mod corrector;
pub mod error;
pub mod fem;
pub mod interp;
pub mod lod;
pub mod mesh;
pub mod solver;
pub mod sparse;

pub use error::{LodError, Result};
pub use faer::c64;
