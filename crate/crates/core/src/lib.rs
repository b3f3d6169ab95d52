//! Single-view 3-D reconstruction at desk scale: a four-branch occupancy
//! network with a difference-of-Gaussians side input, learned probability
//! fusion, joint multi-branch training, marching-cubes mesh extraction and a
//! full reconstruction metric suite, trained on procedurally generated
//! parametric solids.

pub mod dogfilter;
pub mod error;
pub mod meshing;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
