//! Monocular indoor scene reconstruction on a globally sparse, locally dense
//! signed-distance voxel grid.
//!
//! The pipeline runs in stages that each read and write plain files:
//!
//! 1. [`calib`] fits per-frame multiplicative scale fields to monocular depth
//!    priors using sparse structure-from-motion landmarks and covisible pairs.
//! 2. [`grid::alloc`] allocates voxel blocks around the unprojected, scaled
//!    depth and [`fusion`] integrates truncated SDF, color and semantic logits.
//! 3. [`render`] refines SDF and color with differentiable volume rendering
//!    and analytic trilinear gradients.
//! 4. [`crf`] runs a continuous CRF on Monte Carlo surface samples.
//! 5. [`mesh`] extracts the zero level set and [`eval`] scores it.

pub mod calib;
pub mod camera;
pub mod crf;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod grid;
pub mod mesh;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod render;

pub use camera::{Camera, Intrinsics, Pose};
pub use error::{Error, Result};
pub use grid::{BlockCoord, SparseDenseGrid, VoxelBlock};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
