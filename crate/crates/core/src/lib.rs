//! Motion-aware Gaussian splatting kernels.
//!
//! Matrix-Fisher distributions over joint rotations are propagated along a
//! kinematic tree and used to steer Gaussian densification; a PCA-normal
//! detector flags surface regions that deform sharply. A small forward
//! splatting renderer and image metrics close the loop for experiments.

// `!(x > 0.0)` is how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod error;
pub mod fisher;
pub mod kinematics;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod render;
pub mod so3;
pub mod uid;

pub use error::{Error, Result};
