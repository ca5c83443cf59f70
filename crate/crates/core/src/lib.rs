//! Weakly-supervised sparse-view camera relocalization toolkit.
//!
//! Stage one jointly refines noisy Sim(3) camera poses and a time-conditioned
//! radiance field through a differentiable volume renderer. Stage two trains
//! a small pose regressor on the refined labels, augmented with randomly
//! synthesized views and an inter-frame point-cloud constraint.

pub mod error;
pub mod features;
pub mod field;
pub mod ifloss;
pub mod image;
pub mod io;
pub mod liegroup;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
pub use liegroup::{Rotation, Sim3Pose, Sim3Tangent};
