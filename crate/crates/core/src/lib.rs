//! Multi-view human motion and camera estimation from 2D keypoints.
//!
//! The crate is `no_std` with `alloc`. Bodies are 22-joint stick skeletons
//! driven by a shape vector and a low-dimensional pose space; a learned prior
//! over ground-anchored 25-frame windows regularises motion while per-frame
//! camera poses are estimated jointly with the body.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod camera;
pub mod error;
pub mod fingerprint;
pub mod geometry;
pub mod kinematics;
pub mod metrics;
pub mod motion_prior;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
