//! Balance control, pose optimization and planar simulation for wheel-legged
//! quadrupeds.
//!
//! The crate is `no_std` (it only needs `alloc`). Everything here is pure
//! computation: terrain geometry, leg kinematics, the rigid-body-with-wheels
//! force model, the QP balance controller, wheel rolling control, the
//! collision-free pose optimizer, the pose scheduler and a deterministic
//! sagittal-plane physics simulator that closes the loop around them.
//! File formats, the command line and plotting live in the `wheelleg` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod balance;
pub mod dynamics;
pub mod error;
pub mod kinematics;
pub mod math;
pub mod planner;
pub mod pose_opt;
pub mod qp;
pub mod rolling;
pub mod scenario;
pub mod sim;
pub mod terrain;

pub use error::{Error, Result};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;
