//! Core algorithms for pairwise RGB-D redundancy removal.
//!
//! Two depth sensors observing the same scene cooperatively estimate their
//! relative pose with a bidirectional point-to-plane ICP, predict each
//! other's view by forward warping, and transmit only the 8x8 image blocks
//! the other sensor cannot predict. This crate holds everything that is
//! pure computation: camera geometry, the ICP solver and its two-role
//! message protocol, warping and block bookkeeping, the depth and color
//! codecs, decoder-side artifact filters, and the session metrics.
//!
//! IO, transports, and the CLI live in the companion `rprr` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod checksum;
pub mod icp;
pub mod protocol;

pub mod geometry;





pub mod synth;

mod mathf;

pub use geometry::{
    ColorImage, DepthImage, Intrinsics, InverseDepthPoint, MotionVector, RigidTransform,
};

