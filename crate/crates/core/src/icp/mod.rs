//! Bidirectional point-to-plane registration between two depth frames.
//!
//! The estimate lives on role a. Every iteration, role a samples its frame,
//! warps the samples by the current relative pose and ships them to role b
//! as quantized pixel/depth triples; role b matches them against its own
//! frame, attaches surface normals, and replies together with a fresh set
//! of its own samples. Role a then searches its frame for the reverse
//! correspondences, stacks both directions into one weighted normal system
//! and solves for a twist update.
//!
//! [`icp_run_local`] drives both roles in-process with the exact same
//! message structs the transports serialize, so a distributed run is
//! bit-identical to a local one given equal seeds.

pub mod features;
pub mod roles;
pub mod solver;

use alloc::vec::Vec;
use core::fmt;

use nalgebra::Vector3;

use crate::geometry::{DepthImage, Intrinsics, InverseDepthPoint, RigidTransform};

pub use features::{estimate_normal, find_correspondence, sample_points};
pub use roles::{IcpRoleA, IcpRoleB, StepReport};
pub use solver::{assemble_system, compute_weight, solve_motion, NormalSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpError {
    /// Too few valid pixels to sample, or too few surviving correspondences.
    InsufficientData,
    /// Fewer than six rows reached the normal system.
    Underdetermined,
    /// The normal system is singular or ill-conditioned (all constraints in
    /// a sliding-invariant configuration).
    DegenerateGeometry,
    /// Plane fit had fewer than three non-collinear neighbors.
    NoNormal,
    /// A reply arrived for a different iteration than the one in flight.
    IterationMismatch,
}

impl fmt::Display for IcpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IcpError::InsufficientData => write!(f, "not enough valid data to register"),
            IcpError::Underdetermined => write!(f, "fewer than 6 correspondence rows"),
            IcpError::DegenerateGeometry => write!(f, "normal system is ill-conditioned"),
            IcpError::NoNormal => write!(f, "degenerate neighborhood for plane fit"),
            IcpError::IterationMismatch => write!(f, "message iteration mismatch"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for IcpError {}

/// Registration parameters. The convergence thresholds apply to the
/// per-iteration update, not to the absolute pose.
#[derive(Debug, Clone, Copy)]
pub struct IcpConfig {
    /// Samples drawn per side and iteration.
    pub n_samples: usize,
    pub max_iterations: u32,
    /// Square correspondence search window in pixels; odd.
    pub neighborhood: u32,
    /// Meters.
    pub translation_eps: f64,
    /// Radians.
    pub rotation_eps: f64,
    /// Relative change of the bidirectional cost that counts as converged.
    pub cost_rel_eps: f64,
    /// Disable to run the single-direction (a to b only) baseline.
    pub bidirectional: bool,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            n_samples: 250,
            max_iterations: 50,
            neighborhood: 7,
            translation_eps: 1e-4,
            rotation_eps: 0.01_f64.to_radians(),
            cost_rel_eps: 1e-6,
            bidirectional: true,
        }
    }
}

/// A depth pixel together with its inverse-depth coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledPoint {
    pub i: u32,
    pub j: u32,
    /// Range in millimeters.
    pub z_mm: f64,
    pub uvq: InverseDepthPoint,
}

impl SampledPoint {
    /// From an image pixel; the pixel must be valid.
    pub fn from_image(z: &DepthImage, i: u32, j: u32, k: &Intrinsics) -> Option<Self> {
        let z_mm = z.depth_mm(i, j, k)?;
        let uvq = crate::geometry::pixel_to_uvq(i as f64, j as f64, z_mm, k).ok()?;
        Some(SampledPoint { i, j, z_mm, uvq })
    }

    /// From integer pixel coordinates and a millimeter depth, as carried by
    /// wire messages.
    pub fn from_wire(i: u16, j: u16, z_mm: u16, k: &Intrinsics) -> Option<Self> {
        if z_mm == 0 {
            return None;
        }
        let uvq = crate::geometry::pixel_to_uvq(i as f64, j as f64, z_mm as f64, k).ok()?;
        Some(SampledPoint { i: i as u32, j: j as u32, z_mm: z_mm as f64, uvq })
    }
}

/// Which way the correspondence search ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Sampled in frame a, matched in frame b.
    AtoB,
    /// Sampled in frame b, matched in frame a.
    BtoA,
}

/// One correspondence pair. `source` always lives in frame a and `target`
/// in frame b; `normal` is the unit surface normal at the target, so both
/// directions contribute rows of the same shape to the normal system.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub source: SampledPoint,
    pub target: SampledPoint,
    pub normal: Vector3<f64>,
    pub weight: f64,
    pub direction: Direction,
}

/// Result of a full registration run.
#[derive(Debug, Clone)]
pub struct IcpOutcome {
    /// Estimated transform taking frame-a coordinates to frame-b.
    pub pose: RigidTransform,
    pub iterations: u32,
    pub converged: bool,
    /// Bidirectional cost per iteration, evaluated at the pre-update pose.
    pub cost_trace: Vec<f64>,
}

/// Runs the full registration with both frames in hand.
///
/// Internally this drives the same two role state machines the distributed
/// runner uses, including the wire quantization of every exchanged point.
pub fn icp_run_local(
    depth_a: &DepthImage,
    depth_b: &DepthImage,
    k: &Intrinsics,
    config: &IcpConfig,
    seed: u64,
) -> Result<IcpOutcome, IcpError> {
    let mut role_a = IcpRoleA::new(depth_a, k, config, seed);
    let mut role_b = IcpRoleB::new(depth_b, k, config, seed);
    loop {
        let samples = role_a.begin_iteration()?;
        let matches = role_b.on_samples(&samples)?;
        let report = role_a.on_matches(&matches)?;
        if report.converged || role_a.iteration() >= config.max_iterations {
            return Ok(role_a.into_outcome(report.converged));
        }
    }
}
