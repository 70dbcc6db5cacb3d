//! The two registration roles as message-driven state machines.
//!
//! Role a owns the pose estimate and the solver; role b only answers
//! correspondence queries against its own frame. Both the local runner and
//! the transports drive exactly these types, so every numeric step,
//! including the u16 quantization of points crossing the wire, happens
//! identically no matter how the messages travel.

use alloc::vec::Vec;

use crate::geometry::{
    se3_apply_uvq, se3_compose, se3_exp, se3_invert, uvq_to_pixel, DepthImage, Intrinsics,
    RigidTransform,
};
use crate::mathf;
use crate::protocol::{
    dequantize_normal, quantize_normal, MatchEntry, Message, SampleEntry, WireSample,
    SAMPLE_SENTINEL,
};

use super::features::{estimate_normal, find_correspondence, sample_points};
use super::solver::assemble_system;
use super::{Correspondence, Direction, IcpConfig, IcpError, IcpOutcome, SampledPoint};

const SEED_TAG_A: u64 = 0xa;
const SEED_TAG_B: u64 = 0xb;

/// Splitmix-style mixer deriving one sampling seed per role and iteration.
fn mix_seed(seed: u64, role: u64, iteration: u32) -> u64 {
    let mut x = seed ^ role.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((iteration as u64) << 32);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Quantizes a warped point for the wire; sentinel when it cannot appear in
/// the peer's frame.
fn wire_sample(
    p: &crate::geometry::InverseDepthPoint,
    k: &Intrinsics,
) -> WireSample {
    let Ok((x, y, z_m)) = uvq_to_pixel(p, k) else {
        return SAMPLE_SENTINEL;
    };
    let i = mathf::round(x);
    let j = mathf::round(y);
    let z = mathf::round(z_m * 1000.0);
    if i < 0.0
        || j < 0.0
        || i >= k.width as f64
        || j >= k.height as f64
        || z < 1.0
        || z > 65535.0
    {
        return SAMPLE_SENTINEL;
    }
    WireSample { i: i as u16, j: j as u16, z_mm: z as u16 }
}

/// Outcome of one solved iteration on role a.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Pose after applying this iteration's update.
    pub pose: RigidTransform,
    /// The update E itself.
    pub update: RigidTransform,
    /// Bidirectional cost at the pre-update pose.
    pub cost: f64,
    pub converged: bool,
    /// Rows that survived into the normal system.
    pub rows: usize,
}

pub struct IcpRoleA<'a> {
    depth: &'a DepthImage,
    k: Intrinsics,
    cfg: IcpConfig,
    seed: u64,
    pose: RigidTransform,
    iteration: u32,
    prev_cost: Option<f64>,
    cost_trace: Vec<f64>,
    /// Samples of the iteration in flight, aligned with the wire indices.
    pending: Vec<SampledPoint>,
}

impl<'a> IcpRoleA<'a> {
    pub fn new(depth: &'a DepthImage, k: &Intrinsics, cfg: &IcpConfig, seed: u64) -> Self {
        IcpRoleA {
            depth,
            k: *k,
            cfg: *cfg,
            seed,
            pose: RigidTransform::identity(),
            iteration: 0,
            prev_cost: None,
            cost_trace: Vec::new(),
            pending: Vec::new(),
        }
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn pose(&self) -> RigidTransform {
        self.pose
    }

    pub fn cost_trace(&self) -> &[f64] {
        &self.cost_trace
    }

    /// Samples the local frame, warps by the current estimate, and emits
    /// the SAMPLES message for role b.
    pub fn begin_iteration(&mut self) -> Result<Message, IcpError> {
        self.iteration += 1;
        self.pending =
            sample_points(self.depth, &self.k, self.cfg.n_samples, mix_seed(self.seed, SEED_TAG_A, self.iteration))?;
        let points = self
            .pending
            .iter()
            .map(|s| match se3_apply_uvq(&self.pose, &s.uvq) {
                Ok(w) => wire_sample(&w, &self.k),
                Err(_) => SAMPLE_SENTINEL,
            })
            .collect();
        Ok(Message::Samples { iteration: self.iteration as u16, points })
    }

    /// Consumes role b's reply, assembles both directions, solves, and
    /// left-composes the update onto the estimate.
    pub fn on_matches(&mut self, reply: &Message) -> Result<StepReport, IcpError> {
        let Message::Matches { iteration, matches, samples } = reply else {
            return Err(IcpError::IterationMismatch);
        };
        if *iteration != self.iteration as u16 || matches.len() != self.pending.len() {
            return Err(IcpError::IterationMismatch);
        }

        let mut corrs: Vec<Correspondence> = Vec::with_capacity(matches.len() + samples.len());
        for (sample, m) in self.pending.iter().zip(matches) {
            if !m.found {
                continue;
            }
            let Some(target) = SampledPoint::from_wire(m.i, m.j, m.z_mm, &self.k) else {
                continue;
            };
            let Some(normal) = dequantize_normal(&m.normal) else { continue };
            corrs.push(Correspondence {
                source: *sample,
                target,
                normal,
                weight: 1.0,
                direction: Direction::AtoB,
            });
        }

        let inverse = se3_invert(&self.pose);
        for s in samples {
            if !s.valid {
                continue;
            }
            let Some(target) = SampledPoint::from_wire(s.i, s.j, s.z_mm, &self.k) else {
                continue;
            };
            let Some(normal) = dequantize_normal(&s.normal) else { continue };
            // View b's sample from frame a and search the local frame.
            let Ok(back) = se3_apply_uvq(&inverse, &target.uvq) else { continue };
            let Some(source) =
                find_correspondence(&back, self.depth, &self.k, self.cfg.neighborhood)
            else {
                continue;
            };
            corrs.push(Correspondence {
                source,
                target,
                normal,
                weight: 1.0,
                direction: Direction::BtoA,
            });
        }

        if corrs.len() < 6 {
            return Err(IcpError::InsufficientData);
        }
        let system = assemble_system(&mut corrs, &self.pose)?;
        let cost = system.weighted_cost();
        let motion = super::solver::solve_motion(&system)?;
        let update = se3_exp(&motion);
        self.pose = se3_compose(&update, &self.pose);

        let small_update = update.translation.norm() < self.cfg.translation_eps
            && update.rotation_angle() < self.cfg.rotation_eps;
        let cost_settled = self
            .prev_cost
            .map_or(false, |prev| mathf::abs(prev - cost) <= self.cfg.cost_rel_eps * prev.max(1e-300));
        let converged = small_update || cost_settled;

        self.prev_cost = Some(cost);
        self.cost_trace.push(cost);
        Ok(StepReport { pose: self.pose, update, cost, converged, rows: system.len() })
    }

    /// Final pose message for role b.
    pub fn pose_update_message(&self) -> Message {
        Message::PoseUpdate { pose: self.pose }
    }

    pub fn converged_message(&self, converged: bool) -> Message {
        Message::Converged {
            iterations: self.iteration,
            converged,
            final_cost: self.prev_cost.unwrap_or(f64::INFINITY),
        }
    }

    pub fn into_outcome(self, converged: bool) -> IcpOutcome {
        IcpOutcome {
            pose: self.pose,
            iterations: self.iteration,
            converged,
            cost_trace: self.cost_trace,
        }
    }
}

pub struct IcpRoleB<'b> {
    depth: &'b DepthImage,
    k: Intrinsics,
    cfg: IcpConfig,
    seed: u64,
    /// Final pose received from role a, kept for the redundancy phase.
    pub final_pose: Option<RigidTransform>,
}

impl<'b> IcpRoleB<'b> {
    pub fn new(depth: &'b DepthImage, k: &Intrinsics, cfg: &IcpConfig, seed: u64) -> Self {
        IcpRoleB { depth, k: *k, cfg: *cfg, seed, final_pose: None }
    }

    /// Matches the received samples against the local frame and replies
    /// with target points, normals, and this side's own sample set.
    pub fn on_samples(&mut self, msg: &Message) -> Result<Message, IcpError> {
        let Message::Samples { iteration, points } = msg else {
            return Err(IcpError::IterationMismatch);
        };

        let mut matches = Vec::with_capacity(points.len());
        for p in points {
            matches.push(self.match_one(p));
        }

        let samples = if self.cfg.bidirectional {
            let own = sample_points(
                self.depth,
                &self.k,
                self.cfg.n_samples,
                mix_seed(self.seed, SEED_TAG_B, *iteration as u32),
            )?;
            own.iter()
                .map(|s| {
                    let entry = estimate_normal(self.depth, s.i, s.j, &self.k).ok().map(|n| {
                        SampleEntry {
                            valid: true,
                            i: s.i as u16,
                            j: s.j as u16,
                            z_mm: mathf::round(s.z_mm) as u16,
                            normal: quantize_normal(&n),
                        }
                    });
                    entry.unwrap_or(SampleEntry {
                        valid: false,
                        i: 0,
                        j: 0,
                        z_mm: 0,
                        normal: [0; 3],
                    })
                })
                .collect()
        } else {
            Vec::new()
        };

        Ok(Message::Matches { iteration: *iteration, matches, samples })
    }

    fn match_one(&self, p: &WireSample) -> MatchEntry {
        const NO_MATCH: MatchEntry =
            MatchEntry { found: false, i: 0, j: 0, z_mm: 0, normal: [0; 3] };
        if p.is_sentinel() {
            return NO_MATCH;
        }
        let Some(query) = SampledPoint::from_wire(p.i, p.j, p.z_mm, &self.k) else {
            return NO_MATCH;
        };
        let Some(m) = find_correspondence(&query.uvq, self.depth, &self.k, self.cfg.neighborhood)
        else {
            return NO_MATCH;
        };
        let Ok(normal) = estimate_normal(self.depth, m.i, m.j, &self.k) else {
            return NO_MATCH;
        };
        MatchEntry {
            found: true,
            i: m.i as u16,
            j: m.j as u16,
            z_mm: mathf::round(m.z_mm) as u16,
            normal: quantize_normal(&normal),
        }
    }

    /// Records the final pose announced by role a.
    pub fn on_pose_update(&mut self, msg: &Message) -> Result<(), IcpError> {
        let Message::PoseUpdate { pose } = msg else {
            return Err(IcpError::IterationMismatch);
        };
        self.final_pose = Some(*pose);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MotionVector;
    use crate::synth::{builtin_scene, builtin_spec, gen_synthetic_scene};

    fn k160() -> Intrinsics {
        Intrinsics::default_for_size(160, 120)
    }

    #[test]
    fn identical_frames_converge_immediately() {
        let k = k160();
        let pair = builtin_scene("room_mixed", &k, 0.0, 3).unwrap();
        let out =
            super::super::icp_run_local(&pair.depth_a, &pair.depth_a, &k, &IcpConfig::default(), 5)
                .unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert!(out.cost_trace[0] < 1e-12, "cost {:?}", out.cost_trace);
        assert!(out.pose.translation.norm() < 1e-4);
        assert!(out.pose.rotation_angle() < 0.01f64.to_radians());
    }

    #[test]
    fn recovers_room_offset_pose() {
        let k = k160();
        let pair = builtin_scene("room_mixed", &k, 0.0, 11).unwrap();
        let gt = pair.ground_truth.unwrap();
        let out =
            super::super::icp_run_local(&pair.depth_a, &pair.depth_b, &k, &IcpConfig::default(), 7)
                .unwrap();
        assert!(out.converged, "trace {:?}", out.cost_trace);
        let err = se3_compose(&out.pose, &se3_invert(&gt));
        assert!(
            err.rotation_angle().to_degrees() < 0.5,
            "rot err {} deg after {} iters",
            err.rotation_angle().to_degrees(),
            out.iterations
        );
        assert!(err.translation.norm() < 0.010, "trans err {} m", err.translation.norm());
    }

    #[test]
    fn cost_decreases_on_yaw_offset() {
        let k = k160();
        let spec = builtin_spec("room_small_yaw", 0.0).unwrap();
        let mut spec = spec;
        spec.cam_b = crate::synth::offset_camera(
            nalgebra::Vector3::y(),
            5.0f64.to_radians(),
            nalgebra::Vector3::zeros(),
        );
        let pair = gen_synthetic_scene(&spec, &k, 1, "yaw5").unwrap();
        let out =
            super::super::icp_run_local(&pair.depth_a, &pair.depth_b, &k, &IcpConfig::default(), 3)
                .unwrap();
        assert!(out.cost_trace.len() >= 3, "trace {:?}", out.cost_trace);
        assert!(out.cost_trace[0] > out.cost_trace[1]);
        assert!(out.cost_trace[1] > out.cost_trace[2]);
    }

    #[test]
    fn disjoint_views_report_insufficient_data() {
        let k = k160();
        let pair = builtin_scene("disjoint", &k, 0.0, 2).unwrap();
        let err =
            super::super::icp_run_local(&pair.depth_a, &pair.depth_b, &k, &IcpConfig::default(), 3)
                .unwrap_err();
        assert!(
            matches!(err, IcpError::InsufficientData | IcpError::DegenerateGeometry),
            "got {err:?}"
        );
    }

    #[test]
    fn bidirectional_roles_swap_to_inverse() {
        let k = k160();
        let pair = builtin_scene("room_lateral", &k, 0.0, 21).unwrap();
        let cfg = IcpConfig::default();
        let ab =
            super::super::icp_run_local(&pair.depth_a, &pair.depth_b, &k, &cfg, 9).unwrap();
        let ba =
            super::super::icp_run_local(&pair.depth_b, &pair.depth_a, &k, &cfg, 9).unwrap();
        assert!(ab.converged && ba.converged);
        let err = se3_compose(&ab.pose, &ba.pose);
        assert!(err.rotation_angle().to_degrees() < 0.1, "{}", err.rotation_angle().to_degrees());
        assert!(err.translation.norm() < 0.002, "{}", err.translation.norm());
    }

    #[test]
    fn forward_only_baseline_still_registers() {
        let k = k160();
        let pair = builtin_scene("room_small_yaw", &k, 0.0, 13).unwrap();
        let gt = pair.ground_truth.unwrap();
        let cfg = IcpConfig { bidirectional: false, ..IcpConfig::default() };
        let out =
            super::super::icp_run_local(&pair.depth_a, &pair.depth_b, &k, &cfg, 9).unwrap();
        let err = se3_compose(&out.pose, &se3_invert(&gt));
        assert!(err.rotation_angle().to_degrees() < 1.0);
        assert!(err.translation.norm() < 0.02);
    }

    #[test]
    fn exact_wire_determinism() {
        let k = k160();
        let pair = builtin_scene("room_mixed", &k, 0.0, 4).unwrap();
        let cfg = IcpConfig::default();
        let a = super::super::icp_run_local(&pair.depth_a, &pair.depth_b, &k, &cfg, 42).unwrap();
        let b = super::super::icp_run_local(&pair.depth_a, &pair.depth_b, &k, &cfg, 42).unwrap();
        assert_eq!(a.pose.rotation, b.pose.rotation);
        assert_eq!(a.pose.translation, b.pose.translation);
        assert_eq!(a.cost_trace, b.cost_trace);
    }

    #[test]
    fn one_step_exactness_through_roles() {
        // Small ground-truth twist on the room scene: the first solve must
        // land within first-order error of it.
        let k = k160();
        let truth = MotionVector::new([2e-4, -1e-4, 3e-4, 1e-4, 2e-4, -1e-4]);
        let mut spec = builtin_spec("plane", 0.0).unwrap();
        spec.primitives = crate::synth::room_primitives();
        spec.cam_b = se3_exp(&truth);
        let pair = gen_synthetic_scene(&spec, &k, 8, "tiny").unwrap();
        let out = super::super::icp_run_local(
            &pair.depth_a,
            &pair.depth_b,
            &k,
            &IcpConfig::default(),
            17,
        )
        .unwrap();
        let err = se3_compose(&out.pose, &se3_invert(&se3_exp(&truth)));
        // Depth quantization (0.5 mm) dominates here.
        assert!(err.translation.norm() < 2e-3, "trans err {}", err.translation.norm());
        assert!(err.rotation_angle().to_degrees() < 0.05);
    }
}
