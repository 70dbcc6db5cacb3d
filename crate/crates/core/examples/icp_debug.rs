use nalgebra::Vector3;
use rprr_core::geometry::{se3_compose, se3_invert, Intrinsics};
use rprr_core::icp::{IcpConfig, IcpRoleA, IcpRoleB};
use rprr_core::synth::{builtin_spec, gen_synthetic_scene, offset_camera};

fn run_case(name: &str, axis: Vector3<f64>, deg: f64, t: Vector3<f64>, bidir: bool) {
    let k = Intrinsics::default_for_size(160, 120);
    let mut spec = builtin_spec("plane", 0.0).unwrap();
    spec.primitives = rprr_core::synth::room_primitives();
    spec.cam_b = offset_camera(axis, deg.to_radians(), t);
    let pair = gen_synthetic_scene(&spec, &k, 11, "x").unwrap();
    let gt = pair.ground_truth.unwrap();
    let cfg = IcpConfig { bidirectional: bidir, ..IcpConfig::default() };
    let mut a = IcpRoleA::new(&pair.depth_a, &k, &cfg, 7);
    let mut b = IcpRoleB::new(&pair.depth_b, &k, &cfg, 7);
    println!("--- {name} gt_t {:?} ---", gt.translation.as_slice());
    for _ in 0..4 {
        let samples = a.begin_iteration().unwrap();
        let matches = b.on_samples(&samples).unwrap();
        let rep = a.on_matches(&matches).unwrap();
        let err = se3_compose(&rep.pose, &se3_invert(&gt));
        println!(
            "  it {} upd_t [{:+.4} {:+.4} {:+.4}] upd_r {:.3}deg | err_t {:.4} err_r {:.3}deg",
            a.iteration(),
            rep.update.translation.x, rep.update.translation.y, rep.update.translation.z,
            rep.update.rotation_angle().to_degrees(),
            err.translation.norm(),
            err.rotation_angle().to_degrees(),
        );
        if rep.converged { println!("  CONVERGED"); break; }
    }
}

fn main() {
    run_case("pure z +20mm fwd-only", Vector3::y(), 0.0, Vector3::new(0.0, 0.0, 0.02), false);
    run_case("pure x +20mm fwd-only", Vector3::y(), 0.0, Vector3::new(0.02, 0.0, 0.0), false);
    run_case("yaw 1deg fwd-only", Vector3::y(), 1.0, Vector3::zeros(), false);
    run_case("pure z +20mm bidir", Vector3::y(), 0.0, Vector3::new(0.0, 0.0, 0.02), true);
    run_case("pure x +20mm bidir", Vector3::y(), 0.0, Vector3::new(0.02, 0.0, 0.0), true);
    run_case("yaw 1deg bidir", Vector3::y(), 1.0, Vector3::zeros(), true);
}
