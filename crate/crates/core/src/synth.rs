//! Analytic scene generator for ground-truth test imagery.
//!
//! Scenes are built from textured parallelograms, axis-aligned boxes, and
//! cylinders, ray-cast from two camera poses into registered depth/color
//! pairs. The relative pose between the cameras is exact by construction,
//! which is what lets the pose estimator and the warping pipeline be tested
//! without hardware data.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{
    se3_compose, se3_invert, ColorImage, DepthImage, Intrinsics, RigidTransform,
};
use crate::mathf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthError {
    /// A camera sees no primitive at all.
    EmptyView,
    /// Unknown built-in scene name.
    UnknownScene,
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::EmptyView => write!(f, "camera view contains no scene geometry"),
            SynthError::UnknownScene => write!(f, "unknown built-in scene name"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SynthError {}

/// Procedural surface texture, sampled in primitive-local coordinates.
#[derive(Debug, Clone, Copy)]
pub enum Texture {
    Solid([u8; 3]),
    /// Checkerboard with the given cell size in meters.
    Checker([u8; 3], [u8; 3], f64),
    /// Stripes along the first local axis, cell size in meters.
    Stripes([u8; 3], [u8; 3], f64),
}

impl Texture {
    fn sample(&self, s: f64, t: f64) -> [u8; 3] {
        match *self {
            Texture::Solid(c) => c,
            Texture::Checker(a, b, size) => {
                let cs = mathf::floor(s / size) as i64 + mathf::floor(t / size) as i64;
                if cs.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
            Texture::Stripes(a, b, size) => {
                if (mathf::floor(s / size) as i64).rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Primitive {
    /// Finite parallelogram: `origin + s*edge_u + t*edge_v`, s,t in [0,1].
    Plane {
        origin: Vector3<f64>,
        edge_u: Vector3<f64>,
        edge_v: Vector3<f64>,
        texture: Texture,
    },
    /// Axis-aligned box.
    Box {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        texture: Texture,
    },
    /// Open cylinder (lateral surface only), axis from `base` to
    /// `base + axis`.
    Cylinder {
        base: Vector3<f64>,
        axis: Vector3<f64>,
        radius: f64,
        texture: Texture,
    },
}

struct Hit {
    /// Ray parameter; equals the camera-frame depth when the ray direction
    /// has unit z in camera coordinates.
    s: f64,
    color: [u8; 3],
}

impl Primitive {
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        match self {
            Primitive::Plane { origin: p0, edge_u, edge_v, texture } => {
                let n = edge_u.cross(edge_v);
                let denom = n.dot(dir);
                if mathf::abs(denom) < 1e-12 {
                    return None;
                }
                let s = n.dot(&(p0 - origin)) / denom;
                if s <= 0.0 {
                    return None;
                }
                let hit = origin + dir * s;
                let rel = hit - p0;
                // Solve rel = a*eu + b*ev in the plane basis.
                let uu = edge_u.dot(edge_u);
                let uv = edge_u.dot(edge_v);
                let vv = edge_v.dot(edge_v);
                let ru = rel.dot(edge_u);
                let rv = rel.dot(edge_v);
                let det = uu * vv - uv * uv;
                if mathf::abs(det) < 1e-15 {
                    return None;
                }
                let a = (ru * vv - rv * uv) / det;
                let b = (rv * uu - ru * uv) / det;
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                    return None;
                }
                let eu_len = mathf::sqrt(uu);
                let ev_len = mathf::sqrt(vv);
                Some(Hit { s, color: texture.sample(a * eu_len, b * ev_len) })
            }
            Primitive::Box { center, half_extents, texture } => {
                // Slab test, then texture by the two coordinates spanning
                // the hit face.
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut near_axis = 0usize;
                for axis in 0..3 {
                    let o = origin[axis] - center[axis];
                    let d = dir[axis];
                    let h = half_extents[axis];
                    if mathf::abs(d) < 1e-12 {
                        if mathf::abs(o) > h {
                            return None;
                        }
                        continue;
                    }
                    let mut t0 = (-h - o) / d;
                    let mut t1 = (h - o) / d;
                    if t0 > t1 {
                        core::mem::swap(&mut t0, &mut t1);
                    }
                    if t0 > t_near {
                        t_near = t0;
                        near_axis = axis;
                    }
                    t_far = t_far.min(t1);
                    if t_near > t_far {
                        return None;
                    }
                }
                let s = if t_near > 0.0 { t_near } else { t_far };
                if s <= 0.0 {
                    return None;
                }
                let hit = origin + dir * s - center;
                let (a, b) = match near_axis {
                    0 => (hit.y, hit.z),
                    1 => (hit.x, hit.z),
                    _ => (hit.x, hit.y),
                };
                Some(Hit { s, color: texture.sample(a, b) })
            }
            Primitive::Cylinder { base, axis, radius, texture } => {
                let len = axis.norm();
                if len <= 0.0 || *radius <= 0.0 {
                    return None;
                }
                let ad = axis / len;
                let oc = origin - base;
                let d_perp = dir - ad * dir.dot(&ad);
                let o_perp = oc - ad * oc.dot(&ad);
                let a = d_perp.norm_squared();
                if a < 1e-15 {
                    return None;
                }
                let bq = 2.0 * d_perp.dot(&o_perp);
                let cq = o_perp.norm_squared() - radius * radius;
                let disc = bq * bq - 4.0 * a * cq;
                if disc < 0.0 {
                    return None;
                }
                let sq = mathf::sqrt(disc);
                for s in [(-bq - sq) / (2.0 * a), (-bq + sq) / (2.0 * a)] {
                    if s <= 0.0 {
                        continue;
                    }
                    let hit = origin + dir * s;
                    let h = (hit - base).dot(&ad);
                    if h < 0.0 || h > len {
                        continue;
                    }
                    let radial = hit - base - ad * h;
                    let angle = libm::atan2(radial.y, radial.x);
                    return Some(Hit { s, color: texture.sample(angle * radius, h) });
                }
                None
            }
        }
    }
}

/// Scene description: primitives in world coordinates plus two camera poses
/// given as world-to-camera transforms.
#[derive(Debug, Clone)]
pub struct SyntheticSceneSpec {
    pub primitives: Vec<Primitive>,
    pub cam_a: RigidTransform,
    pub cam_b: RigidTransform,
    /// Gaussian depth noise, millimeters std deviation.
    pub noise_mm: f64,
}

/// A registered two-sensor capture with optional ground truth.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub depth_a: DepthImage,
    pub color_a: ColorImage,
    pub depth_b: DepthImage,
    pub color_b: ColorImage,
    pub intrinsics: Intrinsics,
    /// Transform taking sensor-a coordinates to sensor-b coordinates.
    pub ground_truth: Option<RigidTransform>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Synthetic(String),
    Dataset(String),
}

/// Ray-casts one camera view. Depth is the camera-frame z in millimeters,
/// rounded to u16; color is the texture of the nearest hit.
pub fn render_view(
    spec: &SyntheticSceneSpec,
    cam: &RigidTransform,
    k: &Intrinsics,
    mut noise: Option<&mut ChaCha8Rng>,
) -> (DepthImage, ColorImage) {
    let mut depth = DepthImage::zeroed(k.width, k.height);
    let mut color = ColorImage::zeroed(k.width, k.height);
    let cam_to_world = se3_invert(cam);
    let origin = cam_to_world.translation;
    for j in 0..k.height {
        for i in 0..k.width {
            // Direction with unit camera z so the ray parameter is depth.
            let dir_cam =
                Vector3::new((i as f64 - k.ic) / k.fx, (j as f64 - k.jc) / k.fy, 1.0);
            let dir_world = cam_to_world.rotation * dir_cam;
            let mut best: Option<Hit> = None;
            for prim in &spec.primitives {
                if let Some(hit) = prim.intersect(&origin, &dir_world) {
                    if hit.s > 0.05 && best.as_ref().map_or(true, |b| hit.s < b.s) {
                        best = Some(hit);
                    }
                }
            }
            if let Some(hit) = best {
                let mut z_mm = hit.s * 1000.0;
                if let Some(r) = noise.as_deref_mut() {
                    z_mm += gaussian(r) * spec.noise_mm;
                }
                let z = mathf::round(z_mm);
                if z >= 1.0 && z <= 65535.0 {
                    depth.set(i, j, z as u16);
                    color.set(i, j, hit.color);
                }
            }
        }
    }
    (depth, color)
}

// Box-Muller, first variate only.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    mathf::sqrt(-2.0 * mathf::ln(u1)) * mathf::cos(2.0 * core::f64::consts::PI * u2)
}

/// Renders both views of a scene. Deterministic for a fixed seed.
pub fn gen_synthetic_scene(
    spec: &SyntheticSceneSpec,
    k: &Intrinsics,
    seed: u64,
    name: &str,
) -> Result<ScenePair, SynthError> {
    let mut rng_a = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_a5a5);
    let mut rng_b = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_5a5a);
    let noisy = spec.noise_mm > 0.0;
    let (depth_a, color_a) = render_view(spec, &spec.cam_a, k, noisy.then_some(&mut rng_a));
    let (depth_b, color_b) = render_view(spec, &spec.cam_b, k, noisy.then_some(&mut rng_b));
    if depth_a.valid_count() == 0 || depth_b.valid_count() == 0 {
        return Err(SynthError::EmptyView);
    }
    let ground_truth = se3_compose(&spec.cam_b, &se3_invert(&spec.cam_a));
    Ok(ScenePair {
        depth_a,
        color_a,
        depth_b,
        color_b,
        intrinsics: *k,
        ground_truth: Some(ground_truth),
        provenance: Provenance::Synthetic(String::from(name)),
    })
}

/// A closed room with textured walls, two boxes and a cylinder; rich enough
/// in surface orientations to fully constrain a 6-DoF registration.
pub fn room_primitives() -> Vec<Primitive> {
    alloc::vec![
        // floor (y points down)
        Primitive::Plane {
            origin: Vector3::new(-3.0, 0.8, 0.3),
            edge_u: Vector3::new(6.0, 0.0, 0.0),
            edge_v: Vector3::new(0.0, 0.0, 5.7),
            texture: Texture::Checker([150, 120, 90], [90, 70, 50], 0.4),
        },
        // ceiling
        Primitive::Plane {
            origin: Vector3::new(-3.0, -1.6, 0.3),
            edge_u: Vector3::new(6.0, 0.0, 0.0),
            edge_v: Vector3::new(0.0, 0.0, 5.7),
            texture: Texture::Solid([200, 200, 205]),
        },
        // back wall
        Primitive::Plane {
            origin: Vector3::new(-3.0, -1.6, 4.6),
            edge_u: Vector3::new(6.0, 0.0, 0.0),
            edge_v: Vector3::new(0.0, 2.4, 0.0),
            texture: Texture::Checker([60, 110, 170], [210, 210, 60], 0.5),
        },
        // left wall, slanted so its normal mixes x and z
        Primitive::Plane {
            origin: Vector3::new(-2.4, -1.6, 0.3),
            edge_u: Vector3::new(0.0, 2.4, 0.0),
            edge_v: Vector3::new(0.9, 0.0, 4.4),
            texture: Texture::Stripes([170, 60, 60], [230, 200, 180], 0.3),
        },
        // right wall
        Primitive::Plane {
            origin: Vector3::new(2.6, -1.6, 0.3),
            edge_u: Vector3::new(0.0, 2.4, 0.0),
            edge_v: Vector3::new(-0.4, 0.0, 4.4),
            texture: Texture::Checker([80, 160, 80], [40, 80, 40], 0.35),
        },
        Primitive::Box {
            center: Vector3::new(-0.75, 0.45, 2.3),
            half_extents: Vector3::new(0.35, 0.35, 0.35),
            texture: Texture::Checker([220, 140, 40], [120, 70, 20], 0.15),
        },
        Primitive::Box {
            center: Vector3::new(0.85, 0.25, 3.1),
            half_extents: Vector3::new(0.3, 0.55, 0.3),
            texture: Texture::Stripes([90, 90, 200], [200, 200, 240], 0.12),
        },
        Primitive::Cylinder {
            base: Vector3::new(0.05, 0.8, 1.7),
            axis: Vector3::new(0.0, -1.1, 0.0),
            radius: 0.22,
            texture: Texture::Stripes([200, 60, 160], [240, 220, 230], 0.1),
        },
    ]
}

/// Single fronto-parallel plane filling the whole frame.
pub fn plane_primitives(z_m: f64) -> Vec<Primitive> {
    alloc::vec![Primitive::Plane {
        origin: Vector3::new(-40.0, -40.0, z_m),
        edge_u: Vector3::new(80.0, 0.0, 0.0),
        edge_v: Vector3::new(0.0, 80.0, 0.0),
        texture: Texture::Checker([200, 160, 60], [60, 90, 170], 0.11),
    }]
}

/// Occlusion fixture: a wide background wall both sensors see, plus a
/// cylinder positioned so only sensor b observes it.
pub fn occluder_primitives() -> Vec<Primitive> {
    alloc::vec![
        Primitive::Plane {
            origin: Vector3::new(-6.0, -4.0, 4.0),
            edge_u: Vector3::new(12.0, 0.0, 0.0),
            edge_v: Vector3::new(0.0, 8.0, 0.0),
            texture: Texture::Checker([170, 170, 170], [110, 110, 115], 0.45),
        },
        Primitive::Cylinder {
            base: Vector3::new(-1.35, 1.2, 1.15),
            axis: Vector3::new(0.0, -2.4, 0.0),
            radius: 0.16,
            texture: Texture::Stripes([220, 50, 50], [250, 210, 210], 0.08),
        },
    ]
}

/// World-to-camera pose for a camera rotated by `angle_rad` about `axis`
/// and shifted by `translation`, relative to the identity camera.
pub fn offset_camera(
    axis: Vector3<f64>,
    angle_rad: f64,
    translation: Vector3<f64>,
) -> RigidTransform {
    let n = if axis.norm() > 0.0 { axis / axis.norm() } else { Vector3::z() };
    let w = n * angle_rad;
    crate::geometry::se3_exp(&crate::geometry::MotionVector::new([
        translation.x,
        translation.y,
        translation.z,
        w.x,
        w.y,
        w.z,
    ]))
}

pub fn builtin_scene_names() -> &'static [&'static str] {
    &[
        "plane",
        "room_small_yaw",
        "room_lateral",
        "room_forward",
        "room_pitch",
        "room_mixed",
        "occluder",
        "disjoint",
    ]
}

pub fn builtin_spec(name: &str, noise_mm: f64) -> Result<SyntheticSceneSpec, SynthError> {
    let (primitives, cam_b) = match name {
        "plane" => (plane_primitives(1.0), RigidTransform::identity()),
        "room_small_yaw" => (
            room_primitives(),
            offset_camera(Vector3::y(), 4.0_f64.to_radians(), Vector3::new(0.05, 0.0, 0.0)),
        ),
        "room_lateral" => (
            room_primitives(),
            offset_camera(Vector3::y(), 2.0_f64.to_radians(), Vector3::new(0.12, 0.0, 0.0)),
        ),
        "room_forward" => (
            room_primitives(),
            offset_camera(Vector3::y(), 1.5_f64.to_radians(), Vector3::new(0.0, 0.0, 0.15)),
        ),
        "room_pitch" => (
            room_primitives(),
            offset_camera(Vector3::x(), 3.0_f64.to_radians(), Vector3::new(0.0, 0.04, 0.0)),
        ),
        "room_mixed" => (
            room_primitives(),
            offset_camera(
                Vector3::new(0.3, 1.0, 0.1),
                5.0_f64.to_radians(),
                Vector3::new(0.06, 0.02, 0.05),
            ),
        ),
        "occluder" => (
            occluder_primitives(),
            offset_camera(Vector3::y(), 6.0_f64.to_radians(), Vector3::new(0.55, 0.0, 0.0)),
        ),
        // Zero overlap: each sensor sees only its own small wall, and the
        // two projections land in disjoint pixel regions, so neither
        // matching direction can find correspondences.
        "disjoint" => (
            alloc::vec![
                Primitive::Plane {
                    origin: Vector3::new(-1.1, -1.5, 2.0),
                    edge_u: Vector3::new(0.9, 0.0, 0.0),
                    edge_v: Vector3::new(0.0, 3.0, 0.0),
                    texture: Texture::Checker([200, 120, 40], [90, 50, 20], 0.2),
                },
                Primitive::Plane {
                    origin: Vector3::new(3.2, -1.5, 2.0),
                    edge_u: Vector3::new(0.9, 0.0, 0.0),
                    edge_v: Vector3::new(0.0, 3.0, 0.0),
                    texture: Texture::Checker([40, 120, 200], [20, 50, 90], 0.2),
                },
            ],
            RigidTransform::from_translation(-3.0, 0.0, 0.0),
        ),
        _ => return Err(SynthError::UnknownScene),
    };
    Ok(SyntheticSceneSpec { primitives, cam_a: RigidTransform::identity(), cam_b, noise_mm })
}

pub fn builtin_scene(
    name: &str,
    k: &Intrinsics,
    noise_mm: f64,
    seed: u64,
) -> Result<ScenePair, SynthError> {
    let spec = builtin_spec(name, noise_mm)?;
    gen_synthetic_scene(&spec, k, seed, name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_k() -> Intrinsics {
        Intrinsics::default_for_size(64, 48)
    }

    #[test]
    fn fronto_plane_renders_constant_depth() {
        let k = small_k();
        let pair = builtin_scene("plane", &k, 0.0, 1).unwrap();
        for j in 0..k.height {
            for i in 0..k.width {
                assert_eq!(pair.depth_a.get(i, j), 1000, "pixel {i},{j}");
                assert_eq!(pair.depth_b.get(i, j), 1000);
            }
        }
        let gt = pair.ground_truth.unwrap();
        assert!(gt.translation.norm() < 1e-12);
        assert!(gt.rotation_angle() < 1e-12);
    }

    #[test]
    fn determinism_per_seed() {
        let k = small_k();
        let spec = builtin_spec("room_mixed", 3.0).unwrap();
        let a = gen_synthetic_scene(&spec, &k, 42, "x").unwrap();
        let b = gen_synthetic_scene(&spec, &k, 42, "x").unwrap();
        assert_eq!(a.depth_a, b.depth_a);
        assert_eq!(a.depth_b, b.depth_b);
        let c = gen_synthetic_scene(&spec, &k, 43, "x").unwrap();
        assert_ne!(a.depth_a, c.depth_a);
    }

    #[test]
    fn noise_statistics_match_request() {
        let k = small_k();
        let clean = builtin_scene("plane", &k, 0.0, 1).unwrap();
        let mut sum = 0.0f64;
        let mut sum2 = 0.0f64;
        let mut n = 0usize;
        for seed in 0..10u64 {
            let noisy = builtin_scene("plane", &k, 5.0, seed).unwrap();
            for (c, z) in clean.depth_a.samples().iter().zip(noisy.depth_a.samples()) {
                let d = *z as f64 - *c as f64;
                sum += d;
                sum2 += d * d;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        let std = mathf::sqrt((sum2 / n as f64) - mean * mean);
        assert!(std > 4.0 && std < 6.0, "std = {std}");
    }

    #[test]
    fn empty_view_is_an_error() {
        let k = small_k();
        let spec = SyntheticSceneSpec {
            primitives: plane_primitives(1.0),
            cam_a: RigidTransform::identity(),
            // Turned fully away from the plane.
            cam_b: offset_camera(Vector3::y(), core::f64::consts::PI, Vector3::zeros()),
            noise_mm: 0.0,
        };
        assert_eq!(gen_synthetic_scene(&spec, &k, 1, "x").unwrap_err(), SynthError::EmptyView);
    }

    #[test]
    fn room_views_are_fully_valid() {
        let k = Intrinsics::default_for_size(160, 120);
        let pair = builtin_scene("room_mixed", &k, 0.0, 5).unwrap();
        let total = (k.width * k.height) as usize;
        assert_eq!(pair.depth_a.valid_count(), total);
        assert_eq!(pair.depth_b.valid_count(), total);
    }

    #[test]
    fn occluder_cylinder_only_in_b() {
        let k = Intrinsics::default_for_size(160, 120);
        let pair = builtin_scene("occluder", &k, 0.0, 5).unwrap();
        // The background wall sits at 4 m; cylinder hits are far closer.
        let near_a = pair.depth_a.samples().iter().filter(|&&z| z != 0 && z < 3000).count();
        let near_b = pair.depth_b.samples().iter().filter(|&&z| z != 0 && z < 3000).count();
        assert_eq!(near_a, 0, "sensor a must not see the cylinder");
        assert!(near_b > 50, "sensor b must see the cylinder, got {near_b} near pixels");
    }
}
