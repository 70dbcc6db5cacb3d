//! Camera model, inverse-depth coordinates, and SE(3) algebra.
//!
//! Conventions used throughout the crate:
//!
//! * pixel `(i, j)`: `i` is the column (x, rightward), `j` the row
//!   (y, downward); the optical axis is +z (forward).
//! * depth images store 16-bit samples; `sample * depth_scale` is the range
//!   in millimeters, value 0 marks an invalid measurement.
//! * all geometry is computed in meters; the millimeter/meter conversion is
//!   confined to [`pixel_to_uvq`] / [`uvq_to_pixel`].
//! * a point is represented in inverse-depth coordinates `(u, v, q)` with
//!   `u = (i - ic)/fx`, `v = (j - jc)/fy`, `q = 1/z`; the homogeneous form
//!   is `[u v 1 q]^T` so that a rigid transform acts on it linearly.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::mathf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryError {
    /// Depth sample was zero (invalid) where a positive range was required.
    InvalidDepth,
    /// Point has non-positive depth after a transform; it cannot project.
    BehindCamera,
    /// Rotation block failed the orthonormality check.
    InvalidRotation,
    /// Image buffer length does not match width * height (* channels).
    DimensionMismatch,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::InvalidDepth => write!(f, "depth sample is zero or negative"),
            GeometryError::BehindCamera => write!(f, "point is behind the camera"),
            GeometryError::InvalidRotation => write!(f, "matrix is not a rotation"),
            GeometryError::DimensionMismatch => write!(f, "buffer does not match dimensions"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GeometryError {}

/// Pinhole intrinsics shared by the depth and color images of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    /// Principal point column.
    pub ic: f64,
    /// Principal point row.
    pub jc: f64,
    pub width: u32,
    pub height: u32,
    /// Millimeters per stored depth unit.
    pub depth_scale: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, ic: f64, jc: f64, width: u32, height: u32) -> Self {
        debug_assert!(fx > 0.0 && fy > 0.0);
        debug_assert!(ic >= 0.0 && ic < width as f64);
        debug_assert!(jc >= 0.0 && jc < height as f64);
        Intrinsics { fx, fy, ic, jc, width, height, depth_scale: 1.0 }
    }

    pub fn with_depth_scale(mut self, scale: f64) -> Self {
        self.depth_scale = scale;
        self
    }

    /// Default VGA test fixture (focal length 525 px, centered principal
    /// point). Not calibrated against any particular sensor.
    pub fn default_vga() -> Self {
        Intrinsics::new(525.0, 525.0, 320.0, 240.0, 640, 480)
    }

    /// Same fixture scaled to an arbitrary frame size.
    pub fn default_for_size(width: u32, height: u32) -> Self {
        let s = width as f64 / 640.0;
        Intrinsics::new(525.0 * s, 525.0 * s, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }
}

/// 16-bit depth image; sample value 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    samples: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, samples: Vec<u16>) -> Result<Self, GeometryError> {
        if samples.len() != (width as usize) * (height as usize) {
            return Err(GeometryError::DimensionMismatch);
        }
        Ok(DepthImage { width, height, samples })
    }

    pub fn zeroed(width: u32, height: u32) -> Self {
        DepthImage { width, height, samples: alloc::vec![0; (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, i: u32, j: u32) -> u16 {
        self.samples[(j * self.width + i) as usize]
    }

    #[inline]
    pub fn set(&mut self, i: u32, j: u32, value: u16) {
        self.samples[(j * self.width + i) as usize] = value;
    }

    #[inline]
    pub fn is_valid(&self, i: u32, j: u32) -> bool {
        self.get(i, j) != 0
    }

    /// Range in millimeters, or `None` for invalid pixels.
    #[inline]
    pub fn depth_mm(&self, i: u32, j: u32, k: &Intrinsics) -> Option<f64> {
        let raw = self.get(i, j);
        if raw == 0 {
            None
        } else {
            Some(raw as f64 * k.depth_scale)
        }
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u16] {
        &mut self.samples
    }

    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|&&s| s != 0).count()
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    pub width: u32,
    pub height: u32,
    samples: Vec<u8>,
}

impl ColorImage {
    pub fn new(width: u32, height: u32, samples: Vec<u8>) -> Result<Self, GeometryError> {
        if samples.len() != 3 * (width as usize) * (height as usize) {
            return Err(GeometryError::DimensionMismatch);
        }
        Ok(ColorImage { width, height, samples })
    }

    pub fn zeroed(width: u32, height: u32) -> Self {
        ColorImage { width, height, samples: alloc::vec![0; 3 * (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, i: u32, j: u32) -> [u8; 3] {
        let idx = 3 * (j * self.width + i) as usize;
        [self.samples[idx], self.samples[idx + 1], self.samples[idx + 2]]
    }

    #[inline]
    pub fn set(&mut self, i: u32, j: u32, rgb: [u8; 3]) {
        let idx = 3 * (j * self.width + i) as usize;
        self.samples[idx..idx + 3].copy_from_slice(&rgb);
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }
}

/// A point in normalized inverse-depth coordinates. `q` is 1/z with z in
/// meters; the homogeneous third component is fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDepthPoint {
    pub u: f64,
    pub v: f64,
    pub q: f64,
}

impl InverseDepthPoint {
    pub fn new(u: f64, v: f64, q: f64) -> Self {
        InverseDepthPoint { u, v, q }
    }

    /// Euclidean position in meters.
    pub fn to_euclidean(&self) -> Vector3<f64> {
        Vector3::new(self.u / self.q, self.v / self.q, 1.0 / self.q)
    }

    /// Depth in millimeters.
    pub fn z_mm(&self) -> f64 {
        1000.0 / self.q
    }
}

/// Rigid transform in SE(3): `x' = R x + t`, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

pub const ORTHONORMALITY_TOL: f64 = 1e-9;

impl RigidTransform {
    /// Builds a transform, checking `R^T R = I` and `det R = 1` to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let t = RigidTransform { rotation, translation };
        if t.rotation_valid(ORTHONORMALITY_TOL) {
            Ok(t)
        } else {
            Err(GeometryError::InvalidRotation)
        }
    }

    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::new(x, y, z) }
    }

    pub fn rotation_valid(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        let mut ok = true;
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                ok &= mathf::abs(gram[(r, c)] - want) <= tol;
            }
        }
        ok && mathf::abs(self.rotation.determinant() - 1.0) <= tol
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = (self.rotation.trace() - 1.0) / 2.0;
        mathf::acos(c.clamp(-1.0, 1.0))
    }
}

/// Twist coordinates: `alpha[0..3]` translation (m), `alpha[3..6]` rotation
/// about x, y, z (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionVector {
    pub alpha: [f64; 6],
}

impl MotionVector {
    pub fn new(alpha: [f64; 6]) -> Self {
        MotionVector { alpha }
    }

    pub fn zero() -> Self {
        MotionVector { alpha: [0.0; 6] }
    }

    pub fn norm(&self) -> f64 {
        mathf::sqrt(self.alpha.iter().map(|a| a * a).sum())
    }
}

/// The six se(3) generators as 4x4 matrices: translations along x, y, z,
/// then rotations about x, y, z. Owned here so tests can build the matrix
/// exponential independently of [`se3_exp`].
pub fn se3_generator(index: usize) -> [[f64; 4]; 4] {
    let mut g = [[0.0; 4]; 4];
    match index {
        0 => g[0][3] = 1.0,
        1 => g[1][3] = 1.0,
        2 => g[2][3] = 1.0,
        3 => {
            g[1][2] = -1.0;
            g[2][1] = 1.0;
        }
        4 => {
            g[0][2] = 1.0;
            g[2][0] = -1.0;
        }
        5 => {
            g[0][1] = -1.0;
            g[1][0] = 1.0;
        }
        _ => panic!("generator index out of range"),
    }
    g
}

/// Projects a depth pixel into inverse-depth coordinates.
/// `z` is the range in millimeters.
pub fn pixel_to_uvq(
    i: f64,
    j: f64,
    z_mm: f64,
    k: &Intrinsics,
) -> Result<InverseDepthPoint, GeometryError> {
    if z_mm <= 0.0 {
        return Err(GeometryError::InvalidDepth);
    }
    Ok(InverseDepthPoint {
        u: (i - k.ic) / k.fx,
        v: (j - k.jc) / k.fy,
        q: 1000.0 / z_mm,
    })
}

/// Back-projects inverse-depth coordinates to a sub-pixel location and a
/// depth in meters. Exact inverse of [`pixel_to_uvq`] up to the unit change.
pub fn uvq_to_pixel(
    p: &InverseDepthPoint,
    k: &Intrinsics,
) -> Result<(f64, f64, f64), GeometryError> {
    if p.q <= 0.0 {
        return Err(GeometryError::BehindCamera);
    }
    Ok((p.u * k.fx + k.ic, p.v * k.fy + k.jc, 1.0 / p.q))
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map from twist coordinates to SE(3).
///
/// Rodrigues form for the rotation block and the closed-form left Jacobian
/// for the translation coupling; below `theta = 1e-4` the trigonometric
/// coefficients switch to their Taylor expansions.
pub fn se3_exp(b: &MotionVector) -> RigidTransform {
    let v = Vector3::new(b.alpha[0], b.alpha[1], b.alpha[2]);
    let w = Vector3::new(b.alpha[3], b.alpha[4], b.alpha[5]);
    let theta2 = w.norm_squared();
    let theta = mathf::sqrt(theta2);

    let (a, bb, c) = if theta < 1e-4 {
        // sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        (
            mathf::sin(theta) / theta,
            (1.0 - mathf::cos(theta)) / theta2,
            (theta - mathf::sin(theta)) / (theta2 * theta),
        )
    };

    let omega = skew(&w);
    let omega2 = omega * omega;
    let rotation = Matrix3::identity() + omega * a + omega2 * bb;
    let jac = Matrix3::identity() + omega * bb + omega2 * c;
    RigidTransform { rotation, translation: jac * v }
}

/// Group inverse: `(R, t)^-1 = (R^T, -R^T t)`.
pub fn se3_invert(m: &RigidTransform) -> RigidTransform {
    let rt = m.rotation.transpose();
    RigidTransform { rotation: rt, translation: -(rt * m.translation) }
}

/// Composition `m2 * m1` (apply `m1` first).
pub fn se3_compose(m2: &RigidTransform, m1: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: m2.rotation * m1.rotation,
        translation: m2.rotation * m1.translation + m2.translation,
    }
}

/// Applies a rigid transform to an inverse-depth point:
/// `[u' v' 1 q']^T ∝ M [u v 1 q]^T`, renormalized so the third component
/// is 1. Errors when the transformed point ends up at or behind the camera.
pub fn se3_apply_uvq(
    m: &RigidTransform,
    p: &InverseDepthPoint,
) -> Result<InverseDepthPoint, GeometryError> {
    let dir = Vector3::new(p.u, p.v, 1.0);
    let w = m.rotation * dir + m.translation * p.q;
    if w.z <= 0.0 {
        return Err(GeometryError::BehindCamera);
    }
    Ok(InverseDepthPoint { u: w.x / w.z, v: w.y / w.z, q: p.q / w.z })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k0() -> Intrinsics {
        Intrinsics::default_vga()
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let p = pixel_to_uvq(320.0, 240.0, 1000.0, &k0()).unwrap();
        assert_eq!(p.u, 0.0);
        assert_eq!(p.v, 0.0);
        assert_eq!(p.q, 1.0);
    }

    #[test]
    fn off_axis_pixel() {
        // (845 - 320) / 525 = 1.0
        let p = pixel_to_uvq(845.0, 240.0, 1000.0, &k0()).unwrap();
        assert!((p.u - 1.0).abs() < 1e-15);
        assert_eq!(p.v, 0.0);
        assert_eq!(p.q, 1.0);
    }

    #[test]
    fn zero_depth_rejected() {
        assert_eq!(pixel_to_uvq(320.0, 240.0, 0.0, &k0()), Err(GeometryError::InvalidDepth));
    }

    #[test]
    fn uvq_to_pixel_inverse_cases() {
        let (i, j, z) = uvq_to_pixel(&InverseDepthPoint::new(0.0, 0.0, 1.0), &k0()).unwrap();
        assert_eq!((i, j, z), (320.0, 240.0, 1.0));

        let (i, j, z) = uvq_to_pixel(&InverseDepthPoint::new(1.0, 0.0, 2.0), &k0()).unwrap();
        assert!((i - 845.0).abs() < 1e-12);
        assert_eq!(j, 240.0);
        assert!((z - 0.5).abs() < 1e-15);

        assert_eq!(
            uvq_to_pixel(&InverseDepthPoint::new(0.0, 0.0, -1.0), &k0()),
            Err(GeometryError::BehindCamera)
        );
    }

    #[test]
    fn pixel_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let k = k0();
        for _ in 0..1000 {
            let i = rng.gen_range(0..640) as f64;
            let j = rng.gen_range(0..480) as f64;
            let z = rng.gen_range(1..60000) as f64;
            let p = pixel_to_uvq(i, j, z, &k).unwrap();
            let (ri, rj, rz) = uvq_to_pixel(&p, &k).unwrap();
            assert!((ri - i).abs() < 1e-9, "i: {ri} vs {i}");
            assert!((rj - j).abs() < 1e-9);
            assert!((rz * 1000.0 - z).abs() < 1e-9);
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = se3_exp(&MotionVector::zero());
        assert_eq!(e.rotation, Matrix3::identity());
        assert_eq!(e.translation, Vector3::zeros());
    }

    #[test]
    fn exp_pure_translation() {
        let e = se3_exp(&MotionVector::new([0.1, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(e.rotation, Matrix3::identity());
        assert!((e.translation - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let e = se3_exp(&MotionVector::new([0.0, 0.0, 0.0, 0.0, 0.0, core::f64::consts::FRAC_PI_2]));
        let want = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((e.rotation - want).abs().max() < 1e-9);
        assert!(e.translation.norm() < 1e-9);
        assert!(e.rotation_valid(1e-9));
    }

    #[test]
    fn invert_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let b = MotionVector::new([
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ]);
            let m = se3_exp(&b);
            let round = se3_compose(&m, &se3_invert(&m));
            assert!((round.rotation - Matrix3::identity()).abs().max() < 1e-9);
            assert!(round.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn invert_pure_translation() {
        let m = RigidTransform::from_translation(0.1, 0.0, 0.0);
        let inv = se3_invert(&m);
        assert_eq!(inv.translation, Vector3::new(-0.1, 0.0, 0.0));
    }

    #[test]
    fn apply_identity_keeps_point() {
        let p = InverseDepthPoint::new(0.3, -0.2, 0.8);
        let r = se3_apply_uvq(&RigidTransform::identity(), &p).unwrap();
        assert_eq!(r, p);
    }

    #[test]
    fn apply_forward_translation_halves_depth() {
        // Moving the camera 0.5 m toward a 1 m point leaves it at 0.5 m.
        let m = RigidTransform::from_translation(0.0, 0.0, -0.5);
        let p = InverseDepthPoint::new(0.0, 0.0, 1.0);
        let r = se3_apply_uvq(&m, &p).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.v, 0.0);
        assert!((r.q - 2.0).abs() < 1e-15);
    }

    #[test]
    fn apply_matches_euclidean_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let b = MotionVector::new([
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ]);
            let m = se3_exp(&b);
            let p = InverseDepthPoint::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.45..0.45),
                1.0 / rng.gen_range(0.5..8.0),
            );
            let x = p.to_euclidean();
            let x2 = m.rotation * x + m.translation;
            if x2.z <= 1e-6 {
                continue;
            }
            let want = InverseDepthPoint::new(x2.x / x2.z, x2.y / x2.z, 1.0 / x2.z);
            let got = se3_apply_uvq(&m, &p).unwrap();
            assert!((got.u - want.u).abs() < 1e-9);
            assert!((got.v - want.v).abs() < 1e-9);
            assert!((got.q - want.q).abs() < 1e-9);
        }
    }

    #[test]
    fn behind_camera_detected() {
        let m = RigidTransform::from_translation(0.0, 0.0, -2.0);
        let p = InverseDepthPoint::new(0.0, 0.0, 1.0);
        assert_eq!(se3_apply_uvq(&m, &p), Err(GeometryError::BehindCamera));
    }
}
