//! Point sampling, surface normals, and project-and-walk correspondences.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{uvq_to_pixel, DepthImage, Intrinsics, InverseDepthPoint};
use crate::mathf;

use super::{IcpError, SampledPoint};

/// Draws exactly `n` valid pixels by stratified sampling: the valid pixels
/// in raster order are split into `n` nearly equal runs and one pixel is
/// drawn uniformly from each. Deterministic for a fixed seed.
pub fn sample_points(
    depth: &DepthImage,
    k: &Intrinsics,
    n: usize,
    seed: u64,
) -> Result<Vec<SampledPoint>, IcpError> {
    let valid: Vec<u32> = (0..depth.width * depth.height)
        .filter(|idx| depth.samples()[*idx as usize] != 0)
        .collect();
    if valid.len() < n || n == 0 {
        return Err(IcpError::InsufficientData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for s in 0..n {
        let lo = s * valid.len() / n;
        let hi = (s + 1) * valid.len() / n;
        let idx = valid[lo + rng.gen_range(0..hi - lo)];
        let (i, j) = (idx % depth.width, idx / depth.width);
        // Valid by construction.
        points.push(SampledPoint::from_image(depth, i, j, k).unwrap());
    }
    Ok(points)
}

/// Total-least-squares plane normal over the valid 3-D neighbors in a 5x5
/// window, oriented toward the camera (`n . p < 0`).
pub fn estimate_normal(
    depth: &DepthImage,
    i: u32,
    j: u32,
    k: &Intrinsics,
) -> Result<Vector3<f64>, IcpError> {
    const RADIUS: i64 = 2;
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(25);
    for dj in -RADIUS..=RADIUS {
        for di in -RADIUS..=RADIUS {
            let (ci, cj) = (i as i64 + di, j as i64 + dj);
            if ci < 0 || cj < 0 || ci >= depth.width as i64 || cj >= depth.height as i64 {
                continue;
            }
            if let Some(z_mm) = depth.depth_mm(ci as u32, cj as u32, k) {
                let z = z_mm / 1000.0;
                pts.push(Vector3::new(
                    (ci as f64 - k.ic) / k.fx * z,
                    (cj as f64 - k.jc) / k.fy * z,
                    z,
                ));
            }
        }
    }
    if pts.len() < 3 {
        return Err(IcpError::NoNormal);
    }
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    // Collinear neighborhoods have no second spread direction.
    if eig.eigenvalues[order[1]] <= 1e-12 * eig.eigenvalues[order[2]].max(1e-300) {
        return Err(IcpError::NoNormal);
    }
    // A fit straddling a depth discontinuity is no surface normal: gate on
    // the RMS out-of-plane distance (meters), allowing sensor quantization
    // plus a depth-proportional slack for curvature.
    let center_z = depth.depth_mm(i, j, k).unwrap_or(1000.0) / 1000.0;
    let rms = mathf::sqrt(eig.eigenvalues[order[0]].max(0.0) / pts.len() as f64);
    if rms > 0.002 + 0.003 * center_z {
        return Err(IcpError::NoNormal);
    }
    let mut n = eig.eigenvectors.column(order[0]).into_owned();
    let norm = n.norm();
    if norm <= 0.0 {
        return Err(IcpError::NoNormal);
    }
    n /= norm;
    let center = match depth.depth_mm(i, j, k) {
        Some(z_mm) => {
            let z = z_mm / 1000.0;
            Vector3::new((i as f64 - k.ic) / k.fx * z, (j as f64 - k.jc) / k.fy * z, z)
        }
        None => centroid,
    };
    if n.dot(&center) > 0.0 {
        n = -n;
    }
    Ok(n)
}

/// Project-and-walk correspondence search: projects `p` (already expressed
/// in the target frame) into the target image and returns the valid pixel
/// in the surrounding `window`-sized neighborhood whose 3-D point is
/// nearest to `p` in Euclidean distance. `None` when the projection leaves
/// the frame or the window holds no valid pixel.
pub fn find_correspondence(
    p: &InverseDepthPoint,
    target: &DepthImage,
    k: &Intrinsics,
    window: u32,
) -> Option<SampledPoint> {
    debug_assert!(window % 2 == 1);
    let (x, y, _) = uvq_to_pixel(p, k).ok()?;
    let ci = mathf::round(x) as i64;
    let cj = mathf::round(y) as i64;
    if ci < 0 || cj < 0 || ci >= target.width as i64 || cj >= target.height as i64 {
        return None;
    }
    let r = (window / 2) as i64;
    let pe = p.to_euclidean();
    let mut best: Option<(f64, SampledPoint)> = None;
    for tj in (cj - r).max(0)..=(cj + r).min(target.height as i64 - 1) {
        for ti in (ci - r).max(0)..=(ci + r).min(target.width as i64 - 1) {
            let Some(cand) = SampledPoint::from_image(target, ti as u32, tj as u32, k) else {
                continue;
            };
            let d2 = (cand.uvq.to_euclidean() - pe).norm_squared();
            if best.as_ref().map_or(true, |(bd, _)| d2 < *bd) {
                best = Some((d2, cand));
            }
        }
    }
    best.map(|(_, sp)| sp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pixel_to_uvq;

    fn k64() -> Intrinsics {
        Intrinsics::default_for_size(64, 64)
    }

    fn constant_depth(w: u32, h: u32, z: u16) -> DepthImage {
        DepthImage::new(w, h, alloc::vec![z; (w * h) as usize]).unwrap()
    }

    #[test]
    fn sampling_draws_exactly_n_valid_points() {
        let k = Intrinsics::default_vga();
        let z = constant_depth(640, 480, 1500);
        let pts = sample_points(&z, &k, 250, 9).unwrap();
        assert_eq!(pts.len(), 250);
        assert!(pts.iter().all(|p| p.z_mm > 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let k = k64();
        let z = constant_depth(64, 64, 800);
        let a = sample_points(&z, &k, 50, 1234).unwrap();
        let b = sample_points(&z, &k, 50, 1234).unwrap();
        assert_eq!(a, b);
        let c = sample_points(&z, &k, 50, 1235).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_rejects_empty_frames() {
        let k = k64();
        let z = DepthImage::zeroed(64, 64);
        assert_eq!(sample_points(&z, &k, 10, 0).unwrap_err(), IcpError::InsufficientData);
    }

    #[test]
    fn sampling_strata_cover_the_frame() {
        let k = Intrinsics::default_vga();
        let z = constant_depth(640, 480, 1000);
        let pts = sample_points(&z, &k, 250, 7).unwrap();
        // One point per stratum implies strictly increasing raster indices.
        for w in pts.windows(2) {
            assert!(w[1].j * 640 + w[1].i > w[0].j * 640 + w[0].i);
        }
    }

    #[test]
    fn normal_of_fronto_plane_faces_camera() {
        let k = k64();
        let z = constant_depth(64, 64, 1000);
        let n = estimate_normal(&z, 32, 32, &k).unwrap();
        assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-6, "normal {n:?}");
    }

    #[test]
    fn normal_of_45_degree_ramp() {
        // Surface x + z = z0, i.e. z = z0 / (1 + u). The plane sits deep
        // enough that millimeter quantization cannot tilt the fit.
        let k = k64();
        let z0 = 5000.0;
        let mut z = DepthImage::zeroed(64, 64);
        for j in 0..64 {
            for i in 0..64 {
                let u = (i as f64 - k.ic) / k.fx;
                z.set(i, j, mathf::round(z0 / (1.0 + u)) as u16);
            }
        }
        let n = estimate_normal(&z, 32, 32, &k).unwrap();
        let want = Vector3::new(-1.0, 0.0, -1.0) / mathf::sqrt(2.0);
        assert!((n - want).norm() < 1e-3, "normal {n:?}");
    }

    #[test]
    fn isolated_pixel_has_no_normal() {
        let k = k64();
        let mut z = DepthImage::zeroed(64, 64);
        z.set(30, 30, 1000);
        assert_eq!(estimate_normal(&z, 30, 30, &k).unwrap_err(), IcpError::NoNormal);
    }

    #[test]
    fn collinear_neighbors_have_no_normal() {
        let k = k64();
        let mut z = DepthImage::zeroed(64, 64);
        for i in 28..33 {
            z.set(i, 30, 1000);
        }
        assert_eq!(estimate_normal(&z, 30, 30, &k).unwrap_err(), IcpError::NoNormal);
    }

    #[test]
    fn correspondence_on_same_frame_returns_own_pixel() {
        let k = k64();
        let z = constant_depth(64, 64, 1200);
        let p = pixel_to_uvq(20.0, 30.0, 1200.0, &k).unwrap();
        let m = find_correspondence(&p, &z, &k, 7).unwrap();
        assert_eq!((m.i, m.j), (20, 30));
        assert_eq!(m.z_mm, 1200.0);
    }

    #[test]
    fn projection_outside_frame_is_none() {
        let k = k64();
        let z = constant_depth(64, 64, 1200);
        let p = pixel_to_uvq(500.0, 30.0, 1200.0, &k).unwrap();
        assert!(find_correspondence(&p, &z, &k, 7).is_none());
    }

    #[test]
    fn window_match_equals_global_nearest_neighbor() {
        // A smooth slanted surface shifted by a small pose: the window
        // search must agree with exhaustive nearest-neighbor.
        use crate::geometry::{se3_apply_uvq, se3_exp, MotionVector};
        let k = k64();
        let mut z = DepthImage::zeroed(64, 64);
        for j in 0..64 {
            for i in 0..64 {
                let u = (i as f64 - k.ic) / k.fx;
                let v = (j as f64 - k.jc) / k.fy;
                z.set(i, j, mathf::round(1400.0 / (1.0 + 0.3 * u + 0.2 * v)) as u16);
            }
        }
        // Roughly a 3 px shift at this focal length.
        let m = se3_exp(&MotionVector::new([0.08, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let mut checked = 0;
        for j in (4..60).step_by(7) {
            for i in (4..60).step_by(7) {
                let p = SampledPoint::from_image(&z, i, j, &k).unwrap();
                let Ok(w) = se3_apply_uvq(&m, &p.uvq) else { continue };
                let Some(got) = find_correspondence(&w, &z, &k, 7) else { continue };
                // Exhaustive oracle.
                let pe = w.to_euclidean();
                let mut best = None;
                for tj in 0..64 {
                    for ti in 0..64 {
                        let c = SampledPoint::from_image(&z, ti, tj, &k).unwrap();
                        let d2 = (c.uvq.to_euclidean() - pe).norm_squared();
                        if best.as_ref().map_or(true, |(bd, _, _)| d2 < *bd) {
                            best = Some((d2, ti, tj));
                        }
                    }
                }
                let (_, bi, bj) = best.unwrap();
                assert_eq!((got.i, got.j), (bi, bj), "query {i},{j}");
                checked += 1;
            }
        }
        assert!(checked > 30);
    }
}
