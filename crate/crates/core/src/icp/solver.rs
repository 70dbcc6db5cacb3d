//! Weighting, normal-system assembly, and the 6-DoF least-squares solve.

use alloc::vec::Vec;

use nalgebra::{Matrix6, Vector3, Vector6};

use crate::geometry::{se3_apply_uvq, InverseDepthPoint, MotionVector, RigidTransform};
use crate::mathf;

use super::{Correspondence, IcpError};

/// Condition-number ceiling beyond which the solve is declared degenerate.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Millimeter floor for the mean depth difference, so perfectly aligned
/// frames do not divide by zero.
pub const MEAN_DIFF_FLOOR_MM: f64 = 1.0;

/// Asymmetric correspondence weight. `z_a` is the depth the a-side point
/// lands at after warping into frame b, `z_b` the depth observed by sensor
/// b, both in millimeters; `c` is the mean absolute depth difference over
/// the current correspondence set. A non-positive denominator clamps the
/// weight to zero, marking the pair an outlier.
pub fn compute_weight(z_a: f64, z_b: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    let d = z_a - z_b;
    let denom = if z_b <= z_a { c + d } else { c + d * d };
    if !(denom > 0.0) {
        return 0.0;
    }
    let w = c / denom;
    if w.is_finite() && w > 0.0 {
        w
    } else {
        0.0
    }
}

/// Derivative of the warped inverse-depth coordinates with respect to the
/// six twist parameters, evaluated at the warped point `(u, v, q)`; one row
/// per output coordinate.
#[rustfmt::skip]
pub fn warp_jacobian(p: &InverseDepthPoint) -> [[f64; 6]; 3] {
    let (u, v, q) = (p.u, p.v, p.q);
    [
        [q,   0.0, -u * q,  -u * v,       1.0 + u * u,  -v ],
        [0.0, q,   -v * q,  -1.0 - v * v, v * u,         u ],
        [0.0, 0.0, -q * q,  -v * q,       u * q,         0.0],
    ]
}

/// Stacked weighted normal equations for one iteration.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    /// Rows of K: normal-projected Jacobians, one per correspondence.
    pub rows: Vec<[f64; 6]>,
    /// Diagonal of W.
    pub weights: Vec<f64>,
    /// Signed point-to-plane residuals y.
    pub residuals: Vec<f64>,
}

impl NormalSystem {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The bidirectional cost: sum of weighted squared residuals.
    pub fn weighted_cost(&self) -> f64 {
        self.residuals
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| w * y * y)
            .sum()
    }
}

/// Tangent-plane coefficients in inverse-depth coordinates.
///
/// A Euclidean plane `n . X = n . P_t` through the target becomes, after
/// the substitution `X = (u, v, 1) / q`, the linear constraint
/// `n_x u + n_y v - (n . P_t) q + n_z = 0`. Its gradient
/// `(n_x, n_y, -(n . P_t))` is the normal the stacked system rows use:
/// with it, a displacement that slides along the target's surface produces
/// a zero residual in `(u, v, q)` space exactly as it does in Euclidean
/// space, which is what lets wrong-but-coplanar window matches still
/// constrain the motion correctly.
fn plane_coefficients(normal: &Vector3<f64>, target: &InverseDepthPoint) -> Option<Vector3<f64>> {
    let d = normal.dot(&target.to_euclidean());
    let m = Vector3::new(normal.x, normal.y, -d);
    let len = m.norm();
    if len <= 1e-12 {
        None
    } else {
        Some(m / len)
    }
}

/// Builds the normal system for the current pose estimate.
///
/// Each correspondence contributes the row `m^T J` evaluated at its source
/// point warped by `pose`, where `m` is the target's tangent plane
/// expressed in inverse-depth coordinates, and the residual
/// `-(warped - target) . m` over the `(u, v, q)` components. Weights are
/// written back into the correspondences so callers can inspect them.
pub fn assemble_system(
    correspondences: &mut [Correspondence],
    pose: &RigidTransform,
) -> Result<NormalSystem, IcpError> {
    // First pass: warp sources and collect depth pairs for the mean.
    let mut warped: Vec<Option<InverseDepthPoint>> = Vec::with_capacity(correspondences.len());
    let mut diff_sum = 0.0;
    let mut diff_n = 0usize;
    for corr in correspondences.iter() {
        match se3_apply_uvq(pose, &corr.source.uvq) {
            Ok(w) => {
                diff_sum += mathf::abs(w.z_mm() - corr.target.z_mm);
                diff_n += 1;
                warped.push(Some(w));
            }
            Err(_) => warped.push(None),
        }
    }
    if diff_n < 6 {
        return Err(IcpError::Underdetermined);
    }
    let c = (diff_sum / diff_n as f64).max(MEAN_DIFF_FLOOR_MM);

    let mut system = NormalSystem {
        rows: Vec::with_capacity(diff_n),
        weights: Vec::with_capacity(diff_n),
        residuals: Vec::with_capacity(diff_n),
    };
    for (corr, w) in correspondences.iter_mut().zip(&warped) {
        let Some(w) = w else {
            corr.weight = 0.0;
            continue;
        };
        let Some(m) = plane_coefficients(&corr.normal, &corr.target.uvq) else {
            corr.weight = 0.0;
            continue;
        };
        let jac = warp_jacobian(w);
        let mut row = [0.0f64; 6];
        for (col, r) in row.iter_mut().enumerate() {
            *r = m.x * jac[0][col] + m.y * jac[1][col] + m.z * jac[2][col];
        }
        let d = Vector3::new(
            w.u - corr.target.uvq.u,
            w.v - corr.target.uvq.v,
            w.q - corr.target.uvq.q,
        );
        corr.weight = compute_weight(w.z_mm(), corr.target.z_mm, c);
        system.rows.push(row);
        system.weights.push(corr.weight);
        system.residuals.push(-d.dot(&m));
    }
    if system.len() < 6 {
        return Err(IcpError::Underdetermined);
    }
    Ok(system)
}

/// Solves `b = (K^T W K)^-1 K^T W y`. Errors when the 6x6 system is
/// singular or its condition number exceeds [`CONDITION_LIMIT`].
pub fn solve_motion(system: &NormalSystem) -> Result<MotionVector, IcpError> {
    if system.len() < 6 {
        return Err(IcpError::Underdetermined);
    }
    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    for ((row, w), y) in system.rows.iter().zip(&system.weights).zip(&system.residuals) {
        let k = Vector6::from_row_slice(row);
        h += k * k.transpose() * *w;
        g += k * (*w * *y);
    }

    let eig = h.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if !(lo > 0.0) || hi / lo > CONDITION_LIMIT {
        return Err(IcpError::DegenerateGeometry);
    }
    let chol = h.cholesky().ok_or(IcpError::DegenerateGeometry)?;
    let b = chol.solve(&g);
    Ok(MotionVector::new([b[0], b[1], b[2], b[3], b[4], b[5]]))
}
