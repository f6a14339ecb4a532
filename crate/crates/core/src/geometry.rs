//! Small planar and spatial helpers shared by every module.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Planar rotation taking body-frame vectors into the inertial frame.
pub fn rot2(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Derivative of [`rot2`] with respect to the angle.
pub fn rot2_prime(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

/// Planar cross product `a x b` (the e3 component).
pub fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Yaw of the projection of a 3-D rotation onto the x-y plane.
pub fn yaw_of(r: &Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Geodesic distance between two rotations (angle of `a^T b`).
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // acos loses precision near zero; recover from the skew part instead
    let s = 0.5
        * Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm();
    s.atan2(c)
}

/// Symmetrises a square matrix in place.
pub fn symmetrize<const D: usize>(m: &mut nalgebra::SMatrix<f64, D, D>) {
    let t = m.transpose();
    *m = (*m + t) * 0.5;
}

/// Largest absolute asymmetry `|m - m^T|` (entrywise max).
pub fn asymmetry<const D: usize>(m: &nalgebra::SMatrix<f64, D, D>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Symmetric within `tol` and positive definite (Cholesky succeeds).
pub fn is_spd<const D: usize>(m: &nalgebra::SMatrix<f64, D, D>, tol: f64) -> bool {
    m.iter().all(|v| v.is_finite())
        && asymmetry(m) <= tol
        && nalgebra::Cholesky::new(*m).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_keeps_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI + 0.01) - (-PI + 0.01)).abs() < 1e-15);
        assert!((wrap_angle(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn rot2_is_special_orthogonal() {
        for k in 0..50 {
            let r = rot2(k as f64 * 0.37 - 9.0);
            assert!((r.transpose() * r - Matrix2::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_angle_small_and_large() {
        let a = rot_z(0.3);
        assert!((rotation_angle_between(&a, &rot_z(0.3 + 1e-9)) - 1e-9).abs() < 1e-15);
        assert!((rotation_angle_between(&a, &rot_z(0.3 + 2.5)) - 2.5).abs() < 1e-12);
    }
}
