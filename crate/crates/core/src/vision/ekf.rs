//! Feature-level EKF over the relative pose of the target.
//!
//! State `(q, x, v)`: `q` is the camera-from-target rotation (scalar-last),
//! `x` the target origin in the camera frame and `v` its rate of change in
//! the camera frame. The target is assumed static in the world; the camera
//! turns at the measured chaser yaw rate and the relative translational
//! motion is a random walk in velocity.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector2, Vector3, Vector4};

use super::{Correspondence, PoseCandidate};
use crate::error::{Error, Result};
use crate::geometry::{is_spd, skew, symmetrize};
use crate::sensors::CameraMount;

pub const VISION_DIM: usize = 10;
pub type VisionVector = SVector<f64, VISION_DIM>;
pub type VisionCovariance = SMatrix<f64, VISION_DIM, VISION_DIM>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionConfig {
    /// Variance of each rectified feature coordinate.
    pub feature_var: f64,
    /// Relative translational acceleration driving the velocity random walk (m^2 s^-4).
    pub accel_var: f64,
    /// Yaw-rate measurement variance (rad^2 s^-2).
    pub rate_var: f64,
    /// Small isotropic quaternion diffusion keeping the 4x4 block regular.
    pub quat_jitter: f64,
    pub initial_quat_var: f64,
    pub initial_position_var: f64,
    pub initial_velocity_var: f64,
    /// Lock is declared once three times the position standard deviation
    /// (root of the trace) is below this (m).
    pub convergence_3sigma: f64,
    pub mount: CameraMount,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            feature_var: (1.0f64 / 400.0).powi(2),
            accel_var: 1e-3,
            rate_var: 0.0035f64.powi(2),
            quat_jitter: 1e-12,
            initial_quat_var: 1e-4,
            initial_position_var: 1e-4,
            initial_velocity_var: 1e-3,
            convergence_3sigma: 0.005,
            mount: CameraMount::default(),
        }
    }
}

impl VisionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_var", self.feature_var),
            ("initial_quat_var", self.initial_quat_var),
            ("initial_position_var", self.initial_position_var),
            ("initial_velocity_var", self.initial_velocity_var),
            ("convergence_3sigma", self.convergence_3sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("vision {name} must be positive")));
            }
        }
        for (name, v) in [
            ("accel_var", self.accel_var),
            ("rate_var", self.rate_var),
            ("quat_jitter", self.quat_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("vision {name} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionState {
    /// Camera-from-target rotation, `[x, y, z, w]`.
    pub quat: Vector4<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub cov: VisionCovariance,
    pub converged: bool,
    pub time: f64,
}

/// Rotation matrix of a quaternion `[x, y, z, w]`. The formula is
/// homogeneous of degree two, so it is a rotation only for unit `q`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let v = q.xyz();
    let w = q.w;
    Matrix3::identity() * (w * w - v.dot(&v)) + v * v.transpose() * 2.0 + skew(&v) * (2.0 * w)
}

pub fn rotation_to_quat(r: &Matrix3<f64>) -> Vector4<f64> {
    let q = UnitQuaternion::from_matrix(r);
    let c = q.into_inner().coords;
    if c.w < 0.0 {
        -c
    } else {
        c
    }
}

/// Matrix of `p ⊗ q` as a linear map of `q`.
fn left_mul(p: &Vector4<f64>) -> SMatrix<f64, 4, 4> {
    let mut m = SMatrix::<f64, 4, 4>::identity() * p.w;
    let mut tl = m.fixed_view_mut::<3, 3>(0, 0);
    tl += skew(&p.xyz());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.xyz());
    m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-p.xyz().transpose()));
    m
}

/// Matrix of `p ⊗ q` as a linear map of `p`.
fn right_mul(q: &Vector4<f64>) -> SMatrix<f64, 4, 4> {
    let mut m = SMatrix::<f64, 4, 4>::identity() * q.w;
    let mut tl = m.fixed_view_mut::<3, 3>(0, 0);
    tl -= skew(&q.xyz());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&q.xyz());
    m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-q.xyz().transpose()));
    m
}

fn exp_quat(phi: &Vector3<f64>) -> Vector4<f64> {
    let angle = phi.norm();
    let half = 0.5 * angle;
    let s = if angle > 1e-12 { half.sin() / angle } else { 0.5 };
    Vector4::new(phi.x * s, phi.y * s, phi.z * s, half.cos())
}

/// Predicted rectified feature of target point `p`; `None` when it would
/// be at or behind the camera plane.
///
/// The quaternion is normalised first, so its norm is unobservable rather
/// than aliasing with the unknown scale of the scene.
pub fn feature_model(quat: &Vector4<f64>, position: &Vector3<f64>, p: &Vector3<f64>) -> Option<Vector2<f64>> {
    let c = quat_to_rotation(&quat.normalize()) * p + position;
    (c.z > 0.0).then(|| Vector2::new(c.x / c.z, c.y / c.z))
}

/// Analytic Jacobian of [`feature_model`] with respect to the full state.
pub fn feature_jacobian(
    quat: &Vector4<f64>,
    position: &Vector3<f64>,
    p: &Vector3<f64>,
) -> Option<SMatrix<f64, 2, VISION_DIM>> {
    let norm = quat.norm();
    let qn = quat / norm;
    let c = quat_to_rotation(&qn) * p + position;
    if c.z <= 0.0 {
        return None;
    }
    let iz = 1.0 / c.z;
    let dproj = SMatrix::<f64, 2, 3>::new(iz, 0.0, -c.x * iz * iz, 0.0, iz, -c.y * iz * iz);

    let v = qn.xyz();
    let w = qn.w;
    // d(R(q) p)/dv and d(R(q) p)/dw at the unit quaternion
    let d_v = -p * v.transpose() * 2.0
        + (Matrix3::identity() * v.dot(p) + v * p.transpose()) * 2.0
        - skew(p) * (2.0 * w);
    let d_w = p * (2.0 * w) + v.cross(p) * 2.0;
    let mut d_q = SMatrix::<f64, 3, 4>::zeros();
    d_q.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_v);
    d_q.fixed_view_mut::<3, 1>(0, 3).copy_from(&d_w);
    // chain through q / |q|
    let d_norm = (SMatrix::<f64, 4, 4>::identity() - qn * qn.transpose()) / norm;
    let mut dc = SMatrix::<f64, 3, VISION_DIM>::zeros();
    dc.fixed_view_mut::<3, 4>(0, 0).copy_from(&(d_q * d_norm));
    dc.fixed_view_mut::<3, 3>(0, 4).copy_from(&Matrix3::identity());
    Some(dproj * dc)
}

impl VisionState {
    /// Starts the filter at a disambiguated P3P pose.
    pub fn from_pose(pose: &PoseCandidate, time: f64, cfg: &VisionConfig) -> Self {
        let mut diag = VisionVector::zeros();
        diag.fixed_rows_mut::<4>(0).fill(cfg.initial_quat_var);
        diag.fixed_rows_mut::<3>(4).fill(cfg.initial_position_var);
        diag.fixed_rows_mut::<3>(7).fill(cfg.initial_velocity_var);
        let mut s = Self {
            quat: rotation_to_quat(&pose.rotation),
            position: pose.translation,
            velocity: Vector3::zeros(),
            cov: VisionCovariance::from_diagonal(&diag),
            converged: false,
            time,
        };
        s.refresh_convergence(cfg);
        s
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_rotation(&self.quat)
    }

    pub fn pose(&self) -> PoseCandidate {
        PoseCandidate {
            rotation: self.rotation(),
            translation: self.position,
            residual: 0.0,
        }
    }

    pub fn position_cov(&self) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(4, 4).into_owned()
    }

    pub fn is_healthy(&self) -> bool {
        self.quat.iter().chain(self.position.iter()).chain(self.velocity.iter()).all(|v| v.is_finite())
            && is_spd(&self.cov, crate::estimator::SYMMETRY_TOL)
    }

    fn refresh_convergence(&mut self, cfg: &VisionConfig) {
        self.converged = 3.0 * self.position_cov().trace().max(0.0).sqrt() < cfg.convergence_3sigma;
    }

    /// Propagates to `time` with the chaser turning at `rate` about its
    /// vertical axis.
    pub fn predict(&mut self, rate: f64, time: f64, cfg: &VisionConfig) -> Result<()> {
        let dt = time - self.time;
        if dt < 0.0 || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("vision predict dt = {dt}")));
        }
        if dt == 0.0 {
            return Ok(());
        }
        // chaser yaw axis expressed in camera axes
        let axis = cfg.mount.body_from_camera().transpose() * Vector3::z();
        let omega = axis * rate;
        let dq = exp_quat(&(-omega * dt));
        let e = quat_to_rotation(&dq);

        let mut f = VisionCovariance::zeros();
        f.fixed_view_mut::<4, 4>(0, 0).copy_from(&left_mul(&dq));
        f.fixed_view_mut::<3, 3>(4, 4).copy_from(&e);
        f.fixed_view_mut::<3, 3>(4, 7).copy_from(&(Matrix3::identity() * dt));
        f.fixed_view_mut::<3, 3>(7, 7).copy_from(&e);

        // rate noise enters through the quaternion increment and the
        // rotation of the position
        let mut g_rate = VisionVector::zeros();
        let dq_domega = right_mul(&self.quat).fixed_view::<4, 3>(0, 0) * (-0.5 * dt);
        g_rate.fixed_rows_mut::<4>(0).copy_from(&(dq_domega * axis));
        g_rate.fixed_rows_mut::<3>(4).copy_from(&(skew(&self.position) * axis * dt));
        let mut q = g_rate * g_rate.transpose() * cfg.rate_var;
        let a = cfg.accel_var;
        for i in 0..3 {
            q[(4 + i, 4 + i)] += a * dt.powi(4) / 4.0;
            q[(4 + i, 7 + i)] += a * dt.powi(3) / 2.0;
            q[(7 + i, 4 + i)] += a * dt.powi(3) / 2.0;
            q[(7 + i, 7 + i)] += a * dt * dt;
        }
        for i in 0..4 {
            q[(i, i)] += cfg.quat_jitter * dt;
        }

        self.quat = left_mul(&dq) * self.quat;
        self.position = e * self.position + self.velocity * dt;
        self.velocity = e * self.velocity;
        self.cov = f * self.cov * f.transpose() + q;
        symmetrize(&mut self.cov);
        self.time = time;
        if !is_spd(&self.cov, crate::estimator::SYMMETRY_TOL) {
            return Err(Error::NotPositiveDefinite("vision covariance after predict"));
        }
        self.refresh_convergence(cfg);
        Ok(())
    }

    /// Sequential per-feature updates; features predicted behind the camera
    /// are skipped. Returns how many features were applied.
    pub fn update(&mut self, corr: &[Correspondence], cfg: &VisionConfig) -> Result<usize> {
        let r = nalgebra::Matrix2::identity() * cfg.feature_var;
        let mut applied = 0;
        for c in corr {
            let Some(pred) = feature_model(&self.quat, &self.position, &c.point) else {
                continue;
            };
            let h = feature_jacobian(&self.quat, &self.position, &c.point).expect("depth checked");
            let s = h * self.cov * h.transpose() + r;
            let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
            let k = self.cov * h.transpose() * s_inv;
            let dx = k * (c.feature - pred);
            let ikh = VisionCovariance::identity() - k * h;
            self.cov = ikh * self.cov * ikh.transpose() + k * r * k.transpose();
            symmetrize(&mut self.cov);
            self.quat += dx.fixed_rows::<4>(0);
            self.position += dx.fixed_rows::<3>(4);
            self.velocity += dx.fixed_rows::<3>(7);
            let n = self.quat.norm();
            if !(n > 0.0) {
                return Err(Error::NonFinite {
                    what: "vision quaternion",
                    time: self.time,
                });
            }
            self.quat /= n;
            applied += 1;
        }
        if !is_spd(&self.cov, crate::estimator::SYMMETRY_TOL) {
            return Err(Error::NotPositiveDefinite("vision covariance after update"));
        }
        self.refresh_convergence(cfg);
        Ok(applied)
    }
}

/// Functional form of [`VisionState::update`].
pub fn vision_ekf_update(
    vs: &VisionState,
    corr: &[Correspondence],
    cfg: &VisionConfig,
) -> Result<VisionState> {
    let mut next = *vs;
    next.update(corr, cfg)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn pose() -> PoseCandidate {
        PoseCandidate {
            rotation: *Rotation3::from_euler_angles(0.1, -0.2, 0.3).matrix(),
            translation: Vector3::new(0.02, -0.01, 0.15),
            residual: 0.0,
        }
    }

    fn points() -> [Vector3<f64>; 3] {
        [
            Vector3::new(-0.03, -0.02, 0.0),
            Vector3::new(0.03, -0.02, 0.0),
            Vector3::new(-0.03, 0.025, 0.0),
        ]
    }

    fn observe(p: &PoseCandidate) -> Vec<Correspondence> {
        points()
            .iter()
            .map(|x| Correspondence {
                point: *x,
                feature: p.project(x).unwrap(),
            })
            .collect()
    }

    #[test]
    fn quaternion_convention_round_trip() {
        let r = pose().rotation;
        let q = rotation_to_quat(&r);
        assert!((quat_to_rotation(&q) - r).abs().max() < 1e-12);
        // scalar-last: a rotation of pi/2 about z
        let q = rotation_to_quat(&crate::geometry::rot_z(std::f64::consts::FRAC_PI_2));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((q - Vector4::new(0.0, 0.0, h, h)).norm() < 1e-12);
    }

    #[test]
    fn exact_features_leave_state_unchanged() {
        let cfg = VisionConfig::default();
        let p = pose();
        let mut s = VisionState::from_pose(&p, 0.0, &cfg);
        let before = (s.quat, s.position, s.velocity);
        s.update(&observe(&p), &cfg).unwrap();
        assert!((s.quat - before.0).norm() < 1e-12);
        assert!((s.position - before.1).norm() < 1e-12);
        assert!((s.velocity - before.2).norm() < 1e-12);
    }

    #[test]
    fn noiseless_updates_converge_from_offset_start() {
        let cfg = VisionConfig::default();
        let truth = pose();
        let mut start = truth;
        start.translation += Vector3::new(0.004, -0.003, 0.006);
        start.rotation *= *Rotation3::from_euler_angles(0.01, 0.0, -0.01).matrix();
        let mut s = VisionState::from_pose(&start, 0.0, &cfg);
        let z = observe(&truth);
        for k in 1..=100 {
            s.predict(0.0, k as f64 * 0.05, &cfg).unwrap();
            s.update(&z, &cfg).unwrap();
            assert!(s.is_healthy());
        }
        assert!((s.position - truth.translation).norm() < 1e-4);
        assert!(s.converged);
        assert!((s.quat.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pure_rotation_predict_matches_relative_motion() {
        // camera turning with the chaser: a static target appears to rotate
        // the opposite way
        let cfg = VisionConfig::default();
        let p = pose();
        let mut s = VisionState::from_pose(&p, 0.0, &cfg);
        s.predict(0.2, 0.5, &cfg).unwrap();
        let axis = cfg.mount.body_from_camera().transpose() * Vector3::z();
        let e = *Rotation3::new(-axis * 0.1).matrix();
        assert!((s.rotation() - e * p.rotation).abs().max() < 1e-12);
        assert!((s.position - e * p.translation).norm() < 1e-12);
    }
}
