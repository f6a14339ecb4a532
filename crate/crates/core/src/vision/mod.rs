//! Monocular marker-based relative pose: face identification, P3P,
//! candidate disambiguation and a feature-level EKF.
//!
//! Conventions used throughout this module:
//!
//! * camera axes are x right, y down, z along the optical axis;
//! * a pose `(R, t)` maps target-body coordinates into the camera frame,
//!   `X_c = R X_b + t`, so `t` is the target origin seen from the camera;
//! * quaternions are stored scalar-last `[x, y, z, w]` and represent the
//!   same camera-from-target rotation.

pub mod ekf;
pub mod face;
pub mod p3p;
pub mod planar;
mod select;

use nalgebra::{Matrix3, Vector2, Vector3};

pub use ekf::{VisionConfig, VisionState};
pub use face::{identify_all, identify_face, FaceMatch};
pub use p3p::p3p_solve;
pub use planar::{planar_pose_output, PlanarPose};
pub use select::disambiguate;

/// A 3-D marker position in the target frame paired with its rectified
/// image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point: Vector3<f64>,
    pub feature: Vector2<f64>,
}

impl Correspondence {
    /// Unit bearing of the feature in the camera frame.
    pub fn bearing(&self) -> Vector3<f64> {
        Vector3::new(self.feature.x, self.feature.y, 1.0).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCandidate {
    /// Camera-from-target rotation.
    pub rotation: Matrix3<f64>,
    /// Target origin in the camera frame (m).
    pub translation: Vector3<f64>,
    /// RMS reprojection error over the correspondences that produced it.
    pub residual: f64,
}

impl PoseCandidate {
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rectified projection of a target-frame point, `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let c = self.transform(p);
        (c.z > 0.0).then(|| Vector2::new(c.x / c.z, c.y / c.z))
    }

    /// RMS reprojection error; infinite if any point is behind the camera.
    pub fn reprojection_rms(&self, corr: &[Correspondence]) -> f64 {
        let mut sum = 0.0;
        for c in corr {
            match self.project(&c.point) {
                Some(p) => sum += (p - c.feature).norm_squared(),
                None => return f64::INFINITY,
            }
        }
        (sum / corr.len().max(1) as f64).sqrt()
    }

    pub fn depths_positive(&self, points: &[Vector3<f64>]) -> bool {
        points.iter().all(|p| self.transform(p).z > 0.0)
    }
}
