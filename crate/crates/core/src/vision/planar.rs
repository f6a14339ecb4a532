use nalgebra::{Vector2, Vector3, Vector4};

use super::ekf::{quat_to_rotation, VisionState};
use crate::error::{Error, Result};
use crate::geometry::yaw_of;
use crate::sensors::CameraMount;

/// Target pose in the chaser body frame, projected onto the motion plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPose {
    pub position: Vector2<f64>,
    pub yaw: f64,
    /// Variances of (x, y, yaw) in m^2, m^2, rad^2.
    pub var: Vector3<f64>,
}

/// Composes the converged vision pose with the camera mounting.
///
/// Reported variances never drop below `floor`.
pub fn planar_pose_output(vs: &VisionState, mount: &CameraMount, floor: &[f64; 3]) -> Result<PlanarPose> {
    if !vs.converged {
        return Err(Error::NotConverged);
    }
    let b = mount.body_from_camera();
    let offset = Vector3::new(mount.offset.x, mount.offset.y, 0.0);
    let p = b * vs.position + offset;
    let yaw_at = |q: &Vector4<f64>| yaw_of(&(b * quat_to_rotation(&(q / q.norm()))));
    let yaw = yaw_at(&vs.quat);

    let pos_cov = b * vs.position_cov() * b.transpose();
    let mut grad = Vector4::zeros();
    const STEP: f64 = 1e-7;
    for i in 0..4 {
        let mut hi = vs.quat;
        let mut lo = vs.quat;
        hi[i] += STEP;
        lo[i] -= STEP;
        grad[i] = crate::geometry::wrap_angle(yaw_at(&hi) - yaw_at(&lo)) / (2.0 * STEP);
    }
    let q_cov = vs.cov.fixed_view::<4, 4>(0, 0);
    let yaw_var = (grad.transpose() * q_cov * grad)[(0, 0)];

    Ok(PlanarPose {
        position: p.xy(),
        yaw,
        var: Vector3::new(
            pos_cov[(0, 0)].max(floor[0]),
            pos_cov[(1, 1)].max(floor[1]),
            yaw_var.max(floor[2]),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_z, wrap_angle};
    use crate::vision::{PoseCandidate, VisionConfig};
    use std::f64::consts::FRAC_PI_2;

    const FLOOR: [f64; 3] = [0.001, 0.001, 0.00225];

    fn state_for(mount: &CameraMount, target_in_body: Vector2<f64>, rel_yaw: f64) -> VisionState {
        let b = mount.body_from_camera();
        let offset = Vector3::new(mount.offset.x, mount.offset.y, 0.0);
        let pose = PoseCandidate {
            rotation: b.transpose() * rot_z(rel_yaw),
            translation: b.transpose() * (Vector3::new(target_in_body.x, target_in_body.y, 0.0) - offset),
            residual: 0.0,
        };
        let cfg = VisionConfig {
            initial_position_var: 1e-8,
            ..Default::default()
        };
        VisionState::from_pose(&pose, 0.0, &cfg)
    }

    #[test]
    fn aligned_mount_passes_pose_through() {
        let mount = CameraMount {
            offset: Vector2::zeros(),
            yaw: 0.0,
        };
        let s = state_for(&mount, Vector2::new(0.3, 0.02), 0.1);
        let out = planar_pose_output(&s, &mount, &FLOOR).unwrap();
        assert!((out.position - Vector2::new(0.3, 0.02)).norm() < 1e-12);
        assert!((out.yaw - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sideways_mount_shifts_yaw_by_quarter_turn() {
        let straight = CameraMount {
            offset: Vector2::zeros(),
            yaw: 0.0,
        };
        let side = CameraMount {
            offset: Vector2::zeros(),
            yaw: FRAC_PI_2,
        };
        // identical camera-frame observation, camera turned by 90 degrees
        let s = state_for(&straight, Vector2::new(0.3, 0.0), 0.2);
        let a = planar_pose_output(&s, &straight, &FLOOR).unwrap();
        let b = planar_pose_output(&s, &side, &FLOOR).unwrap();
        assert!((wrap_angle(b.yaw - a.yaw) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn variance_respects_floor_and_lock() {
        let mount = CameraMount::default();
        let s = state_for(&mount, Vector2::new(0.2, 0.0), 0.0);
        let out = planar_pose_output(&s, &mount, &FLOOR).unwrap();
        for (v, f) in out.var.iter().zip(FLOOR) {
            assert!(*v >= f);
        }
        let mut loose = s;
        loose.converged = false;
        assert!(matches!(planar_pose_output(&loose, &mount, &FLOOR), Err(Error::NotConverged)));
    }
}
