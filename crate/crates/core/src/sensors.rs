//! Synthetic measurement generation from ground truth: AHRS attitude and
//! rate, accelerometer specific force, UWB two-way ranges with an outlier
//! mixture and near-field dropout, and LED marker features seen by a pinhole
//! camera.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{thruster_forces, BodyState, ModuleParams, ThrusterCommand};
use crate::error::{Error, Result};
use crate::geometry::{rot2, rot_z, wrap_angle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub gyro_sigma: f64,
    pub attitude_sigma: f64,
    /// Per-axis accelerometer sigma (m/s^2).
    pub accel_sigma: f64,
    pub uwb_inlier_sigma: f64,
    pub uwb_outlier_sigma: f64,
    pub uwb_outlier_prob: f64,
    /// Ranges vanish while the module is closer than this to the target (m).
    pub uwb_dropout_radius: f64,
    /// Feature noise in rectified image units.
    pub feature_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gyro_sigma: 0.0035,
            attitude_sigma: 0.002,
            accel_sigma: 0.05 * 9.81,
            uwb_inlier_sigma: 0.01,
            uwb_outlier_sigma: 0.10,
            uwb_outlier_prob: 0.10,
            uwb_dropout_radius: 0.10,
            feature_sigma: 1.0 / 400.0,
        }
    }
}

impl NoiseConfig {
    /// Every sigma and the outlier probability set to zero.
    pub fn noiseless() -> Self {
        Self {
            gyro_sigma: 0.0,
            attitude_sigma: 0.0,
            accel_sigma: 0.0,
            uwb_inlier_sigma: 0.0,
            uwb_outlier_sigma: 0.0,
            uwb_outlier_prob: 0.0,
            feature_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.gyro_sigma,
            self.attitude_sigma,
            self.accel_sigma,
            self.uwb_inlier_sigma,
            self.uwb_outlier_sigma,
            self.feature_sigma,
            self.uwb_dropout_radius,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise sigmas must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.uwb_outlier_prob) {
            return Err(Error::InvalidArgument(
                "outlier probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed UWB anchors on the workbench plane.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    positions: Vec<Vector2<f64>>,
}

impl AnchorSet {
    pub fn new(positions: Vec<Vector2<f64>>) -> Result<Self> {
        if positions.len() < 3 {
            return Err(Error::InvalidArgument(
                "at least three anchors are required".into(),
            ));
        }
        for (i, a) in positions.iter().enumerate() {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument("anchor position is not finite".into()));
            }
            for b in &positions[i + 1..] {
                if (a - b).norm() < 1e-9 {
                    return Err(Error::InvalidArgument("anchors must be distinct".into()));
                }
            }
        }
        let origin = positions[0];
        let spread = positions.iter().map(|p| (p - origin).norm()).fold(0.0, f64::max);
        let non_collinear = positions.iter().any(|p| {
            positions.iter().any(|q| {
                let a = p - origin;
                let b = q - origin;
                (a.x * b.y - a.y * b.x).abs() > 1e-6 * spread * spread
            })
        });
        if !non_collinear {
            return Err(Error::DegenerateGeometry("anchors are collinear"));
        }
        Ok(Self { positions })
    }

    /// Four anchors on the corners of a `width` x `height` workbench.
    pub fn workbench(width: f64, height: f64) -> Self {
        Self::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(width, 0.0),
            Vector2::new(width, height),
            Vector2::new(0.0, height),
        ])
        .expect("rectangle corners are a valid anchor set")
    }

    pub fn positions(&self) -> &[Vector2<f64>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

impl Default for AnchorSet {
    fn default() -> Self {
        Self::workbench(3.0, 3.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeMeasurement {
    pub anchor: usize,
    pub range: f64,
    pub time: f64,
    /// Ground-truth label: this sample was drawn from the outlier component.
    pub injected_outlier: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 400.0,
            fy: 400.0,
            cx: 0.0,
            cy: 0.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "focal lengths must be positive".into(),
            ))
        }
    }

    /// Pixel coordinates of a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Rectified (normalised) coordinates of a pixel.
    pub fn rectify(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }
}

/// A detected LED marker in rectified image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureObservation {
    /// Ground-truth marker label; the vision pipeline never reads it.
    pub marker_id: usize,
    pub u: f64,
    pub v: f64,
    pub time: f64,
}

impl FeatureObservation {
    pub fn rectified(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Three LEDs on one face of the target, in the target body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerFace {
    pub id: usize,
    /// Outward unit normal of the face.
    pub normal: Vector3<f64>,
    pub points: [Vector3<f64>; 3],
}

impl MarkerFace {
    /// Pairwise distances in the order (0-1, 1-2, 2-0).
    pub fn edge_lengths(&self) -> [f64; 3] {
        let p = &self.points;
        [(p[0] - p[1]).norm(), (p[1] - p[2]).norm(), (p[2] - p[0]).norm()]
    }

    pub fn centroid(&self) -> Vector3<f64> {
        (self.points[0] + self.points[1] + self.points[2]) / 3.0
    }

    pub fn marker_id(&self, k: usize) -> usize {
        self.id * 3 + k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSet {
    faces: Vec<MarkerFace>,
    /// LEDs are visible only within this half-angle of their face normal.
    pub emission_half_angle: f64,
}

/// Relative tolerance separating two edge lengths or two face signatures.
const DISTINCT_TOL: f64 = 0.02;

impl MarkerSet {
    pub fn new(faces: Vec<MarkerFace>, emission_half_angle: f64) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::InvalidArgument("marker set has no faces".into()));
        }
        for (i, f) in faces.iter().enumerate() {
            if f.id != i {
                return Err(Error::InvalidArgument(
                    "marker face ids must be 0..n in order".into(),
                ));
            }
            let mut e = f.edge_lengths();
            e.sort_by(f64::total_cmp);
            let area = (f.points[1] - f.points[0]).cross(&(f.points[2] - f.points[0])).norm();
            if area < 1e-9 {
                return Err(Error::DegenerateGeometry("marker triangle is degenerate"));
            }
            if e[1] - e[0] < DISTINCT_TOL * e[2] || e[2] - e[1] < DISTINCT_TOL * e[2] {
                return Err(Error::InvalidArgument(format!(
                    "face {i}: marker triangle must have three distinct edge lengths"
                )));
            }
        }
        for (i, a) in faces.iter().enumerate() {
            for b in &faces[i + 1..] {
                let (sa, sb) = (edge_signature(&a.edge_lengths()), edge_signature(&b.edge_lengths()));
                if (sa[0] - sb[0]).abs().max((sa[1] - sb[1]).abs()) < DISTINCT_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "faces {} and {} carry indistinguishable patterns",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(Self {
            faces,
            emission_half_angle,
        })
    }

    /// Right-triangle patterns on the four side faces of a cube of edge
    /// `side`, each with its own leg ratio.
    pub fn cube_sides(side: f64) -> Self {
        let h = side / 2.0;
        // (outward normal, horizontal leg, vertical leg) as fractions of side
        let layout = [
            (Vector3::x(), 0.60, 0.45),
            (-Vector3::x(), 0.60, 0.30),
            (Vector3::y(), 0.60, 0.21),
            (-Vector3::y(), 0.35, 0.60),
        ];
        let faces = layout
            .iter()
            .enumerate()
            .map(|(id, (n, a, b))| {
                let tangent = Vector3::z().cross(n);
                let centre = n * h;
                let (a, b) = (a * side, b * side);
                let at = |x: f64, y: f64| centre + tangent * x + Vector3::z() * y;
                MarkerFace {
                    id,
                    normal: *n,
                    points: [
                        at(-a / 2.0, -b / 2.0),
                        at(a / 2.0, -b / 2.0),
                        at(-a / 2.0, b / 2.0),
                    ],
                }
            })
            .collect();
        Self::new(faces, 75f64.to_radians()).expect("default marker layout is valid")
    }

    pub fn faces(&self) -> &[MarkerFace] {
        &self.faces
    }

    pub fn face(&self, id: usize) -> Option<&MarkerFace> {
        self.faces.get(id)
    }

    /// Looks up a marker by its global id (`face * 3 + k`).
    pub fn marker(&self, marker_id: usize) -> Option<Vector3<f64>> {
        self.faces.get(marker_id / 3).map(|f| f.points[marker_id % 3])
    }
}

impl Default for MarkerSet {
    fn default() -> Self {
        Self::cube_sides(0.1)
    }
}

/// Scale-free signature of a triangle: the two shorter edges divided by the
/// longest, ascending.
pub fn edge_signature(edges: &[f64; 3]) -> [f64; 2] {
    let mut e = *edges;
    e.sort_by(f64::total_cmp);
    [e[0] / e[2], e[1] / e[2]]
}

/// Rigid mounting of the camera on the chaser body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMount {
    /// Optical centre in the body frame (m).
    pub offset: Vector2<f64>,
    /// Direction of the optical axis relative to body +x (rad).
    pub yaw: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self {
            offset: Vector2::new(0.05, 0.0),
            yaw: 0.0,
        }
    }
}

impl CameraMount {
    /// Rotation from camera axes (x right, y down, z optical) to body axes
    /// (x forward, y left, z up).
    pub fn body_from_camera(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let z_c = Vector3::new(c, s, 0.0);
        let x_c = Vector3::new(s, -c, 0.0);
        let y_c = Vector3::new(0.0, 0.0, -1.0);
        Matrix3::from_columns(&[x_c, y_c, z_c])
    }

    pub fn body_from_camera_pose(&self) -> Isometry3<f64> {
        isometry(
            &self.body_from_camera(),
            &Vector3::new(self.offset.x, self.offset.y, 0.0),
        )
    }

    /// World pose of the camera for a chaser at `state`.
    pub fn world_pose(&self, state: &BodyState) -> Isometry3<f64> {
        planar_isometry(&state.position, state.heading) * self.body_from_camera_pose()
    }
}

pub fn isometry(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Isometry3<f64> {
    let rot = Rotation3::from_matrix_unchecked(*rotation);
    Isometry3::from_parts(
        Translation3::from(*translation),
        UnitQuaternion::from_rotation_matrix(&rot),
    )
}

/// Planar pose lifted to 3-D with z up.
pub fn planar_isometry(position: &Vector2<f64>, yaw: f64) -> Isometry3<f64> {
    isometry(&rot_z(yaw), &Vector3::new(position.x, position.y, 0.0))
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn sample_gyro(truth: &BodyState, cfg: &NoiseConfig, rng: &mut impl Rng) -> f64 {
    truth.rate + cfg.gyro_sigma * normal(rng)
}

pub fn sample_attitude(truth: &BodyState, cfg: &NoiseConfig, rng: &mut impl Rng) -> f64 {
    wrap_angle(truth.heading + cfg.attitude_sigma * normal(rng))
}

/// Noise-free specific force in the body frame: thrust over mass plus the
/// friction deceleration.
pub fn specific_force(
    truth: &BodyState,
    cmd: &ThrusterCommand,
    params: &ModuleParams,
) -> Vector2<f64> {
    thruster_forces(cmd, params).force / params.mass
        - params.friction_rate() * truth.body_velocity
}

pub fn sample_accel(
    truth: &BodyState,
    cmd: &ThrusterCommand,
    params: &ModuleParams,
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> Vector2<f64> {
    let n = Vector2::new(normal(rng), normal(rng));
    specific_force(truth, cmd, params) + n * cfg.accel_sigma
}

/// Inertial position of the module's UWB antenna.
pub fn antenna_position(truth: &BodyState, antenna_offset: &Vector2<f64>) -> Vector2<f64> {
    truth.position + rot2(truth.heading) * antenna_offset
}

/// One range per anchor, or none while the module is inside the near-field
/// dropout radius of the target.
#[allow(clippy::too_many_arguments)]
pub fn sample_uwb(
    truth: &BodyState,
    anchors: &AnchorSet,
    target: &Vector2<f64>,
    antenna_offset: &Vector2<f64>,
    cfg: &NoiseConfig,
    time: f64,
    rng: &mut impl Rng,
) -> Vec<RangeMeasurement> {
    if (truth.position - target).norm() < cfg.uwb_dropout_radius {
        return Vec::new();
    }
    let antenna = antenna_position(truth, antenna_offset);
    anchors
        .positions()
        .iter()
        .enumerate()
        .map(|(anchor, a)| {
            let truth_range = (antenna - a).norm();
            let outlier = rng.random::<f64>() < cfg.uwb_outlier_prob;
            let sigma = if outlier {
                cfg.uwb_outlier_sigma
            } else {
                cfg.uwb_inlier_sigma
            };
            RangeMeasurement {
                anchor,
                range: (truth_range + sigma * normal(rng)).max(0.0),
                time,
                injected_outlier: outlier,
            }
        })
        .collect()
}

/// Projects every visible marker into the camera.
///
/// Faces whose normal points more than the emission half-angle away from
/// the camera are culled, as is any marker with non-positive depth.
pub fn project_features(
    camera_pose: &Isometry3<f64>,
    target_pose: &Isometry3<f64>,
    markers: &MarkerSet,
    intr: &CameraIntrinsics,
    cfg: &NoiseConfig,
    time: f64,
    rng: &mut impl Rng,
) -> Vec<FeatureObservation> {
    let camera_from_target = camera_pose.inverse() * target_pose;
    let cos_limit = markers.emission_half_angle.cos();
    let mut out = Vec::new();
    for face in markers.faces() {
        let centre = camera_from_target * nalgebra::Point3::from(face.centroid());
        let n = camera_from_target.rotation * face.normal;
        let to_camera = -centre.coords;
        if n.dot(&to_camera) <= cos_limit * to_camera.norm() {
            continue;
        }
        for (k, p) in face.points.iter().enumerate() {
            let pc = camera_from_target * nalgebra::Point3::from(*p);
            if pc.z <= 0.0 {
                continue;
            }
            let rect = intr.rectify(&intr.project(&pc.coords));
            out.push(FeatureObservation {
                marker_id: face.marker_id(k),
                u: rect.x + cfg.feature_sigma * normal(rng),
                v: rect.y + cfg.feature_sigma * normal(rng),
                time,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn noiseless_gyro_and_attitude_pass_through() {
        let cfg = NoiseConfig::noiseless();
        let mut s = BodyState::default();
        assert_eq!(sample_gyro(&s, &cfg, &mut rng()), 0.0);
        s.rate = 0.5;
        assert_eq!(sample_gyro(&s, &cfg, &mut rng()), 0.5);
        s.heading = std::f64::consts::PI;
        assert_eq!(sample_attitude(&s, &cfg, &mut rng()), std::f64::consts::PI);
    }

    #[test]
    fn gyro_sample_mean_within_four_sigma_of_truth() {
        let cfg = NoiseConfig::default();
        let s = BodyState {
            rate: 0.2,
            ..Default::default()
        };
        let mut r = rng();
        let n = 100_000;
        let mean = (0..n).map(|_| sample_gyro(&s, &cfg, &mut r)).sum::<f64>() / n as f64;
        assert!((mean - 0.2).abs() < 4.0 * cfg.gyro_sigma / (n as f64).sqrt());
    }

    #[test]
    fn attitude_stays_wrapped_near_seam() {
        let cfg = NoiseConfig {
            attitude_sigma: 0.02,
            ..Default::default()
        };
        let s = BodyState {
            heading: -std::f64::consts::PI + 0.01,
            ..Default::default()
        };
        let mut r = rng();
        let mut sq = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let z = sample_attitude(&s, &cfg, &mut r);
            assert!(z > -std::f64::consts::PI && z <= std::f64::consts::PI);
            sq += wrap_angle(z - s.heading).powi(2);
        }
        let sigma = (sq / n as f64).sqrt();
        assert!((sigma - 0.02).abs() < 0.02 * 0.03, "{sigma}");
    }

    #[test]
    fn accel_model_values() {
        let p = ModuleParams::default();
        let cfg = NoiseConfig::noiseless();
        let mut s = BodyState::default();
        let z = sample_accel(&s, &ThrusterCommand::zero(), &p, &cfg, &mut rng());
        assert_eq!(z, Vector2::zeros());

        s.body_velocity = Vector2::new(1.0, 0.0);
        let z = sample_accel(&s, &ThrusterCommand::zero(), &p, &cfg, &mut rng());
        assert!((z.x + 0.14715).abs() < 1e-12 && z.y == 0.0);

        let mut single = p;
        single.layout.nozzles[0].direction = Vector2::new(1.0, 0.0);
        let z = sample_accel(
            &BodyState::default(),
            &ThrusterCommand::from_duty([1.0, 0.0, 0.0, 0.0]),
            &single,
            &cfg,
            &mut rng(),
        );
        assert!((z.x - 0.1 / 0.795).abs() < 1e-12 && z.y == 0.0);
        assert!((z.x - 0.125786).abs() < 1e-6);
    }

    #[test]
    fn uwb_noiseless_ranges_are_euclidean() {
        let anchors = AnchorSet::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(2.0, 0.0),
            Vector2::new(0.0, 2.0),
        ])
        .unwrap();
        let cfg = NoiseConfig::noiseless();
        let s = BodyState {
            position: Vector2::new(1.0, 0.0),
            ..Default::default()
        };
        let far = Vector2::new(5.0, 5.0);
        let z = sample_uwb(&s, &anchors, &far, &Vector2::zeros(), &cfg, 0.0, &mut rng());
        assert_eq!(z.len(), 3);
        assert_eq!(z[0].range, 1.0);
        assert!((z[2].range - 5f64.sqrt()).abs() < 1e-15);

        let at_anchor = BodyState::default();
        let z = sample_uwb(&at_anchor, &anchors, &far, &Vector2::zeros(), &cfg, 0.0, &mut rng());
        assert_eq!(z[0].range, 0.0);
    }

    #[test]
    fn uwb_drops_out_near_target() {
        let cfg = NoiseConfig::default();
        let s = BodyState {
            position: Vector2::new(1.0, 1.0),
            ..Default::default()
        };
        let anchors = AnchorSet::default();
        let near = Vector2::new(1.05, 1.0);
        assert!(sample_uwb(&s, &anchors, &near, &Vector2::zeros(), &cfg, 0.0, &mut rng()).is_empty());
        let edge = Vector2::new(1.10, 1.0);
        assert_eq!(
            sample_uwb(&s, &anchors, &edge, &Vector2::zeros(), &cfg, 0.0, &mut rng()).len(),
            4
        );
    }

    #[test]
    fn uwb_outlier_fraction_and_inlier_variance() {
        let cfg = NoiseConfig::default();
        let anchors = AnchorSet::default();
        let s = BodyState {
            position: Vector2::new(1.2, 0.7),
            ..Default::default()
        };
        let far = Vector2::new(-10.0, -10.0);
        let mut r = rng();
        let mut outliers = 0usize;
        let mut total = 0usize;
        let mut inlier_sq = 0.0;
        let mut inliers = 0usize;
        for _ in 0..2500 {
            for m in sample_uwb(&s, &anchors, &far, &Vector2::zeros(), &cfg, 0.0, &mut r) {
                total += 1;
                let err = m.range - (s.position - anchors.positions()[m.anchor]).norm();
                if m.injected_outlier {
                    outliers += 1;
                } else {
                    inliers += 1;
                    inlier_sq += err * err;
                }
            }
        }
        assert_eq!(total, 10_000);
        let frac = outliers as f64 / total as f64;
        assert!((frac - 0.10).abs() <= 0.01, "{frac}");
        let var = inlier_sq / inliers as f64;
        assert!((var / 1e-4 - 1.0).abs() < 0.10, "{var}");
    }

    #[test]
    fn anchor_set_validation() {
        assert!(AnchorSet::new(vec![Vector2::zeros(), Vector2::x()]).is_err());
        assert!(AnchorSet::new(vec![Vector2::zeros(), Vector2::x(), Vector2::x() * 2.0]).is_err());
        assert!(AnchorSet::new(vec![Vector2::zeros(), Vector2::x(), Vector2::x()]).is_err());
        assert!(AnchorSet::new(vec![Vector2::zeros(), Vector2::x(), Vector2::y()]).is_ok());
    }

    #[test]
    fn marker_set_rejects_symmetric_patterns() {
        let mut f = MarkerSet::default().faces()[0];
        let h = 3f64.sqrt() / 2.0 * 0.04;
        f.points = [
            Vector3::new(0.05, -0.02, 0.0),
            Vector3::new(0.05, 0.02, 0.0),
            Vector3::new(0.05, 0.0, h),
        ];
        assert!(MarkerSet::new(vec![f], 1.0).is_err());
        let faces = MarkerSet::default().faces().to_vec();
        let mut dup = faces.clone();
        dup[1].points = dup[0].points;
        assert!(MarkerSet::new(dup, 1.0).is_err());
    }

    fn camera_at_origin() -> Isometry3<f64> {
        Isometry3::identity()
    }

    #[test]
    fn projection_of_simple_points() {
        let intr = CameraIntrinsics::default();
        let p = intr.rectify(&intr.project(&Vector3::new(0.0, 0.0, 2.0)));
        assert_eq!(p, Vector2::zeros());
        let p = intr.rectify(&intr.project(&Vector3::new(0.1, 0.0, 1.0)));
        assert!((p.x - 0.1).abs() < 1e-15 && p.y == 0.0);
        let k = 3.7;
        let q = intr.rectify(&intr.project(&(Vector3::new(0.1, -0.04, 1.0) * k)));
        let r = intr.rectify(&intr.project(&Vector3::new(0.1, -0.04, 1.0)));
        assert!((q - r).norm() < 1e-15);
    }

    #[test]
    fn front_face_visible_and_back_faces_culled() {
        let markers = MarkerSet::default();
        // target 0.5 m in front of the camera, its -x face toward the camera
        let target = isometry(
            &Matrix3::from_columns(&[Vector3::z(), Vector3::x(), Vector3::y()]),
            &Vector3::new(0.0, 0.0, 0.5),
        );
        // camera z is target x, so the -x face (id 1) looks back at us
        let obs = project_features(
            &camera_at_origin(),
            &target,
            &markers,
            &CameraIntrinsics::default(),
            &NoiseConfig::noiseless(),
            0.0,
            &mut rng(),
        );
        assert_eq!(obs.len(), 3);
        assert!(obs.iter().all(|o| o.marker_id / 3 == 1));
    }
}
