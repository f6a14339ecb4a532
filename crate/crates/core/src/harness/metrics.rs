use serde::Serialize;

use super::logs::{Logs, MeasurementKind, MeasurementStatus};
use super::{Mode, Scenario};
use crate::geometry::wrap_angle;
use crate::guidance::GuidancePhase;

/// Per-status tallies for one measurement kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SensorCounts {
    pub accepted: u64,
    pub rejected: u64,
    pub degenerate: u64,
    pub unused: u64,
    pub tracking: u64,
    pub lost: u64,
}

impl SensorCounts {
    fn add(&mut self, status: MeasurementStatus) {
        match status {
            MeasurementStatus::Accepted => self.accepted += 1,
            MeasurementStatus::Rejected => self.rejected += 1,
            MeasurementStatus::Degenerate => self.degenerate += 1,
            MeasurementStatus::Unused => self.unused += 1,
            MeasurementStatus::Tracking => self.tracking += 1,
            MeasurementStatus::Lost => self.lost += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.accepted + self.rejected + self.degenerate + self.unused + self.tracking + self.lost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseEvent {
    pub time_s: f64,
    #[serde(serialize_with = "phase_name")]
    pub phase: GuidancePhase,
}

fn phase_name<S: serde::Serializer>(p: &GuidancePhase, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(p.name())
}

/// Summary of one run, computed only from its logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    /// Distance of the true final position from the target point.
    pub endpoint_error_m: f64,
    /// True final heading minus the target heading, absolute.
    pub final_heading_error_rad: f64,
    /// Estimated minus true position at the last estimate.
    pub final_estimate_error_m: f64,
    pub position_rmse_m: f64,
    pub velocity_rmse_m_s: f64,
    pub imu: SensorCounts,
    pub accel: SensorCounts,
    pub range: SensorCounts,
    pub vision: SensorCounts,
    pub injected_outliers: u64,
    pub outliers_rejected: u64,
    pub inliers: u64,
    pub inliers_rejected: u64,
    pub cov_violations: u64,
    pub phases: Vec<PhaseEvent>,
    pub docked: bool,
    pub success: bool,
    pub duration_s: f64,
}

impl RunMetrics {
    pub fn from_logs(logs: &Logs, sc: &Scenario) -> Self {
        let (endpoint, heading_err, duration) = match logs.truth.last() {
            Some(t) => (
                ((t.x - sc.target.position.x).powi(2) + (t.y - sc.target.position.y).powi(2)).sqrt(),
                wrap_angle(t.heading - sc.target.heading).abs(),
                t.time,
            ),
            None => (f64::NAN, f64::NAN, 0.0),
        };

        let n = logs.estimate.len() as f64;
        let (mut pos_sq, mut vel_sq) = (0.0, 0.0);
        for r in &logs.estimate {
            pos_sq += (r.x - r.true_x).powi(2) + (r.y - r.true_y).powi(2);
            vel_sq += (r.vx - r.true_vx).powi(2) + (r.vy - r.true_vy).powi(2);
        }
        let final_estimate_error = logs
            .estimate
            .last()
            .map_or(f64::NAN, |r| ((r.x - r.true_x).powi(2) + (r.y - r.true_y).powi(2)).sqrt());

        let mut m = Self {
            endpoint_error_m: endpoint,
            final_heading_error_rad: heading_err,
            final_estimate_error_m: final_estimate_error,
            position_rmse_m: (pos_sq / n).sqrt(),
            velocity_rmse_m_s: (vel_sq / n).sqrt(),
            imu: SensorCounts::default(),
            accel: SensorCounts::default(),
            range: SensorCounts::default(),
            vision: SensorCounts::default(),
            injected_outliers: 0,
            outliers_rejected: 0,
            inliers: 0,
            inliers_rejected: 0,
            cov_violations: logs.estimate.last().map_or(0, |r| r.cov_violations),
            phases: logs
                .phases
                .iter()
                .map(|p| PhaseEvent {
                    time_s: p.time,
                    phase: p.phase,
                })
                .collect(),
            docked: false,
            success: false,
            duration_s: duration,
        };
        for r in &logs.measurements {
            match r.kind {
                MeasurementKind::Imu => m.imu.add(r.status),
                MeasurementKind::Accel => m.accel.add(r.status),
                MeasurementKind::Vision => m.vision.add(r.status),
                MeasurementKind::Range => {
                    m.range.add(r.status);
                    // only samples the gate actually judged count here
                    let judged = matches!(r.status, MeasurementStatus::Accepted | MeasurementStatus::Rejected);
                    let rejected = r.status == MeasurementStatus::Rejected;
                    if judged && r.outlier {
                        m.injected_outliers += 1;
                        m.outliers_rejected += u64::from(rejected);
                    } else if judged {
                        m.inliers += 1;
                        m.inliers_rejected += u64::from(rejected);
                    }
                }
            }
        }
        m.docked = m.phases.last().is_some_and(|p| p.phase == GuidancePhase::Docked);
        m.success = match sc.mode {
            Mode::Docking => m.docked,
            Mode::Waypoint => endpoint < sc.success_radius,
            Mode::OpenLoop => logs.truth.iter().all(|t| t.x.is_finite() && t.y.is_finite()),
        };
        m
    }

    /// Fraction of judged injected outliers that the gate rejected.
    pub fn outlier_rejection(&self) -> f64 {
        self.outliers_rejected as f64 / self.injected_outliers as f64
    }

    /// Fraction of judged inliers that the gate rejected.
    pub fn inlier_rejection(&self) -> f64 {
        self.inliers_rejected as f64 / self.inliers as f64
    }
}
