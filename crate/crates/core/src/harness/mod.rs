//! Scenario configuration, the fixed-step simulation loop, logs, metrics
//! and the Monte-Carlo batch runner.

mod config;
mod logs;
mod metrics;
mod montecarlo;
mod run;
pub mod selfcheck;

use nalgebra::Vector2;
use serde::Deserialize;

use crate::dynamics::{BodyState, ModuleParams};
use crate::estimator::FilterConfig;
use crate::guidance::{DockTarget, GuidanceConfig};
use crate::sensors::{AnchorSet, CameraIntrinsics, MarkerSet, NoiseConfig};
use crate::vision::VisionConfig;

pub use config::parse_scenario;
pub use logs::{
    parse_estimate_csv, parse_measurement_csv, parse_phase_csv, parse_truth_csv, EstimateRow,
    Logs, MeasurementKind, MeasurementRow, MeasurementStatus, PhaseRow, TruthRow,
    SCHEMA_VERSION,
};
pub use metrics::{PhaseEvent, RunMetrics, SensorCounts};
pub use montecarlo::{
    monte_carlo_scenario, percentile, run_monte_carlo, BatchSummary, MonteCarloReport, RunRecord,
};
pub use run::{run_scenario, RunOutput, TickCounts};

/// What drives the thrusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Guidance to a point using UWB and IMU only.
    Waypoint,
    /// Full phase sequence with vision handover.
    Docking,
    /// Fixed thrust pattern; guidance is never consulted.
    OpenLoop,
}

/// Rates in hertz plus the optional UWB timing jitter in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub sim: f64,
    pub imu: f64,
    pub uwb: f64,
    /// Standard deviation of the UWB sample time about its nominal slot.
    pub uwb_jitter: f64,
    pub vision: f64,
    pub truth_log: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            sim: 1000.0,
            imu: 100.0,
            uwb: 50.0,
            uwb_jitter: 0.0,
            vision: 20.0,
            truth_log: 120.0,
        }
    }
}

/// Region Monte-Carlo starts are drawn from, uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartRegion {
    pub center: Vector2<f64>,
    pub half_extent: Vector2<f64>,
    /// Inclusive heading bounds (rad).
    pub heading_range: [f64; 2],
}

impl Default for StartRegion {
    fn default() -> Self {
        Self {
            center: Vector2::new(1.5, 1.5),
            half_extent: Vector2::new(1.0, 1.0),
            heading_range: [-std::f64::consts::PI, std::f64::consts::PI],
        }
    }
}

/// Open-loop thrust pattern: forward, left, back and right translations in
/// turn, each fired for `segment` seconds and followed by `coast` seconds
/// of silence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenLoopPlan {
    pub duty: f64,
    pub segment: f64,
    pub coast: f64,
}

impl Default for OpenLoopPlan {
    fn default() -> Self {
        Self {
            duty: 0.5,
            segment: 2.0,
            coast: 1.0,
        }
    }
}

/// Everything one run needs; built by [`parse_scenario`] or by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub duration: f64,
    /// Endpoint error counted as a waypoint success (m).
    pub success_radius: f64,
    pub rates: Rates,
    pub module: ModuleParams,
    pub initial: BodyState,
    /// Dock point and approach heading, or the waypoint.
    pub target: DockTarget,
    /// Distance from the dock point to the target module centre along the
    /// docking axis (m).
    pub target_offset: f64,
    pub anchors: AnchorSet,
    pub noise: NoiseConfig,
    pub filter: FilterConfig,
    pub vision: VisionConfig,
    pub vision_enabled: bool,
    pub intrinsics: CameraIntrinsics,
    pub markers: MarkerSet,
    pub guidance: GuidanceConfig,
    pub start_region: StartRegion,
    pub open_loop: OpenLoopPlan,
}

impl Default for Scenario {
    fn default() -> Self {
        parse_scenario("").expect("defaults are valid")
    }
}

impl Scenario {
    /// Target module centre and yaw; its -x face looks back along the
    /// docking axis at the arriving chaser.
    pub fn target_module_pose(&self) -> (Vector2<f64>, f64) {
        (
            self.target.position + self.target.axis() * self.target_offset,
            self.target.heading,
        )
    }

    /// Checks every parameter a run depends on.
    pub fn validate(&self) -> crate::Result<()> {
        run::validate(self)
    }
}
