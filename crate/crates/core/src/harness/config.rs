//! Scenario files: TOML with one table per subsystem and units in every key
//! name. Unknown keys are rejected; every section and key is optional and
//! falls back to the library defaults.

use nalgebra::{Vector2, Vector4};
use serde::Deserialize;

use super::{Mode, OpenLoopPlan, Rates, Scenario, StartRegion};
use crate::dynamics::{BodyState, ModuleParams, ThrusterLayout, DEFAULT_NOZZLE_ARM};
use crate::error::ConfigError;
use crate::estimator::FilterConfig;
use crate::guidance::{DockTarget, GuidanceConfig};
use crate::sensors::{AnchorSet, CameraIntrinsics, CameraMount, MarkerSet, NoiseConfig};
use crate::vision::VisionConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct File {
    scenario: ScenarioSection,
    module: ModuleSection,
    initial: InitialSection,
    target: TargetSection,
    anchors: AnchorSection,
    imu: ImuSection,
    uwb: UwbSection,
    camera: CameraSection,
    vision: VisionSection,
    filter: FilterSection,
    guidance: GuidanceSection,
    monte_carlo: MonteCarloSection,
    open_loop: OpenLoopSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScenarioSection {
    name: String,
    mode: Mode,
    seed: u64,
    duration_s: f64,
    sim_rate_hz: f64,
    imu_rate_hz: f64,
    uwb_rate_hz: f64,
    uwb_jitter_s: f64,
    vision_rate_hz: f64,
    truth_log_rate_hz: f64,
    success_radius_m: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let r = Rates::default();
        Self {
            name: "scenario".into(),
            mode: Mode::Waypoint,
            seed: 1,
            duration_s: 60.0,
            sim_rate_hz: r.sim,
            imu_rate_hz: r.imu,
            uwb_rate_hz: r.uwb,
            uwb_jitter_s: r.uwb_jitter,
            vision_rate_hz: r.vision,
            truth_log_rate_hz: r.truth_log,
            success_radius_m: 0.05,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModuleSection {
    mass_kg: f64,
    inertia_kg_m2: f64,
    friction_coeff: f64,
    gravity_m_s2: f64,
    nozzle_thrust_n: f64,
    nozzle_arm_m: f64,
    rot_damping_n_m_s: f64,
}

impl Default for ModuleSection {
    fn default() -> Self {
        let p = ModuleParams::default();
        Self {
            mass_kg: p.mass,
            inertia_kg_m2: p.inertia,
            friction_coeff: p.friction,
            gravity_m_s2: p.gravity,
            nozzle_thrust_n: p.nozzle_thrust,
            nozzle_arm_m: DEFAULT_NOZZLE_ARM,
            rot_damping_n_m_s: p.rot_damping,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InitialSection {
    position_m: [f64; 2],
    heading_rad: f64,
    body_velocity_m_s: [f64; 2],
    rate_rad_s: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            position_m: [0.5, 0.5],
            heading_rad: 0.0,
            body_velocity_m_s: [0.0, 0.0],
            rate_rad_s: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TargetSection {
    position_m: [f64; 2],
    heading_rad: f64,
    module_offset_m: f64,
    mobile: bool,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            position_m: [1.5, 1.5],
            heading_rad: 0.0,
            module_offset_m: 0.15,
            mobile: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnchorSection {
    positions_m: Vec<[f64; 2]>,
}

impl Default for AnchorSection {
    fn default() -> Self {
        Self {
            positions_m: AnchorSet::default().positions().iter().map(|p| [p.x, p.y]).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ImuSection {
    gyro_sigma_rad_s: f64,
    attitude_sigma_rad: f64,
    accel_sigma_m_s2: f64,
}

impl Default for ImuSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self {
            gyro_sigma_rad_s: n.gyro_sigma,
            attitude_sigma_rad: n.attitude_sigma,
            accel_sigma_m_s2: n.accel_sigma,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct UwbSection {
    inlier_sigma_m: f64,
    outlier_sigma_m: f64,
    outlier_prob: f64,
    dropout_radius_m: f64,
    antenna_offset_m: [f64; 2],
}

impl Default for UwbSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self {
            inlier_sigma_m: n.uwb_inlier_sigma,
            outlier_sigma_m: n.uwb_outlier_sigma,
            outlier_prob: n.uwb_outlier_prob,
            dropout_radius_m: n.uwb_dropout_radius,
            antenna_offset_m: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CameraSection {
    enabled: bool,
    fx_px: f64,
    fy_px: f64,
    cx_px: f64,
    cy_px: f64,
    /// Feature noise in rectified (normalised image) units.
    feature_sigma: f64,
    mount_offset_m: [f64; 2],
    mount_yaw_rad: f64,
    marker_cube_side_m: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let i = CameraIntrinsics::default();
        let m = CameraMount::default();
        Self {
            enabled: true,
            fx_px: i.fx,
            fy_px: i.fy,
            cx_px: i.cx,
            cy_px: i.cy,
            feature_sigma: NoiseConfig::default().feature_sigma,
            mount_offset_m: [m.offset.x, m.offset.y],
            mount_yaw_rad: m.yaw,
            marker_cube_side_m: 0.1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VisionSection {
    feature_var: f64,
    accel_var_m2_s4: f64,
    rate_var_rad2_s2: f64,
    initial_quat_var: f64,
    initial_position_var_m2: f64,
    initial_velocity_var_m2_s2: f64,
    convergence_3sigma_m: f64,
}

impl Default for VisionSection {
    fn default() -> Self {
        let v = VisionConfig::default();
        Self {
            feature_var: v.feature_var,
            accel_var_m2_s4: v.accel_var,
            rate_var_rad2_s2: v.rate_var,
            initial_quat_var: v.initial_quat_var,
            initial_position_var_m2: v.initial_position_var,
            initial_velocity_var_m2_s2: v.initial_velocity_var,
            convergence_3sigma_m: v.convergence_3sigma,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FilterSection {
    accel_sigma_m_s2: f64,
    range_sigma_m: f64,
    vision_var_floor: [f64; 3],
    process_accel_var_m2_s4: f64,
    process_noise_period_s: f64,
    range_gate_chi2: f64,
    vision_gate_chi2: f64,
    accel_gate_chi2: f64,
    gating: bool,
    accel_updates: bool,
    underweight_factor: f64,
    underweight_count: u32,
    underweight_gap_s: f64,
    initial_var: [f64; 4],
}

impl Default for FilterSection {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self {
            accel_sigma_m_s2: f.accel_var.x.sqrt(),
            range_sigma_m: f.range_var.sqrt(),
            vision_var_floor: f.vision_var_floor,
            process_accel_var_m2_s4: f.process_accel_var.x,
            process_noise_period_s: f.process_noise_period,
            range_gate_chi2: f.range_gate,
            vision_gate_chi2: f.vision_gate,
            accel_gate_chi2: f.accel_gate,
            gating: f.gating_enabled,
            accel_updates: f.accel_updates,
            underweight_factor: f.underweight_factor,
            underweight_count: f.underweight_count,
            underweight_gap_s: f.underweight_gap,
            initial_var: f.initial_var.into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GuidanceSection {
    settle_trace_m2: f64,
    los_deadband_rad: f64,
    handover_radius_m: f64,
    dock_radius_m: f64,
    align_cross_track_m: f64,
    heading_bound_rad: f64,
    dock_speed_m_s: f64,
    standoff_m: f64,
    position_gain_1_s: f64,
    velocity_gain_1_s: f64,
    heading_gain_1_s2: f64,
    rate_gain_1_s: f64,
    los_speed_m_s: f64,
    terminal_speed_m_s: f64,
    los_heading_hold_m: f64,
    lock_timeout_s: f64,
    covariance_ceiling_m2: f64,
    command_rate_hz: f64,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        let g = GuidanceConfig::default();
        Self {
            settle_trace_m2: g.settle_trace,
            los_deadband_rad: g.los_deadband,
            handover_radius_m: g.handover_radius,
            dock_radius_m: g.dock_radius,
            align_cross_track_m: g.align_cross_track,
            heading_bound_rad: g.heading_bound,
            dock_speed_m_s: g.dock_speed,
            standoff_m: g.standoff,
            position_gain_1_s: g.position_gain,
            velocity_gain_1_s: g.velocity_gain,
            heading_gain_1_s2: g.heading_gain,
            rate_gain_1_s: g.rate_gain,
            los_speed_m_s: g.los_speed,
            terminal_speed_m_s: g.terminal_speed,
            los_heading_hold_m: g.los_heading_hold,
            lock_timeout_s: g.lock_timeout,
            covariance_ceiling_m2: g.covariance_ceiling,
            command_rate_hz: g.command_rate,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MonteCarloSection {
    start_center_m: [f64; 2],
    start_half_extent_m: [f64; 2],
    heading_range_rad: [f64; 2],
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        let r = StartRegion::default();
        Self {
            start_center_m: [r.center.x, r.center.y],
            start_half_extent_m: [r.half_extent.x, r.half_extent.y],
            heading_range_rad: r.heading_range,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OpenLoopSection {
    duty: f64,
    segment_s: f64,
    coast_s: f64,
}

impl Default for OpenLoopSection {
    fn default() -> Self {
        let p = OpenLoopPlan::default();
        Self {
            duty: p.duty,
            segment_s: p.segment,
            coast_s: p.coast,
        }
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Line of `key` inside `[section]`, if it is written out explicitly.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

/// Parses and validates a scenario file.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let file: File = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of(text, s.start)),
        key: None,
        message: e.message().trim().to_string(),
    })?;
    let err = |section: &str, key: &str, message: String| ConfigError {
        line: locate(text, section, key),
        key: Some(format!("{section}.{key}")),
        message,
    };
    build(file, &err)
}

fn build(
    f: File,
    err: &dyn Fn(&str, &str, String) -> ConfigError,
) -> Result<Scenario, ConfigError> {
    let s = &f.scenario;
    let positive = |section: &str, key: &str, v: f64| -> Result<f64, ConfigError> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(err(section, key, format!("must be positive and finite, got {v}")))
        }
    };
    let non_negative = |section: &str, key: &str, v: f64| -> Result<f64, ConfigError> {
        if v >= 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(err(section, key, format!("must be non-negative and finite, got {v}")))
        }
    };
    let finite = |section: &str, key: &str, v: &[f64]| -> Result<(), ConfigError> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(err(section, key, "must be finite".into()))
        }
    };

    let rates = Rates {
        sim: positive("scenario", "sim_rate_hz", s.sim_rate_hz)?,
        imu: positive("scenario", "imu_rate_hz", s.imu_rate_hz)?,
        uwb: positive("scenario", "uwb_rate_hz", s.uwb_rate_hz)?,
        uwb_jitter: non_negative("scenario", "uwb_jitter_s", s.uwb_jitter_s)?,
        vision: positive("scenario", "vision_rate_hz", s.vision_rate_hz)?,
        truth_log: positive("scenario", "truth_log_rate_hz", s.truth_log_rate_hz)?,
    };
    for (key, r) in [
        ("imu_rate_hz", rates.imu),
        ("uwb_rate_hz", rates.uwb),
        ("vision_rate_hz", rates.vision),
        ("truth_log_rate_hz", rates.truth_log),
    ] {
        if r > rates.sim {
            return Err(err("scenario", key, "sensor rate exceeds the simulation rate".into()));
        }
    }
    let duration = positive("scenario", "duration_s", s.duration_s)?;

    let m = &f.module;
    let module = ModuleParams {
        mass: positive("module", "mass_kg", m.mass_kg)?,
        inertia: positive("module", "inertia_kg_m2", m.inertia_kg_m2)?,
        friction: non_negative("module", "friction_coeff", m.friction_coeff)?,
        gravity: positive("module", "gravity_m_s2", m.gravity_m_s2)?,
        nozzle_thrust: non_negative("module", "nozzle_thrust_n", m.nozzle_thrust_n)?,
        rot_damping: non_negative("module", "rot_damping_n_m_s", m.rot_damping_n_m_s)?,
        layout: ThrusterLayout::x_configuration(non_negative("module", "nozzle_arm_m", m.nozzle_arm_m)?),
    };

    let i = &f.initial;
    finite("initial", "position_m", &i.position_m)?;
    finite("initial", "body_velocity_m_s", &i.body_velocity_m_s)?;
    finite("initial", "heading_rad", &[i.heading_rad, i.rate_rad_s])?;
    let initial = BodyState {
        position: i.position_m.into(),
        heading: crate::geometry::wrap_angle(i.heading_rad),
        body_velocity: i.body_velocity_m_s.into(),
        rate: i.rate_rad_s,
    };

    let t = &f.target;
    finite("target", "position_m", &t.position_m)?;
    finite("target", "heading_rad", &[t.heading_rad])?;
    let target = DockTarget {
        position: t.position_m.into(),
        heading: crate::geometry::wrap_angle(t.heading_rad),
    };
    let target_offset = non_negative("target", "module_offset_m", t.module_offset_m)?;
    if t.mobile {
        return Err(err("target", "mobile", "a mobile target is not supported".into()));
    }

    let anchors = AnchorSet::new(f.anchors.positions_m.iter().map(|p| Vector2::new(p[0], p[1])).collect())
        .map_err(|e| err("anchors", "positions_m", e.to_string()))?;

    let u = &f.uwb;
    let noise = NoiseConfig {
        gyro_sigma: f.imu.gyro_sigma_rad_s,
        attitude_sigma: f.imu.attitude_sigma_rad,
        accel_sigma: f.imu.accel_sigma_m_s2,
        uwb_inlier_sigma: u.inlier_sigma_m,
        uwb_outlier_sigma: u.outlier_sigma_m,
        uwb_outlier_prob: u.outlier_prob,
        uwb_dropout_radius: u.dropout_radius_m,
        feature_sigma: f.camera.feature_sigma,
    };
    for (section, key, v) in [
        ("imu", "gyro_sigma_rad_s", noise.gyro_sigma),
        ("imu", "attitude_sigma_rad", noise.attitude_sigma),
        ("imu", "accel_sigma_m_s2", noise.accel_sigma),
        ("uwb", "inlier_sigma_m", noise.uwb_inlier_sigma),
        ("uwb", "outlier_sigma_m", noise.uwb_outlier_sigma),
        ("uwb", "dropout_radius_m", noise.uwb_dropout_radius),
        ("camera", "feature_sigma", noise.feature_sigma),
    ] {
        non_negative(section, key, v)?;
    }
    if !(0.0..=1.0).contains(&noise.uwb_outlier_prob) {
        return Err(err("uwb", "outlier_prob", "must lie in [0, 1]".into()));
    }
    finite("uwb", "antenna_offset_m", &u.antenna_offset_m)?;

    let c = &f.camera;
    let intrinsics = CameraIntrinsics {
        fx: positive("camera", "fx_px", c.fx_px)?,
        fy: positive("camera", "fy_px", c.fy_px)?,
        cx: c.cx_px,
        cy: c.cy_px,
    };
    finite("camera", "cx_px", &[c.cx_px, c.cy_px])?;
    finite("camera", "mount_offset_m", &c.mount_offset_m)?;
    finite("camera", "mount_yaw_rad", &[c.mount_yaw_rad])?;
    let mount = CameraMount {
        offset: c.mount_offset_m.into(),
        yaw: c.mount_yaw_rad,
    };
    let markers = MarkerSet::cube_sides(positive("camera", "marker_cube_side_m", c.marker_cube_side_m)?);

    let v = &f.vision;
    let vision = VisionConfig {
        feature_var: v.feature_var,
        accel_var: v.accel_var_m2_s4,
        rate_var: v.rate_var_rad2_s2,
        initial_quat_var: v.initial_quat_var,
        initial_position_var: v.initial_position_var_m2,
        initial_velocity_var: v.initial_velocity_var_m2_s2,
        convergence_3sigma: v.convergence_3sigma_m,
        mount,
        ..VisionConfig::default()
    };
    vision.validate().map_err(|e| err("vision", "", e.to_string()))?;

    let fl = &f.filter;
    let filter = FilterConfig {
        accel_var: Vector2::repeat(positive("filter", "accel_sigma_m_s2", fl.accel_sigma_m_s2)?.powi(2)),
        range_var: positive("filter", "range_sigma_m", fl.range_sigma_m)?.powi(2),
        vision_var_floor: fl.vision_var_floor,
        process_accel_var: Vector2::repeat(non_negative(
            "filter",
            "process_accel_var_m2_s4",
            fl.process_accel_var_m2_s4,
        )?),
        process_noise_period: positive("filter", "process_noise_period_s", fl.process_noise_period_s)?,
        range_gate: positive("filter", "range_gate_chi2", fl.range_gate_chi2)?,
        vision_gate: positive("filter", "vision_gate_chi2", fl.vision_gate_chi2)?,
        accel_gate: positive("filter", "accel_gate_chi2", fl.accel_gate_chi2)?,
        gating_enabled: fl.gating,
        accel_updates: fl.accel_updates,
        underweight_factor: fl.underweight_factor,
        underweight_count: fl.underweight_count,
        underweight_gap: fl.underweight_gap_s,
        antenna_offset: u.antenna_offset_m.into(),
        initial_var: Vector4::from(fl.initial_var),
    };
    for (k, v) in fl.vision_var_floor.iter().enumerate() {
        positive("filter", "vision_var_floor", *v).map_err(|mut e| {
            e.message = format!("entry {k} {}", e.message);
            e
        })?;
    }
    for v in fl.initial_var {
        positive("filter", "initial_var", v)?;
    }
    if !(fl.underweight_factor >= 1.0 && fl.underweight_factor.is_finite()) {
        return Err(err("filter", "underweight_factor", "must be at least 1".into()));
    }
    positive("filter", "underweight_gap_s", fl.underweight_gap_s)?;

    let g = &f.guidance;
    let guidance = GuidanceConfig {
        settle_trace: g.settle_trace_m2,
        los_deadband: g.los_deadband_rad,
        handover_radius: g.handover_radius_m,
        dock_radius: g.dock_radius_m,
        align_cross_track: g.align_cross_track_m,
        heading_bound: g.heading_bound_rad,
        dock_speed: g.dock_speed_m_s,
        standoff: g.standoff_m,
        position_gain: g.position_gain_1_s,
        velocity_gain: g.velocity_gain_1_s,
        heading_gain: g.heading_gain_1_s2,
        rate_gain: g.rate_gain_1_s,
        los_speed: g.los_speed_m_s,
        terminal_speed: g.terminal_speed_m_s,
        los_heading_hold: g.los_heading_hold_m,
        lock_timeout: g.lock_timeout_s,
        covariance_ceiling: g.covariance_ceiling_m2,
        command_rate: g.command_rate_hz,
        terminal_enabled: s.mode == Mode::Docking,
    };
    guidance.validate().map_err(|e| err("guidance", "", e.to_string()))?;
    if guidance.command_rate > rates.imu {
        return Err(err("guidance", "command_rate_hz", "must not exceed the IMU rate".into()));
    }

    let mc = &f.monte_carlo;
    finite("monte_carlo", "start_center_m", &mc.start_center_m)?;
    for v in mc.start_half_extent_m {
        non_negative("monte_carlo", "start_half_extent_m", v)?;
    }
    finite("monte_carlo", "heading_range_rad", &mc.heading_range_rad)?;
    if mc.heading_range_rad[0] > mc.heading_range_rad[1] {
        return Err(err("monte_carlo", "heading_range_rad", "lower bound exceeds upper bound".into()));
    }
    let start_region = StartRegion {
        center: mc.start_center_m.into(),
        half_extent: mc.start_half_extent_m.into(),
        heading_range: mc.heading_range_rad,
    };

    let ol = &f.open_loop;
    if !(0.0..=1.0).contains(&ol.duty) {
        return Err(err("open_loop", "duty", "must lie in [0, 1]".into()));
    }
    let open_loop = OpenLoopPlan {
        duty: ol.duty,
        segment: positive("open_loop", "segment_s", ol.segment_s)?,
        coast: non_negative("open_loop", "coast_s", ol.coast_s)?,
    };

    Ok(Scenario {
        name: s.name.clone(),
        mode: s.mode,
        seed: s.seed,
        duration,
        success_radius: positive("scenario", "success_radius_m", s.success_radius_m)?,
        rates,
        module,
        initial,
        target,
        target_offset,
        anchors,
        noise,
        filter,
        vision,
        vision_enabled: c.enabled,
        intrinsics,
        markers,
        guidance,
        start_region,
        open_loop,
    })
}
