//! The fixed-step event loop.
//!
//! Time advances in integer simulation ticks. A sensor at rate `r` fires on
//! tick `round(j * sim / r)` for its `j`-th sample, so no sample is ever
//! dropped or duplicated. Within one tick the order is fixed: truth log,
//! IMU (with the accelerometer update), UWB, vision, guidance, estimate
//! log, then the dynamics step to the next tick.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::logs::{
    EstimateRow, Logs, MeasurementKind, MeasurementRow, MeasurementStatus, PhaseRow, TruthRow,
};
use super::{Mode, RunMetrics, Scenario};
use crate::dynamics::{self, thruster_forces, BodyState, BodyWrench, ThrusterCommand};
use crate::error::{Error, Result};
use crate::estimator::{trilaterate, EstimatorState, PredictInputs, UpdateOutcome, SYMMETRY_TOL};
use crate::geometry::{asymmetry, is_spd, rot2, rot2_prime, wrap_angle};
use crate::guidance::{step_guidance, GuidanceInput, GuidancePhase, GuidanceState};
use crate::sensors::{self, planar_isometry, RangeMeasurement};
use crate::vision::{
    disambiguate, identify_all, p3p_solve, planar_pose_output, PoseCandidate, VisionState,
};

/// Random stream of each noise source; all share the scenario seed.
const STREAM_IMU: u64 = 0;
const STREAM_ACCEL: u64 = 1;
const STREAM_UWB: u64 = 2;
const STREAM_VISION: u64 = 3;
const STREAM_JITTER: u64 = 4;

/// A vision track with no usable frame for this long is dropped (s).
const VISION_LOSS_TIMEOUT: f64 = 0.5;

/// How many samples of each kind the scheduler produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickCounts {
    pub sim: u64,
    pub imu: u64,
    pub uwb: u64,
    pub vision: u64,
    pub truth_log: u64,
    pub guidance: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub logs: Logs,
    pub metrics: RunMetrics,
    pub ticks: TickCounts,
    pub final_truth: BodyState,
    /// Why the run stopped early, if it did.
    pub failure: Option<String>,
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Nearest-tick schedule of a periodic source.
struct Schedule {
    ticks_per_sample: f64,
    next_sample: u64,
    next_tick: u64,
}

impl Schedule {
    fn new(sim_rate: f64, rate: f64) -> Self {
        Self {
            ticks_per_sample: sim_rate / rate,
            next_sample: 0,
            next_tick: 0,
        }
    }

    fn due(&mut self, tick: u64) -> bool {
        if tick != self.next_tick {
            return false;
        }
        self.next_sample += 1;
        self.next_tick = (self.next_sample as f64 * self.ticks_per_sample).round() as u64;
        true
    }
}

/// UWB slots perturbed by Gaussian timing jitter, kept strictly increasing.
struct JitteredSchedule {
    base: Schedule,
    jitter_ticks: f64,
    rng: ChaCha8Rng,
    next_tick: u64,
    last_tick: Option<u64>,
}

impl JitteredSchedule {
    fn new(sim_rate: f64, rate: f64, jitter: f64, seed: u64) -> Self {
        let mut s = Self {
            base: Schedule::new(sim_rate, rate),
            jitter_ticks: jitter * sim_rate,
            rng: rng(seed, STREAM_JITTER),
            next_tick: 0,
            last_tick: None,
        };
        s.advance();
        s
    }

    fn advance(&mut self) {
        let nominal = self.base.next_tick as f64;
        self.base.due(self.base.next_tick);
        let mut tick = if self.jitter_ticks > 0.0 {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            (nominal + n * self.jitter_ticks).round().max(0.0) as u64
        } else {
            nominal as u64
        };
        if let Some(last) = self.last_tick {
            tick = tick.max(last + 1);
        }
        self.next_tick = tick;
    }

    fn due(&mut self, tick: u64) -> bool {
        if tick != self.next_tick {
            return false;
        }
        self.last_tick = Some(tick);
        self.advance();
        true
    }
}

/// Command of the open-loop pattern at time `t`.
fn open_loop_command(sc: &Scenario, t: f64) -> ThrusterCommand {
    // forward, left, back, right
    const PAIRS: [[usize; 2]; 4] = [[0, 1], [0, 2], [2, 3], [1, 3]];
    let plan = &sc.open_loop;
    let period = plan.segment + plan.coast;
    let cycle = (t / period).floor();
    let within = t - cycle * period;
    if within >= plan.segment {
        return ThrusterCommand::zero();
    }
    let mut duty = [0.0; 4];
    for n in PAIRS[cycle as usize % 4] {
        duty[n] = plan.duty;
    }
    ThrusterCommand::from_duty(duty)
}

fn outcome_status(o: &UpdateOutcome) -> MeasurementStatus {
    if o.degenerate {
        MeasurementStatus::Degenerate
    } else if o.accepted {
        MeasurementStatus::Accepted
    } else {
        MeasurementStatus::Rejected
    }
}

fn healthy<const D: usize>(cov: &nalgebra::SMatrix<f64, D, D>) -> bool {
    asymmetry(cov) <= SYMMETRY_TOL && is_spd(cov, SYMMETRY_TOL)
}

/// Navigation filter plus the inputs held over its next prediction.
struct Navigator {
    est: EstimatorState,
    /// Heading at `est.time`, advanced with the held rate.
    heading: f64,
    rate: f64,
    wrench: BodyWrench,
}

impl Navigator {
    fn predict_to(&mut self, t: f64, sc: &Scenario) -> Result<()> {
        let dt = t - self.est.time;
        if dt <= 1e-12 {
            return Ok(());
        }
        let inputs = PredictInputs {
            heading: self.heading,
            rate: self.rate,
            wrench: self.wrench,
        };
        self.est.predict(&inputs, &sc.module, &sc.filter, dt)?;
        self.est.time = t;
        self.heading = wrap_angle(self.heading + self.rate * dt);
        Ok(())
    }
}

struct VisionTrack {
    state: Option<VisionState>,
    last_seen: f64,
    /// Time and chaser heading of the last pose handed to the filter.
    heading_fix: Option<(f64, f64)>,
}

struct Sim<'a> {
    sc: &'a Scenario,
    logs: Logs,
    ticks: TickCounts,
    truth: BodyState,
    cmd: ThrusterCommand,
    nav: Option<Navigator>,
    vision: VisionTrack,
    guidance: Option<GuidanceState>,
    gyro: f64,
    ahrs_heading: f64,
    violations: u64,
    rng_imu: ChaCha8Rng,
    rng_accel: ChaCha8Rng,
    rng_uwb: ChaCha8Rng,
    rng_vision: ChaCha8Rng,
}

/// Runs one scenario to its duration, or until guidance reaches a final
/// phase, and returns its logs and metrics.
///
/// Invalid scenarios are rejected up front; a non-finite state or a failed
/// filter step during the run stops it and is reported in
/// [`RunOutput::failure`].
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput> {
    validate(sc)?;
    let mut sim = Sim {
        sc,
        logs: Logs::default(),
        ticks: TickCounts::default(),
        truth: sc.initial,
        cmd: ThrusterCommand::zero(),
        nav: None,
        vision: VisionTrack {
            state: None,
            last_seen: f64::NEG_INFINITY,
            heading_fix: None,
        },
        guidance: None,
        gyro: 0.0,
        ahrs_heading: sc.initial.heading,
        violations: 0,
        rng_imu: rng(sc.seed, STREAM_IMU),
        rng_accel: rng(sc.seed, STREAM_ACCEL),
        rng_uwb: rng(sc.seed, STREAM_UWB),
        rng_vision: rng(sc.seed, STREAM_VISION),
    };
    let failure = sim.run().err().map(|e| e.to_string());
    let metrics = RunMetrics::from_logs(&sim.logs, sc);
    Ok(RunOutput {
        logs: sim.logs,
        metrics,
        ticks: sim.ticks,
        final_truth: sim.truth,
        failure,
    })
}

pub(crate) fn validate(sc: &Scenario) -> Result<()> {
    if !(sc.duration > 0.0 && sc.duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {}", sc.duration)));
    }
    let r = &sc.rates;
    for rate in [r.imu, r.uwb, r.vision, r.truth_log, sc.guidance.command_rate] {
        if !(rate > 0.0 && rate <= r.sim && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rate {rate} Hz must be positive and at most the simulation rate"
            )));
        }
    }
    if !(r.uwb_jitter >= 0.0) {
        return Err(Error::InvalidArgument("UWB jitter must be non-negative".into()));
    }
    if !sc.initial.is_finite() {
        return Err(Error::InvalidArgument("initial state must be finite".into()));
    }
    sc.module.validate()?;
    sc.noise.validate()?;
    sc.filter.validate()?;
    sc.guidance.validate()?;
    sc.vision.validate()?;
    sc.intrinsics.validate()?;
    Ok(())
}

impl Sim<'_> {
    fn run(&mut self) -> Result<()> {
        let sc = self.sc;
        let r = sc.rates;
        let n_ticks = (sc.duration * r.sim).round() as u64;
        let dt = 1.0 / r.sim;
        let mut truth_sched = Schedule::new(r.sim, r.truth_log);
        let mut imu_sched = Schedule::new(r.sim, r.imu);
        let mut uwb_sched = JitteredSchedule::new(r.sim, r.uwb, r.uwb_jitter, sc.seed);
        let mut vision_sched = Schedule::new(r.sim, r.vision);
        let mut guidance_sched = Schedule::new(r.sim, sc.guidance.command_rate);
        if sc.mode != Mode::OpenLoop {
            self.enter_phase(GuidanceState::new(0.0));
        }
        let mut stopping = false;

        for tick in 0..n_ticks {
            let t = tick as f64 / r.sim;
            self.ticks.sim += 1;

            if sc.mode == Mode::OpenLoop {
                let cmd = open_loop_command(sc, t);
                if cmd != self.cmd {
                    self.set_command(cmd, t)?;
                }
            }
            if truth_sched.due(tick) {
                self.ticks.truth_log += 1;
                self.log_truth(t);
                if stopping {
                    break;
                }
            }
            let imu_due = imu_sched.due(tick);
            if imu_due {
                self.ticks.imu += 1;
                self.imu(t)?;
            }
            if uwb_sched.due(tick) {
                self.ticks.uwb += 1;
                self.uwb(t)?;
            }
            if vision_sched.due(tick) {
                self.ticks.vision += 1;
                self.vision(t)?;
            }
            if sc.mode != Mode::OpenLoop && guidance_sched.due(tick) {
                self.ticks.guidance += 1;
                self.guide(t)?;
                stopping |= self.guidance.is_some_and(|g| g.phase.is_final());
            }
            if imu_due {
                self.log_estimate(t);
            }

            self.truth = dynamics::step(&self.truth, &self.cmd, &sc.module, dt)?;
            if !self.truth.is_finite() {
                return Err(Error::NonFinite {
                    what: "truth state",
                    time: (tick + 1) as f64 / r.sim,
                });
            }
        }
        Ok(())
    }

    fn enter_phase(&mut self, g: GuidanceState) {
        self.logs.push_phase(PhaseRow {
            time: g.entered_at,
            phase: g.phase,
        });
        self.guidance = Some(g);
    }

    fn set_command(&mut self, cmd: ThrusterCommand, t: f64) -> Result<()> {
        // the filter must integrate the old command up to the switch
        if let Some(nav) = &mut self.nav {
            nav.predict_to(t, self.sc)?;
            nav.wrench = thruster_forces(&cmd, &self.sc.module);
        }
        self.cmd = cmd;
        Ok(())
    }

    fn check_health(&mut self) {
        let nav_ok = self.nav.as_ref().is_none_or(|n| n.est.is_healthy() && healthy(&n.est.cov));
        let vision_ok = self.vision.state.as_ref().is_none_or(|v| v.is_healthy() && healthy(&v.cov));
        self.violations += u64::from(!nav_ok) + u64::from(!vision_ok);
    }

    #[allow(clippy::too_many_arguments)]
    fn measurement(&mut self, time: f64, kind: MeasurementKind, id: i64, z: [f64; 2], d2: f64, status: MeasurementStatus, outlier: bool) {
        self.logs.push_measurement(MeasurementRow {
            time,
            kind,
            id,
            z1: z[0],
            z2: z[1],
            d2,
            status,
            outlier,
        });
    }

    /// Heading the filter should hold: the vision-derived one while fresh,
    /// otherwise the AHRS output.
    fn heading_source(&self, t: f64) -> f64 {
        match self.vision.heading_fix {
            Some((time, h)) if t - time <= 2.0 / self.sc.rates.vision => h,
            _ => self.ahrs_heading,
        }
    }

    fn imu(&mut self, t: f64) -> Result<()> {
        let sc = self.sc;
        self.gyro = sensors::sample_gyro(&self.truth, &sc.noise, &mut self.rng_imu);
        self.ahrs_heading = sensors::sample_attitude(&self.truth, &sc.noise, &mut self.rng_imu);
        let accel = sensors::sample_accel(&self.truth, &self.cmd, &sc.module, &sc.noise, &mut self.rng_accel);
        self.measurement(t, MeasurementKind::Imu, -1, [self.gyro, self.ahrs_heading], f64::NAN, MeasurementStatus::Accepted, false);

        let heading = self.heading_source(t);
        let (gyro, cmd) = (self.gyro, self.cmd);
        let status = match &mut self.nav {
            Some(nav) => {
                nav.predict_to(t, sc)?;
                nav.heading = heading;
                nav.rate = gyro;
                nav.wrench = thruster_forces(&cmd, &sc.module);
                if sc.filter.accel_updates {
                    let o = nav.est.update_accel(&accel, &nav.wrench, &sc.module, &sc.filter)?;
                    Some((outcome_status(&o), o.d2))
                } else {
                    None
                }
            }
            None => None,
        };
        let (status, d2) = status.unwrap_or((MeasurementStatus::Unused, f64::NAN));
        self.measurement(t, MeasurementKind::Accel, -1, [accel.x, accel.y], d2, status, false);
        self.check_health();
        Ok(())
    }

    fn uwb(&mut self, t: f64) -> Result<()> {
        let sc = self.sc;
        let mut noise = sc.noise;
        if sc.mode != Mode::Docking {
            // the near-field dropout is caused by the target module
            noise.uwb_dropout_radius = 0.0;
        }
        let ranges = sensors::sample_uwb(
            &self.truth,
            &sc.anchors,
            &sc.target.position,
            &sc.filter.antenna_offset,
            &noise,
            t,
            &mut self.rng_uwb,
        );
        if self.nav.is_none() {
            self.initialise(&ranges, t);
            for m in &ranges {
                self.range_row(m, f64::NAN, MeasurementStatus::Unused);
            }
            return Ok(());
        }
        let heading = self.heading_source(t);
        for m in &ranges {
            let nav = self.nav.as_mut().expect("checked above");
            nav.predict_to(t, sc)?;
            let anchor = sc.anchors.positions()[m.anchor];
            let o = nav.est.update_range(m, &anchor, heading, &sc.filter)?;
            self.range_row(m, o.d2, outcome_status(&o));
        }
        self.check_health();
        Ok(())
    }

    fn range_row(&mut self, m: &RangeMeasurement, d2: f64, status: MeasurementStatus) {
        self.measurement(m.time, MeasurementKind::Range, m.anchor as i64, [m.range, 0.0], d2, status, m.injected_outlier);
    }

    /// Starts the filter from the first complete round of ranges.
    fn initialise(&mut self, ranges: &[RangeMeasurement], t: f64) {
        let sc = self.sc;
        if ranges.len() < sc.anchors.len().max(3) {
            return;
        }
        let pairs: Vec<(usize, f64)> = ranges.iter().map(|m| (m.anchor, m.range)).collect();
        let Ok(fix) = trilaterate(sc.anchors.positions(), &pairs) else {
            return;
        };
        // the fix locates the antenna; shift it back to the body centre
        let heading = self.heading_source(t);
        let position = fix - rot2(heading) * sc.filter.antenna_offset;
        self.nav = Some(Navigator {
            est: EstimatorState::from_fix(position, t, sc.anchors.len(), &sc.filter),
            heading,
            rate: self.gyro,
            wrench: thruster_forces(&self.cmd, &sc.module),
        });
    }

    fn vision_active(&self) -> bool {
        use GuidancePhase::*;
        self.sc.mode == Mode::Docking
            && self.sc.vision_enabled
            && self
                .guidance
                .is_some_and(|g| matches!(g.phase, TerminalLock | Align | FinalApproach | Docked))
    }

    fn vision(&mut self, t: f64) -> Result<()> {
        if !self.vision_active() {
            return Ok(());
        }
        let sc = self.sc;
        let (centre, yaw) = sc.target_module_pose();
        let camera = sc.vision.mount.world_pose(&self.truth);
        let target = planar_isometry(&centre, yaw);
        let features = sensors::project_features(&camera, &target, &sc.markers, &sc.intrinsics, &sc.noise, t, &mut self.rng_vision);
        let matches = identify_all(&features, &sc.markers);

        let tracked = if matches.is_empty() {
            None
        } else {
            self.vision.last_seen = t;
            let corr: Vec<_> = matches.iter().flat_map(|m| m.correspondences).collect();
            match self.vision.state.take() {
                Some(mut vs) => match vs.predict(self.gyro, t, &sc.vision).and_then(|_| vs.update(&corr, &sc.vision)) {
                    Ok(_) => Some(vs),
                    Err(_) => {
                        self.violations += u64::from(!healthy(&vs.cov));
                        None
                    }
                },
                None => {
                    let prior = self.prior_pose();
                    let fourth = matches.get(1).map(|m| m.correspondences[0]);
                    p3p_solve(&matches[0].correspondences)
                        .and_then(|c| disambiguate(&c, prior.as_ref(), fourth.as_ref()))
                        .ok()
                        .map(|pose| VisionState::from_pose(&pose, t, &sc.vision))
                }
            }
        };
        if tracked.is_none() && t - self.vision.last_seen > VISION_LOSS_TIMEOUT {
            self.vision.state = None;
        } else if tracked.is_some() {
            self.vision.state = tracked;
        }
        self.check_health();

        let face = matches.first().map_or(-1, |m| m.face as i64);
        let Some(vs) = tracked else {
            self.measurement(t, MeasurementKind::Vision, face, [0.0, 0.0], f64::NAN, MeasurementStatus::Lost, false);
            return Ok(());
        };
        let Ok(rel) = planar_pose_output(&vs, &sc.vision.mount, &sc.filter.vision_var_floor) else {
            self.measurement(t, MeasurementKind::Vision, face, [0.0, 0.0], f64::NAN, MeasurementStatus::Tracking, false);
            return Ok(());
        };

        // chaser pose from the target pose seen in the chaser body frame
        let heading = wrap_angle(yaw - rel.yaw);
        let r = rot2(heading);
        let position = centre - r * rel.position;
        let lever = rot2_prime(heading) * rel.position;
        let cov = r * Matrix2::from_diagonal(&Vector2::new(rel.var.x, rel.var.y)) * r.transpose()
            + lever * lever.transpose() * rel.var.z;
        let (status, d2) = match &mut self.nav {
            Some(nav) => {
                nav.predict_to(t, sc)?;
                let o = nav.est.update_vision_position(&position, &cov, &sc.filter)?;
                (outcome_status(&o), o.d2)
            }
            None => (MeasurementStatus::Unused, f64::NAN),
        };
        self.vision.heading_fix = Some((t, heading));
        self.measurement(t, MeasurementKind::Vision, face, [position.x, position.y], d2, status, false);
        self.check_health();
        Ok(())
    }

    /// Camera-from-target pose implied by the navigation estimate.
    fn prior_pose(&self) -> Option<PoseCandidate> {
        let nav = self.nav.as_ref()?;
        let body = BodyState {
            position: nav.est.position(),
            heading: nav.heading,
            ..BodyState::default()
        };
        let (centre, yaw) = self.sc.target_module_pose();
        let rel = self.sc.vision.mount.world_pose(&body).inverse() * planar_isometry(&centre, yaw);
        Some(PoseCandidate {
            rotation: *rel.rotation.to_rotation_matrix().matrix(),
            translation: rel.translation.vector,
            residual: 0.0,
        })
    }

    fn vision_locked(&self, t: f64) -> bool {
        self.vision.state.is_some_and(|v| v.converged)
            && self.vision.heading_fix.is_some_and(|(time, _)| t - time <= 2.0 / self.sc.rates.vision)
    }

    fn guide(&mut self, t: f64) -> Result<()> {
        let sc = self.sc;
        let Some(state) = self.guidance else {
            return Ok(());
        };
        let locked = self.vision_locked(t);
        let Some(nav) = &mut self.nav else {
            // nothing to steer by until the filter starts
            return Ok(());
        };
        nav.predict_to(t, sc)?;
        let input = GuidanceInput {
            time: t,
            position: nav.est.position(),
            body_velocity: nav.est.body_velocity(),
            heading: nav.heading,
            rate: self.gyro,
            position_cov_trace: nav.est.position_cov().trace(),
            vision_locked: locked,
        };
        let (next, cmd) = step_guidance(&state, &input, &sc.target, &sc.module, &sc.guidance);
        if next.phase != state.phase {
            self.enter_phase(next);
        } else {
            self.guidance = Some(next);
        }
        if cmd != self.cmd {
            self.set_command(cmd, t)?;
        }
        Ok(())
    }

    fn log_truth(&mut self, t: f64) {
        let s = self.truth;
        self.logs.push_truth(TruthRow {
            time: t,
            x: s.position.x,
            y: s.position.y,
            heading: s.heading,
            vx: s.body_velocity.x,
            vy: s.body_velocity.y,
            rate: s.rate,
            duty: self.cmd.duty,
        });
    }

    fn log_estimate(&mut self, t: f64) {
        let locked = self.vision_locked(t);
        let Some(nav) = &self.nav else {
            return;
        };
        let e = &nav.est;
        let s = self.truth;
        self.logs.push_estimate(EstimateRow {
            time: t,
            x: e.mean[0],
            y: e.mean[1],
            vx: e.mean[2],
            vy: e.mean[3],
            heading: nav.heading,
            var: [e.cov[(0, 0)], e.cov[(1, 1)], e.cov[(2, 2)], e.cov[(3, 3)]],
            true_x: s.position.x,
            true_y: s.position.y,
            true_vx: s.body_velocity.x,
            true_vy: s.body_velocity.y,
            cov_violations: self.violations,
            vision_locked: locked,
        });
    }
}
