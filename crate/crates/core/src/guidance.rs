//! Docking guidance: a phase machine over the estimated chaser state that
//! emits nozzle duty cycles.
//!
//! Translation uses a velocity-limited proportional law on position error
//! feeding a proportional velocity loop; heading uses a PD law. The body
//! wrench is mapped to duties through the inverse of the nozzle allocation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3x4, Vector2, Vector3, Vector4};

use crate::dynamics::{BodyWrench, ModuleParams, ThrusterCommand, NOZZLE_COUNT};
use crate::error::{Error, Result};
use crate::geometry::{rot2, wrap_angle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GuidancePhase {
    Settle,
    AcquireLos,
    LosClose,
    TerminalLock,
    Align,
    FinalApproach,
    Docked,
    Abort,
}

impl GuidancePhase {
    pub const ALL: [GuidancePhase; 8] = [
        Self::Settle,
        Self::AcquireLos,
        Self::LosClose,
        Self::TerminalLock,
        Self::Align,
        Self::FinalApproach,
        Self::Docked,
        Self::Abort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Settle => "SETTLE",
            Self::AcquireLos => "ACQUIRE_LOS",
            Self::LosClose => "LOS_CLOSE",
            Self::TerminalLock => "TERMINAL_LOCK",
            Self::Align => "ALIGN",
            Self::FinalApproach => "FINAL_APPROACH",
            Self::Docked => "DOCKED",
            Self::Abort => "ABORT",
        }
    }

    /// The phase that normally follows this one.
    pub fn successor(self) -> Option<Self> {
        match self {
            Self::Settle => Some(Self::AcquireLos),
            Self::AcquireLos => Some(Self::LosClose),
            Self::LosClose => Some(Self::TerminalLock),
            Self::TerminalLock => Some(Self::Align),
            Self::Align => Some(Self::FinalApproach),
            Self::FinalApproach => Some(Self::Docked),
            Self::Docked | Self::Abort => None,
        }
    }

    pub fn is_final(self) -> bool {
        matches!(self, Self::Docked | Self::Abort)
    }

    /// Whether `next` may directly follow `self`.
    pub fn allows(self, next: Self) -> bool {
        next == self || Some(next) == self.successor() || (next == Self::Abort && !self.is_final())
    }
}

impl fmt::Display for GuidancePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GuidancePhase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown guidance phase {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// Trace of the position covariance below which the estimate is trusted (m^2).
    pub settle_trace: f64,
    /// Heading error accepted before closing along the line of sight (rad).
    pub los_deadband: f64,
    /// Separation at which terminal guidance takes over (m).
    pub handover_radius: f64,
    pub dock_radius: f64,
    /// Cross-track error accepted before the final approach (m).
    pub align_cross_track: f64,
    /// Heading error bound for the final approach and docking (rad).
    pub heading_bound: f64,
    /// Speed bound for declaring a dock (m/s).
    pub dock_speed: f64,
    /// Distance behind the dock point held during alignment (m).
    pub standoff: f64,
    /// Position error to commanded velocity (1/s).
    pub position_gain: f64,
    /// Velocity error to commanded acceleration (1/s).
    pub velocity_gain: f64,
    pub heading_gain: f64,
    pub rate_gain: f64,
    /// Speed limit while closing along the line of sight (m/s).
    pub los_speed: f64,
    /// Speed limit during alignment and final approach (m/s).
    pub terminal_speed: f64,
    /// Range below which the line-of-sight heading is no longer tracked (m).
    pub los_heading_hold: f64,
    pub lock_timeout: f64,
    /// Trace of the position covariance treated as divergence (m^2).
    pub covariance_ceiling: f64,
    pub command_rate: f64,
    /// With terminal guidance disabled the chaser station-keeps at the
    /// target in LOS_CLOSE.
    pub terminal_enabled: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            settle_trace: 0.01,
            los_deadband: 0.05,
            handover_radius: 0.10,
            dock_radius: 0.01,
            align_cross_track: 0.005,
            heading_bound: 2f64.to_radians(),
            dock_speed: 0.01,
            standoff: 0.06,
            position_gain: 0.5,
            velocity_gain: 2.0,
            heading_gain: 4.0,
            rate_gain: 4.0,
            los_speed: 0.10,
            terminal_speed: 0.01,
            los_heading_hold: 0.05,
            lock_timeout: 10.0,
            covariance_ceiling: 1.0,
            command_rate: 20.0,
            terminal_enabled: true,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("settle_trace", self.settle_trace),
            ("los_deadband", self.los_deadband),
            ("handover_radius", self.handover_radius),
            ("dock_radius", self.dock_radius),
            ("align_cross_track", self.align_cross_track),
            ("heading_bound", self.heading_bound),
            ("dock_speed", self.dock_speed),
            ("standoff", self.standoff),
            ("position_gain", self.position_gain),
            ("velocity_gain", self.velocity_gain),
            ("heading_gain", self.heading_gain),
            ("rate_gain", self.rate_gain),
            ("los_speed", self.los_speed),
            ("terminal_speed", self.terminal_speed),
            ("los_heading_hold", self.los_heading_hold),
            ("lock_timeout", self.lock_timeout),
            ("covariance_ceiling", self.covariance_ceiling),
            ("command_rate", self.command_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("guidance {name} must be positive")));
            }
        }
        if self.handover_radius <= self.dock_radius {
            return Err(Error::InvalidArgument(
                "guidance handover radius must exceed the dock radius".into(),
            ));
        }
        if self.standoff >= self.handover_radius {
            return Err(Error::InvalidArgument(
                "guidance standoff must lie inside the handover radius".into(),
            ));
        }
        Ok(())
    }
}

/// Where the chaser must end up: the chaser position and heading at dock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DockTarget {
    pub position: Vector2<f64>,
    pub heading: f64,
}

impl DockTarget {
    /// Unit vector of the docking axis (direction of the final approach).
    pub fn axis(&self) -> Vector2<f64> {
        Vector2::new(self.heading.cos(), self.heading.sin())
    }

    /// Signed (along-track, cross-track) offset of `p` in the docking frame.
    pub fn offsets(&self, p: &Vector2<f64>) -> (f64, f64) {
        let e = p - self.position;
        let a = self.axis();
        (e.dot(&a), a.x * e.y - a.y * e.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceState {
    pub phase: GuidancePhase,
    /// Time the current phase was entered (s).
    pub entered_at: f64,
}

impl GuidanceState {
    pub fn new(time: f64) -> Self {
        Self {
            phase: GuidancePhase::Settle,
            entered_at: time,
        }
    }
}

/// What guidance sees of the chaser at one command instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceInput {
    pub time: f64,
    pub position: Vector2<f64>,
    pub body_velocity: Vector2<f64>,
    pub heading: f64,
    pub rate: f64,
    /// Trace of the estimated position covariance (m^2).
    pub position_cov_trace: f64,
    pub vision_locked: bool,
}

/// One guidance step: the (possibly advanced) phase and the command to hold
/// until the next step.
pub fn step_guidance(
    state: &GuidanceState,
    input: &GuidanceInput,
    target: &DockTarget,
    params: &ModuleParams,
    cfg: &GuidanceConfig,
) -> (GuidanceState, ThrusterCommand) {
    let phase = next_phase(state, input, target, cfg);
    let next = if phase == state.phase {
        *state
    } else {
        GuidanceState {
            phase,
            entered_at: input.time,
        }
    };
    (next, phase_command(phase, input, target, params, cfg))
}

fn next_phase(
    state: &GuidanceState,
    input: &GuidanceInput,
    target: &DockTarget,
    cfg: &GuidanceConfig,
) -> GuidancePhase {
    use GuidancePhase::*;
    let phase = state.phase;
    if phase.is_final() {
        return phase;
    }
    let finite = input.position.iter().chain(input.body_velocity.iter()).all(|v| v.is_finite())
        && input.heading.is_finite()
        && input.position_cov_trace.is_finite();
    if !finite || (phase != Settle && input.position_cov_trace > cfg.covariance_ceiling) {
        return Abort;
    }
    let to_target = target.position - input.position;
    let range = to_target.norm();
    let heading_to_dock = wrap_angle(target.heading - input.heading).abs();
    match phase {
        Settle if input.position_cov_trace < cfg.settle_trace => AcquireLos,
        AcquireLos if los_heading_error(input, target, cfg).abs() < cfg.los_deadband => LosClose,
        LosClose if cfg.terminal_enabled && range < cfg.handover_radius => TerminalLock,
        TerminalLock if input.vision_locked => Align,
        TerminalLock if input.time - state.entered_at > cfg.lock_timeout => Abort,
        Align => {
            let (_, cross) = target.offsets(&input.position);
            if cross.abs() < cfg.align_cross_track && heading_to_dock < cfg.heading_bound {
                FinalApproach
            } else {
                Align
            }
        }
        FinalApproach
            if range < cfg.dock_radius
                && heading_to_dock < cfg.heading_bound
                && input.body_velocity.norm() < cfg.dock_speed =>
        {
            Docked
        }
        p => p,
    }
}

/// Heading error towards the target; zero once inside the hold range,
/// where the line of sight is ill-defined.
fn los_heading_error(input: &GuidanceInput, target: &DockTarget, cfg: &GuidanceConfig) -> f64 {
    let d = target.position - input.position;
    if d.norm() < cfg.los_heading_hold {
        0.0
    } else {
        wrap_angle(d.y.atan2(d.x) - input.heading)
    }
}

fn phase_command(
    phase: GuidancePhase,
    input: &GuidanceInput,
    target: &DockTarget,
    params: &ModuleParams,
    cfg: &GuidanceConfig,
) -> ThrusterCommand {
    use GuidancePhase::*;
    let standoff = target.position - target.axis() * cfg.standoff;
    let (goal, speed, heading_err) = match phase {
        Settle | Docked | Abort => return ThrusterCommand::zero(),
        AcquireLos => {
            let torque = heading_torque(los_heading_error(input, target, cfg), input.rate, params, cfg);
            return los_command(&BodyWrench { force: Vector2::zeros(), torque }, params);
        }
        LosClose => (Some(target.position), cfg.los_speed, los_heading_error(input, target, cfg)),
        TerminalLock => (None, 0.0, wrap_angle(target.heading - input.heading)),
        Align => (Some(standoff), cfg.terminal_speed, wrap_angle(target.heading - input.heading)),
        FinalApproach => (Some(target.position), cfg.terminal_speed, wrap_angle(target.heading - input.heading)),
    };
    let v_cmd = match goal {
        Some(g) => velocity_command(&(g - input.position), cfg.position_gain, speed),
        None => Vector2::zeros(),
    };
    let v_body = rot2(input.heading).transpose() * v_cmd;
    // proportional velocity loop plus friction feed-forward
    let accel = (v_body - input.body_velocity) * cfg.velocity_gain + v_body * params.friction_rate();
    let wrench = BodyWrench {
        force: accel * params.mass,
        torque: heading_torque(heading_err, input.rate, params, cfg),
    };
    los_command(&wrench, params)
}

/// Velocity towards `error` proportional to its size, capped at `limit`.
pub fn velocity_command(error: &Vector2<f64>, gain: f64, limit: f64) -> Vector2<f64> {
    let n = error.norm();
    if n == 0.0 {
        return Vector2::zeros();
    }
    error * gain.min(limit / n)
}

fn heading_torque(error: f64, rate: f64, params: &ModuleParams, cfg: &GuidanceConfig) -> f64 {
    params.inertia * (cfg.heading_gain * error - cfg.rate_gain * rate)
}

/// Maps a desired body wrench to duties through the inverse of the nozzle
/// allocation, saturating by uniform scaling so the wrench direction is
/// kept and the largest duty is at most one.
pub fn los_command(wrench: &BodyWrench, params: &ModuleParams) -> ThrusterCommand {
    let w = params.layout.wrench_matrix() * params.nozzle_thrust;
    let target = Vector3::new(wrench.force.x, wrench.force.y, wrench.torque);
    if !target.iter().all(|v| v.is_finite()) || target == Vector3::zeros() {
        return ThrusterCommand::zero();
    }
    let mut duty = allocate(&w, &target);
    let max = duty.max();
    if max > 1.0 {
        duty /= max;
    }
    let mut out = [0.0; NOZZLE_COUNT];
    for (o, d) in out.iter_mut().zip(duty.iter()) {
        // round-off residue from the null-space shift is not a firing
        *o = if *d > 1e-12 { d.min(1.0) } else { 0.0 };
    }
    ThrusterCommand::from_duty(out)
}

/// Least-norm duties producing `target`, shifted along the non-negative
/// null direction of the allocation so no duty is negative.
fn allocate(w: &Matrix3x4<f64>, target: &Vector3<f64>) -> Vector4<f64> {
    let Ok(pinv) = w.pseudo_inverse(1e-12) else {
        return Vector4::zeros();
    };
    let mut duty = pinv * target;
    if let Some(n) = null_direction(w) {
        let shift = duty
            .iter()
            .zip(n.iter())
            .map(|(d, k)| -d / k)
            .fold(f64::NEG_INFINITY, f64::max);
        if shift > 0.0 {
            duty += n * shift;
        }
    }
    duty.map(|d| d.max(0.0))
}

/// Unit null vector of the allocation with all components positive, if
/// the layout has one.
fn null_direction(w: &Matrix3x4<f64>) -> Option<Vector4<f64>> {
    let mut m = nalgebra::Matrix4::zeros();
    m.fixed_view_mut::<3, 4>(0, 0).copy_from(w);
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut n: Vector4<f64> = v_t.row(idx).transpose();
    if n.sum() < 0.0 {
        n = -n;
    }
    n.iter().all(|v| *v > 1e-9).then_some(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(position: Vector2<f64>, heading: f64) -> GuidanceInput {
        GuidanceInput {
            time: 0.0,
            position,
            body_velocity: Vector2::zeros(),
            heading,
            rate: 0.0,
            position_cov_trace: 1e-4,
            vision_locked: false,
        }
    }

    fn target() -> DockTarget {
        DockTarget {
            position: Vector2::new(1.0, 0.5),
            heading: 0.0,
        }
    }

    #[test]
    fn zero_wrench_gives_zero_duties() {
        let c = los_command(&BodyWrench::default(), &ModuleParams::default());
        assert!(c.is_zero());
    }

    #[test]
    fn forward_force_fires_forward_pair_only() {
        let p = ModuleParams::default();
        let c = los_command(
            &BodyWrench {
                force: Vector2::new(0.05, 0.0),
                torque: 0.0,
            },
            &p,
        );
        assert!(c.duty[0] > 0.0 && c.duty[1] > 0.0);
        assert_eq!(c.duty[2], 0.0);
        assert_eq!(c.duty[3], 0.0);
        // the allocation reproduces the requested wrench
        let w = crate::dynamics::thruster_forces(&c, &p);
        assert!((w.force - Vector2::new(0.05, 0.0)).norm() < 1e-12);
        assert!(w.torque.abs() < 1e-12);
    }

    #[test]
    fn large_request_saturates_at_exactly_one() {
        let c = los_command(
            &BodyWrench {
                force: Vector2::new(1e6, 3e5),
                torque: -2e3,
            },
            &ModuleParams::default(),
        );
        let max = c.duty.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert!(c.duty.iter().all(|d| (0.0..=1.0).contains(d)));
    }

    #[test]
    fn acquire_los_is_pure_torque() {
        let s = GuidanceState {
            phase: GuidancePhase::AcquireLos,
            entered_at: 0.0,
        };
        // target straight behind
        let i = input(Vector2::new(2.0, 0.5), 0.0);
        let (next, cmd) = step_guidance(&s, &i, &target(), &ModuleParams::default(), &GuidanceConfig::default());
        assert_eq!(next.phase, GuidancePhase::AcquireLos);
        let w = crate::dynamics::thruster_forces(&cmd, &ModuleParams::default());
        assert!(w.force.norm() < 1e-12);
        assert!(w.torque.abs() > 0.0);
    }

    #[test]
    fn aligned_at_target_docks_with_zero_command() {
        let s = GuidanceState {
            phase: GuidancePhase::FinalApproach,
            entered_at: 0.0,
        };
        let i = input(target().position, 0.0);
        let (next, cmd) = step_guidance(&s, &i, &target(), &ModuleParams::default(), &GuidanceConfig::default());
        assert_eq!(next.phase, GuidancePhase::Docked);
        assert!(cmd.is_zero());
    }

    #[test]
    fn settle_waits_for_covariance() {
        let cfg = GuidanceConfig::default();
        let s = GuidanceState::new(0.0);
        let mut i = input(Vector2::zeros(), 0.0);
        i.position_cov_trace = 0.2;
        let (n, cmd) = step_guidance(&s, &i, &target(), &ModuleParams::default(), &cfg);
        assert_eq!(n.phase, GuidancePhase::Settle);
        assert!(cmd.is_zero());
        i.position_cov_trace = 0.005;
        let (n, _) = step_guidance(&s, &i, &target(), &ModuleParams::default(), &cfg);
        assert_eq!(n.phase, GuidancePhase::AcquireLos);
    }

    #[test]
    fn lock_timeout_aborts() {
        let cfg = GuidanceConfig::default();
        let s = GuidanceState {
            phase: GuidancePhase::TerminalLock,
            entered_at: 0.0,
        };
        let mut i = input(target().position - Vector2::new(0.05, 0.0), 0.0);
        i.time = 10.5;
        let (n, cmd) = step_guidance(&s, &i, &target(), &ModuleParams::default(), &cfg);
        assert_eq!(n.phase, GuidancePhase::Abort);
        assert_eq!(n.entered_at, 10.5);
        assert!(cmd.is_zero());
    }

    #[test]
    fn phase_names_round_trip() {
        for p in GuidancePhase::ALL {
            assert_eq!(p.name().parse::<GuidancePhase>().unwrap(), p);
        }
        assert!(GuidancePhase::Settle.allows(GuidancePhase::AcquireLos));
        assert!(!GuidancePhase::Settle.allows(GuidancePhase::LosClose));
        assert!(GuidancePhase::Align.allows(GuidancePhase::Abort));
        assert!(!GuidancePhase::Docked.allows(GuidancePhase::Abort));
    }
}
