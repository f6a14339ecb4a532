//! Ground-truth planar rigid-body dynamics of a thruster-actuated module
//! sliding on ball transfers.
//!
//! State is carried as inertial position, heading, body-frame velocity and
//! yaw rate. In body velocity the translational equation reads
//!
//! ```text
//! rho_dot = f / m - mu g rho - omega x rho
//! ```
//!
//! where the last term is the transport rate from differentiating
//! `R^T x_dot`. Rotation is damped by an independent viscous torque.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::geometry::{cross2, rot2, wrap_angle};

pub const NOZZLE_COUNT: usize = 4;

/// One cold-gas nozzle: the body-frame direction of the reaction force it
/// produces and a point on its line of action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nozzle {
    pub direction: Vector2<f64>,
    pub position: Vector2<f64>,
}

impl Nozzle {
    /// Torque per newton of thrust.
    pub fn lever(&self) -> f64 {
        cross2(&self.position, &self.direction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrusterLayout {
    pub nozzles: [Nozzle; NOZZLE_COUNT],
}

impl ThrusterLayout {
    /// Four nozzles in an X: reaction forces along the body diagonals, each
    /// line of action offset from the centre of mass by `arm`.
    ///
    /// Index 0 and 1 push the body forward (+x), 2 and 3 push it back;
    /// 0 and 2 push left (+y), 1 and 3 push right. Nozzles 0 and 3 yaw
    /// positive, 1 and 2 yaw negative, so every pure body wrench axis is
    /// produced by exactly one nozzle pair.
    pub fn x_configuration(arm: f64) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let make = |dx: f64, dy: f64, yaw_sign: f64| {
            let direction = Vector2::new(dx * h, dy * h);
            // closest point of the line of action to the centre, chosen so
            // that position x direction = yaw_sign * arm
            let position = Vector2::new(direction.y, -direction.x) * (yaw_sign * arm);
            Nozzle {
                direction,
                position,
            }
        };
        Self {
            nozzles: [
                make(1.0, 1.0, 1.0),
                make(1.0, -1.0, -1.0),
                make(-1.0, 1.0, -1.0),
                make(-1.0, -1.0, 1.0),
            ],
        }
    }

    /// Columns are the unit-duty wrench `(f_x, f_y, tau)` of each nozzle per
    /// newton of thrust.
    pub fn wrench_matrix(&self) -> nalgebra::Matrix3x4<f64> {
        let mut m = nalgebra::Matrix3x4::zeros();
        for (i, n) in self.nozzles.iter().enumerate() {
            m[(0, i)] = n.direction.x;
            m[(1, i)] = n.direction.y;
            m[(2, i)] = n.lever();
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleParams {
    pub mass: f64,
    /// Principal moment of inertia about the plane normal (kg m^2).
    pub inertia: f64,
    /// Velocity-proportional friction coefficient (dimensionless).
    pub friction: f64,
    pub gravity: f64,
    /// Thrust of a single nozzle at full duty (N).
    pub nozzle_thrust: f64,
    /// Viscous yaw damping (N m s).
    pub rot_damping: f64,
    pub layout: ThrusterLayout,
}

/// Default nozzle lever arm about the centre of mass (m).
pub const DEFAULT_NOZZLE_ARM: f64 = 0.035;

impl Default for ModuleParams {
    fn default() -> Self {
        let inertia = 4.987689e-3;
        Self {
            mass: 0.795,
            inertia,
            friction: 0.015,
            gravity: 9.81,
            nozzle_thrust: 0.1,
            // 1 rad/s spin halves in 5 s
            rot_damping: std::f64::consts::LN_2 * inertia / 5.0,
            layout: ThrusterLayout::x_configuration(DEFAULT_NOZZLE_ARM),
        }
    }
}

impl ModuleParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.mass > 0.0, "mass must be positive"),
            (self.inertia > 0.0, "inertia must be positive"),
            (self.friction >= 0.0, "friction must be non-negative"),
            (self.gravity > 0.0, "gravity must be positive"),
            (self.nozzle_thrust >= 0.0, "nozzle thrust must be non-negative"),
            (self.rot_damping >= 0.0, "rotational damping must be non-negative"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidArgument(msg.into()));
            }
        }
        Ok(())
    }

    /// Friction decay rate `mu g` of body velocity (1/s).
    pub fn friction_rate(&self) -> f64 {
        self.friction * self.gravity
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub position: Vector2<f64>,
    /// Heading in (-pi, pi].
    pub heading: f64,
    pub body_velocity: Vector2<f64>,
    pub rate: f64,
}

impl Default for BodyState {
    fn default() -> Self {
        Self {
            position: Vector2::zeros(),
            heading: 0.0,
            body_velocity: Vector2::zeros(),
            rate: 0.0,
        }
    }
}

impl BodyState {
    pub fn rotation(&self) -> Matrix2<f64> {
        rot2(self.heading)
    }

    pub fn inertial_velocity(&self) -> Vector2<f64> {
        self.rotation() * self.body_velocity
    }

    pub fn kinetic_energy(&self, params: &ModuleParams) -> f64 {
        0.5 * params.mass * self.body_velocity.norm_squared()
            + 0.5 * params.inertia * self.rate * self.rate
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.heading.is_finite()
            && self.body_velocity.iter().all(|v| v.is_finite())
            && self.rate.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrusterCommand {
    pub duty: [f64; NOZZLE_COUNT],
    pub active: [bool; NOZZLE_COUNT],
}

impl ThrusterCommand {
    pub fn zero() -> Self {
        Self {
            duty: [0.0; NOZZLE_COUNT],
            active: [false; NOZZLE_COUNT],
        }
    }

    /// Command with every nozzle enabled; nozzles with zero duty are masked.
    pub fn from_duty(duty: [f64; NOZZLE_COUNT]) -> Self {
        Self {
            duty,
            active: duty.map(|d| d > 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duty.iter().all(|d| (0.0..=1.0).contains(d)) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "duty cycles must lie in [0, 1], got {:?}",
                self.duty
            )))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.duty
            .iter()
            .zip(self.active)
            .all(|(d, a)| !a || *d == 0.0)
    }
}

impl Default for ThrusterCommand {
    fn default() -> Self {
        Self::zero()
    }
}

/// Body-frame force and yaw torque.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyWrench {
    pub force: Vector2<f64>,
    pub torque: f64,
}

pub fn thruster_forces(cmd: &ThrusterCommand, params: &ModuleParams) -> BodyWrench {
    let mut wrench = BodyWrench::default();
    for ((nozzle, duty), active) in params.layout.nozzles.iter().zip(cmd.duty).zip(cmd.active) {
        if !active {
            continue;
        }
        let thrust = duty * params.nozzle_thrust;
        wrench.force += nozzle.direction * thrust;
        wrench.torque += nozzle.lever() * thrust;
    }
    wrench
}

/// Ball-transfer friction in the body frame, opposing the body velocity.
pub fn friction_force(state: &BodyState, params: &ModuleParams) -> Vector2<f64> {
    -params.friction * params.mass * params.gravity * state.body_velocity
}

#[derive(Clone, Copy)]
struct Deriv {
    position: Vector2<f64>,
    heading: f64,
    body_velocity: Vector2<f64>,
    rate: f64,
}

fn derivative(s: &BodyState, wrench: &BodyWrench, params: &ModuleParams) -> Deriv {
    let rho = s.body_velocity;
    let accel = (wrench.force + friction_force(s, params)) / params.mass;
    // -omega x rho for omega along e3
    let transport = Vector2::new(s.rate * rho.y, -s.rate * rho.x);
    Deriv {
        position: rot2(s.heading) * rho,
        heading: s.rate,
        body_velocity: accel + transport,
        rate: (wrench.torque - params.rot_damping * s.rate) / params.inertia,
    }
}

fn advance(s: &BodyState, d: &Deriv, h: f64) -> BodyState {
    BodyState {
        position: s.position + d.position * h,
        heading: s.heading + d.heading * h,
        body_velocity: s.body_velocity + d.body_velocity * h,
        rate: s.rate + d.rate * h,
    }
}

/// One fixed-step RK4 step of the truth dynamics under a held command.
pub fn step(
    state: &BodyState,
    cmd: &ThrusterCommand,
    params: &ModuleParams,
    dt: f64,
) -> Result<BodyState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let wrench = thruster_forces(cmd, params);
    let k1 = derivative(state, &wrench, params);
    let k2 = derivative(&advance(state, &k1, 0.5 * dt), &wrench, params);
    let k3 = derivative(&advance(state, &k2, 0.5 * dt), &wrench, params);
    let k4 = derivative(&advance(state, &k3, dt), &wrench, params);
    let w = dt / 6.0;
    Ok(BodyState {
        position: state.position
            + (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position) * w,
        heading: wrap_angle(
            state.heading + (k1.heading + 2.0 * k2.heading + 2.0 * k3.heading + k4.heading) * w,
        ),
        body_velocity: state.body_velocity
            + (k1.body_velocity
                + 2.0 * k2.body_velocity
                + 2.0 * k3.body_velocity
                + k4.body_velocity)
                * w,
        rate: state.rate + (k1.rate + 2.0 * k2.rate + 2.0 * k3.rate + k4.rate) * w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn single_nozzle(direction: Vector2<f64>, position: Vector2<f64>) -> ModuleParams {
        let idle = Nozzle {
            direction: Vector2::new(1.0, 0.0),
            position: Vector2::zeros(),
        };
        let mut p = ModuleParams::default();
        p.layout.nozzles = [
            Nozzle {
                direction,
                position,
            },
            idle,
            idle,
            idle,
        ];
        p
    }

    #[test]
    fn zero_duty_gives_zero_wrench() {
        let w = thruster_forces(&ThrusterCommand::zero(), &ModuleParams::default());
        assert_eq!(w, BodyWrench::default());
        let w = thruster_forces(
            &ThrusterCommand::from_duty([0.0; 4]),
            &ModuleParams::default(),
        );
        assert_eq!(w, BodyWrench::default());
    }

    #[test]
    fn single_forward_nozzle() {
        let p = single_nozzle(Vector2::new(1.0, 0.0), Vector2::zeros());
        let w = thruster_forces(&ThrusterCommand::from_duty([1.0, 0.0, 0.0, 0.0]), &p);
        assert_eq!(w.force, Vector2::new(0.1, 0.0));
        assert_eq!(w.torque, 0.0);
    }

    #[test]
    fn opposing_pair_is_pure_torque() {
        let d = 0.04;
        let duty = 0.6;
        let mut p = ModuleParams::default();
        let a = Nozzle {
            direction: Vector2::new(-1.0, 0.0),
            position: Vector2::new(0.0, d),
        };
        let b = Nozzle {
            direction: Vector2::new(1.0, 0.0),
            position: Vector2::new(0.0, -d),
        };
        p.layout.nozzles = [a, b, a, b];
        let cmd = ThrusterCommand {
            duty: [duty, duty, 0.0, 0.0],
            active: [true, true, false, false],
        };
        let w = thruster_forces(&cmd, &p);
        // superposition of the two single-nozzle wrenches
        let sum: f64 = [a, b]
            .iter()
            .map(|n| (n.position.x * n.direction.y - n.position.y * n.direction.x) * duty * 0.1)
            .sum();
        assert!(w.force.norm() < 1e-15);
        assert!(close(w.torque, sum, 1e-15));
        assert!(close(w.torque, 2.0 * duty * 0.1 * d, 1e-15));
    }

    #[test]
    fn masked_nozzles_do_not_fire() {
        let p = ModuleParams::default();
        let cmd = ThrusterCommand {
            duty: [1.0; 4],
            active: [false; 4],
        };
        assert_eq!(thruster_forces(&cmd, &p), BodyWrench::default());
    }

    #[test]
    fn x_configuration_pairs_are_pure() {
        let p = ModuleParams::default();
        let fwd = thruster_forces(&ThrusterCommand::from_duty([1.0, 1.0, 0.0, 0.0]), &p);
        assert!(fwd.force.x > 0.0 && fwd.force.y.abs() < 1e-15 && fwd.torque.abs() < 1e-15);
        let left = thruster_forces(&ThrusterCommand::from_duty([1.0, 0.0, 1.0, 0.0]), &p);
        assert!(left.force.y > 0.0 && left.force.x.abs() < 1e-15 && left.torque.abs() < 1e-15);
        let spin = thruster_forces(&ThrusterCommand::from_duty([1.0, 0.0, 0.0, 1.0]), &p);
        assert!(spin.force.norm() < 1e-15 && spin.torque > 0.0);
        assert!(close(spin.torque, 2.0 * 0.1 * DEFAULT_NOZZLE_ARM, 1e-15));
    }

    #[test]
    fn friction_opposes_motion() {
        let p = ModuleParams::default();
        let mut s = BodyState::default();
        assert_eq!(friction_force(&s, &p), Vector2::zeros());
        // 0.015 * 0.795 * 9.81
        let unit = 0.015 * 0.795 * 9.81;
        assert!(close(unit, 0.11698425, 1e-12));
        s.body_velocity = Vector2::new(1.0, 0.0);
        let f = friction_force(&s, &p);
        assert!(close(f.x, -0.11698425, 1e-12) && f.y == 0.0);
        s.body_velocity = Vector2::new(0.0, -2.0);
        let g = friction_force(&s, &p);
        assert!(g.x == 0.0 && close(g.y, 2.0 * unit, 1e-12));
    }

    #[test]
    fn step_rejects_non_positive_dt() {
        let p = ModuleParams::default();
        let s = BodyState::default();
        assert!(step(&s, &ThrusterCommand::zero(), &p, 0.0).is_err());
        assert!(step(&s, &ThrusterCommand::zero(), &p, -1e-3).is_err());
        assert!(step(&s, &ThrusterCommand::zero(), &p, f64::NAN).is_err());
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = ModuleParams::default();
        let s = BodyState {
            position: Vector2::new(0.3, -1.2),
            heading: 1.1,
            ..Default::default()
        };
        let n = step(&s, &ThrusterCommand::zero(), &p, 1e-3).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn coasting_speed_decays_exponentially() {
        let p = ModuleParams::default();
        let mut s = BodyState {
            body_velocity: Vector2::new(1.0, 0.0),
            ..Default::default()
        };
        let dt = 1e-3;
        let mut prev = 1.0;
        for k in 1..=5000 {
            s = step(&s, &ThrusterCommand::zero(), &p, dt).unwrap();
            let speed = s.body_velocity.norm();
            assert!(speed < prev);
            prev = speed;
            if k % 1000 == 0 {
                let t = k as f64 * dt;
                let expected = (-p.friction_rate() * t).exp();
                assert!(close(speed, expected, 1e-12), "t={t} {speed} {expected}");
            }
        }
    }

    #[test]
    fn constant_thrust_without_friction_is_parabolic() {
        let mut p = single_nozzle(Vector2::new(1.0, 0.0), Vector2::zeros());
        p.friction = 0.0;
        let cmd = ThrusterCommand::from_duty([1.0, 0.0, 0.0, 0.0]);
        let mut s = BodyState::default();
        let dt = 1e-3;
        for _ in 0..2000 {
            s = step(&s, &cmd, &p, dt).unwrap();
        }
        let t: f64 = 2.0;
        let expected = 0.5 * (0.1 / p.mass) * t * t;
        assert!(close(s.position.x, expected, 1e-12));
        assert!(s.position.y.abs() < 1e-15);
    }

    #[test]
    fn rotation_damping_halves_spin_in_five_seconds() {
        let p = ModuleParams::default();
        let mut s = BodyState {
            rate: 1.0,
            ..Default::default()
        };
        for _ in 0..5000 {
            s = step(&s, &ThrusterCommand::zero(), &p, 1e-3).unwrap();
            assert!(s.heading > -std::f64::consts::PI && s.heading <= std::f64::consts::PI);
        }
        assert!(close(s.rate, 0.5, 1e-9));
    }
}
