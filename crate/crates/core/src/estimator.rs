//! Discrete extended Kalman filter over inertial position and body-frame
//! velocity.
//!
//! Heading and yaw rate come straight from the AHRS (or from vision once it
//! locks) and are treated as known inputs; the stochastic state is only
//! `zeta = (x, y, rho_x, rho_y)`. Accelerometer specific force observes the
//! body velocity through friction, UWB ranges observe position, and the
//! vision pipeline supplies a planar position fix near the target.
//!
//! Every update uses the Joseph form and re-symmetrises the covariance.
//! Range and vision updates are gated on the squared Mahalanobis distance of
//! their innovation; a gated-out measurement leaves the state untouched.

use nalgebra::{Cholesky, Matrix2, Matrix4, SMatrix, SVector, Vector2, Vector4};

use crate::dynamics::{BodyWrench, ModuleParams};
use crate::error::{Error, Result};
use crate::geometry::{is_spd, rot2, symmetrize};
use crate::sensors::RangeMeasurement;

pub type StateVector = Vector4<f64>;
pub type Covariance = Matrix4<f64>;

/// Tolerance on `|P - P^T|` used by every health check.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Upper quantile of chi-square with one degree of freedom at 99.99 %.
pub const GATE_CHI2_1DOF: f64 = 15.14;
/// Upper quantile of chi-square with two degrees of freedom at 99.99 %.
pub const GATE_CHI2_2DOF: f64 = 18.42;

const MAX_SUBSTEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Accelerometer noise variance per axis (m^2/s^4).
    pub accel_var: Vector2<f64>,
    /// UWB range noise variance (m^2).
    pub range_var: f64,
    /// Floor on the vision pose covariance: x, y (m^2) and heading (rad^2).
    pub vision_var_floor: [f64; 3],
    /// Acceleration-level process noise per body axis (m^2/s^4), held
    /// over one `process_noise_period`.
    pub process_accel_var: Vector2<f64>,
    /// Interval the process noise variance refers to (s); the IMU period.
    pub process_noise_period: f64,
    pub range_gate: f64,
    pub vision_gate: f64,
    pub accel_gate: f64,
    pub gating_enabled: bool,
    pub accel_updates: bool,
    /// Initial covariance inflation after a range silence.
    pub underweight_factor: f64,
    /// Number of accepted ranges over which the inflation anneals to one.
    pub underweight_count: u32,
    /// Silence longer than this (s) triggers under-weighting.
    pub underweight_gap: f64,
    /// UWB antenna position in the body frame (m).
    pub antenna_offset: Vector2<f64>,
    pub initial_var: StateVector,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let g = 9.81;
        Self {
            accel_var: Vector2::repeat((0.05 * g) * (0.05 * g)),
            range_var: 0.08 * 0.08,
            vision_var_floor: [0.001, 0.001, 0.00225],
            process_accel_var: Vector2::repeat(8e-4),
            process_noise_period: 0.01,
            range_gate: GATE_CHI2_1DOF,
            vision_gate: GATE_CHI2_2DOF,
            accel_gate: GATE_CHI2_2DOF,
            gating_enabled: true,
            accel_updates: true,
            underweight_factor: 4.0,
            underweight_count: 5,
            underweight_gap: 0.5,
            antenna_offset: Vector2::zeros(),
            initial_var: Vector4::new(0.25, 0.25, 0.01, 0.01),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.accel_var.iter().all(|v| *v > 0.0)
            && self.range_var > 0.0
            && self.vision_var_floor.iter().all(|v| *v > 0.0)
            && self.process_accel_var.iter().all(|v| *v >= 0.0)
            && self.process_noise_period > 0.0
            && self.initial_var.iter().all(|v| *v > 0.0);
        if !positive {
            return Err(Error::InvalidArgument(
                "filter covariances must be positive definite".into(),
            ));
        }
        if !(self.range_gate > 0.0 && self.vision_gate > 0.0 && self.accel_gate > 0.0) {
            return Err(Error::InvalidArgument("gates must be positive".into()));
        }
        if !(self.underweight_factor >= 1.0) || !(self.underweight_gap > 0.0) {
            return Err(Error::InvalidArgument(
                "under-weighting factor must be >= 1 and its gap positive".into(),
            ));
        }
        Ok(())
    }
}

/// Heading, yaw rate and thruster wrench held over a prediction interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictInputs {
    /// Heading at the start of the interval.
    pub heading: f64,
    pub rate: f64,
    pub wrench: BodyWrench,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct AnchorTrack {
    last_accepted: Option<f64>,
    /// Position within an under-weighting sequence, if one is running.
    reacquire: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub accepted: bool,
    /// Squared Mahalanobis distance of the innovation.
    pub d2: f64,
    /// The measurement could not be linearised (e.g. anchor on antenna).
    pub degenerate: bool,
    /// Measurement covariance inflation used for this update.
    pub weight: f64,
}

impl UpdateOutcome {
    fn degenerate() -> Self {
        Self {
            accepted: false,
            d2: f64::NAN,
            degenerate: true,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub mean: StateVector,
    pub cov: Covariance,
    pub time: f64,
    anchors: Vec<AnchorTrack>,
}

impl EstimatorState {
    pub fn new(mean: StateVector, cov: Covariance, time: f64, anchor_count: usize) -> Self {
        Self {
            mean,
            cov,
            time,
            anchors: vec![AnchorTrack::default(); anchor_count],
        }
    }

    /// Starts from a position fix at rest with the configured initial
    /// covariance; every anchor counts as freshly heard at `time`.
    pub fn from_fix(position: Vector2<f64>, time: f64, anchor_count: usize, cfg: &FilterConfig) -> Self {
        let mut s = Self::new(
            Vector4::new(position.x, position.y, 0.0, 0.0),
            Matrix4::from_diagonal(&cfg.initial_var),
            time,
            anchor_count,
        );
        for a in &mut s.anchors {
            a.last_accepted = Some(time);
        }
        s
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    pub fn body_velocity(&self) -> Vector2<f64> {
        Vector2::new(self.mean[2], self.mean[3])
    }

    pub fn position_cov(&self) -> Matrix2<f64> {
        self.cov.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn is_healthy(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && is_spd(&self.cov, SYMMETRY_TOL)
    }

    /// Propagates mean and covariance over `dt` seconds.
    pub fn predict(
        &mut self,
        inputs: &PredictInputs,
        params: &ModuleParams,
        cfg: &FilterConfig,
        dt: f64,
    ) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "prediction interval must be positive, got {dt}"
            )));
        }
        let (mean, phi) = propagate(&self.mean, inputs, params, dt);
        let q = process_noise(inputs.heading, dt, &(cfg.process_accel_var * cfg.process_noise_period));
        let mut cov = phi * self.cov * phi.transpose() + q;
        symmetrize(&mut cov);
        if !is_spd(&cov, SYMMETRY_TOL) {
            return Err(Error::NotPositiveDefinite("prediction"));
        }
        self.mean = mean;
        self.cov = cov;
        self.time += dt;
        Ok(())
    }

    pub fn update_accel(
        &mut self,
        z: &Vector2<f64>,
        wrench: &BodyWrench,
        params: &ModuleParams,
        cfg: &FilterConfig,
    ) -> Result<UpdateOutcome> {
        let predicted = accel_model(&self.mean, wrench, params);
        let h = accel_jacobian(params);
        let r = Matrix2::from_diagonal(&cfg.accel_var);
        self.gated_update(z - predicted, h, r, cfg.gating_enabled.then_some(cfg.accel_gate), 1.0)
    }

    /// Scalar range update against one anchor, with gating and
    /// post-silence under-weighting.
    pub fn update_range(
        &mut self,
        meas: &RangeMeasurement,
        anchor: &Vector2<f64>,
        heading: f64,
        cfg: &FilterConfig,
    ) -> Result<UpdateOutcome> {
        let Some((predicted, h)) = range_model(&self.mean, anchor, &cfg.antenna_offset, heading)
        else {
            return Ok(UpdateOutcome::degenerate());
        };
        let track = self
            .anchors
            .get(meas.anchor)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown anchor {}", meas.anchor)))?;
        let silent = match track.last_accepted {
            Some(t) => meas.time - t > cfg.underweight_gap,
            None => true,
        };
        let reacquire = match track.reacquire {
            Some(k) => Some(k),
            None if silent && cfg.underweight_count > 0 => Some(0),
            None => None,
        };
        let weight = reacquire.map_or(1.0, |k| {
            let n = cfg.underweight_count as f64;
            cfg.underweight_factor.powf((n - k as f64) / n)
        });
        let innovation = SVector::<f64, 1>::new(meas.range - predicted);
        let r = SMatrix::<f64, 1, 1>::new(cfg.range_var);
        let outcome = self.gated_update(
            innovation,
            h,
            r,
            cfg.gating_enabled.then_some(cfg.range_gate),
            weight,
        )?;
        let track = &mut self.anchors[meas.anchor];
        track.reacquire = reacquire;
        if outcome.accepted {
            track.last_accepted = Some(meas.time);
            track.reacquire = reacquire
                .map(|k| k + 1)
                .filter(|k| *k < cfg.underweight_count);
        }
        Ok(outcome)
    }

    /// Planar position fix from the vision pipeline. The heading part of the
    /// vision pose is consumed by the caller as the attitude source.
    pub fn update_vision_position(
        &mut self,
        position: &Vector2<f64>,
        position_cov: &Matrix2<f64>,
        cfg: &FilterConfig,
    ) -> Result<UpdateOutcome> {
        let mut h = SMatrix::<f64, 2, 4>::zeros();
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        let innovation = position - self.position();
        self.gated_update(
            innovation,
            h,
            *position_cov,
            cfg.gating_enabled.then_some(cfg.vision_gate),
            1.0,
        )
    }

    fn gated_update<const M: usize>(
        &mut self,
        innovation: SVector<f64, M>,
        h: SMatrix<f64, M, 4>,
        r: SMatrix<f64, M, M>,
        gate: Option<f64>,
        weight: f64,
    ) -> Result<UpdateOutcome> {
        let r = r * weight;
        let s = h * self.cov * h.transpose() + r;
        let d2 = mahalanobis_sq(&innovation, &s)?;
        let accepted = gate.is_none_or(|g| d2 <= g);
        if accepted {
            let (mean, cov) = joseph_update(&self.mean, &self.cov, &innovation, &h, &r, &s)?;
            self.mean = mean;
            self.cov = cov;
        }
        Ok(UpdateOutcome {
            accepted,
            d2,
            degenerate: false,
            weight,
        })
    }
}

/// Squared Mahalanobis distance `innov^T S^-1 innov`.
pub fn mahalanobis_sq<const M: usize>(
    innovation: &SVector<f64, M>,
    s: &SMatrix<f64, M, M>,
) -> Result<f64> {
    let chol = Cholesky::new(*s).ok_or(Error::SingularInnovation)?;
    let w = chol.solve(innovation);
    Ok(innovation.dot(&w).max(0.0))
}

fn joseph_update<const M: usize>(
    mean: &StateVector,
    cov: &Covariance,
    innovation: &SVector<f64, M>,
    h: &SMatrix<f64, M, 4>,
    r: &SMatrix<f64, M, M>,
    s: &SMatrix<f64, M, M>,
) -> Result<(StateVector, Covariance)> {
    let chol = Cholesky::new(*s).ok_or(Error::SingularInnovation)?;
    // K = P H^T S^-1, solved as S K^T = H P
    let gain = chol.solve(&(h * cov)).transpose();
    let ikh = Covariance::identity() - gain * h;
    let mut p = ikh * cov * ikh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut p);
    if !is_spd(&p, SYMMETRY_TOL) {
        return Err(Error::NotPositiveDefinite("measurement update"));
    }
    Ok((mean + gain * innovation, p))
}

/// Continuous dynamics `zeta_dot = A(s) zeta + b(s)` with heading
/// `psi0 + omega s`.
fn system(inputs: &PredictInputs, params: &ModuleParams, s: f64) -> (Matrix4<f64>, StateVector) {
    let k = params.friction_rate();
    let w = inputs.rate;
    let r = rot2(inputs.heading + w * s);
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<2, 2>(0, 2).copy_from(&r);
    // -k rho - omega x rho
    a[(2, 2)] = -k;
    a[(2, 3)] = w;
    a[(3, 2)] = -w;
    a[(3, 3)] = -k;
    let f = inputs.wrench.force / params.mass;
    (a, Vector4::new(0.0, 0.0, f.x, f.y))
}

/// Discrete propagation map of the filter mean and its exact Jacobian.
///
/// The dynamics are affine in the state for known heading history, so the
/// RK4 map is affine too and its Jacobian is the RK4 map of the homogeneous
/// part applied to the identity.
pub fn propagate(
    mean: &StateVector,
    inputs: &PredictInputs,
    params: &ModuleParams,
    dt: f64,
) -> (StateVector, Matrix4<f64>) {
    let steps = (dt / MAX_SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / steps as f64;
    let mut x = *mean;
    let mut phi = Matrix4::identity();
    let eye = Matrix4::<f64>::identity();
    for i in 0..steps {
        let s0 = i as f64 * h;
        let (a0, b0) = system(inputs, params, s0);
        let (am, bm) = system(inputs, params, s0 + 0.5 * h);
        let (a1, b1) = system(inputs, params, s0 + h);

        let k1 = a0 * x + b0;
        let k2 = am * (x + k1 * (0.5 * h)) + bm;
        let k3 = am * (x + k2 * (0.5 * h)) + bm;
        let k4 = a1 * (x + k3 * h) + b1;
        x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);

        let j1 = a0;
        let j2 = am * (eye + j1 * (0.5 * h));
        let j3 = am * (eye + j2 * (0.5 * h));
        let j4 = a1 * (eye + j3 * h);
        let step = eye + (j1 + 2.0 * j2 + 2.0 * j3 + j4) * (h / 6.0);
        phi = step * phi;
    }
    (x, phi)
}

/// White body-frame acceleration noise of spectral density `density`
/// (m^2/s^3) integrated into position and body velocity over `dt`.
///
/// The continuous form makes the noise added over an interval independent
/// of how the interval is split between measurement times. With the density
/// set to variance times period it equals the piecewise-constant model over
/// exactly one period in the velocity block.
pub fn process_noise(heading: f64, dt: f64, density: &Vector2<f64>) -> Matrix4<f64> {
    let r = rot2(heading);
    let qd = Matrix2::from_diagonal(density);
    let mut q = Matrix4::zeros();
    q.fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&(r * qd * r.transpose() * (dt.powi(3) / 3.0)));
    let cross = r * qd * (dt * dt / 2.0);
    q.fixed_view_mut::<2, 2>(0, 2).copy_from(&cross);
    q.fixed_view_mut::<2, 2>(2, 0).copy_from(&cross.transpose());
    q.fixed_view_mut::<2, 2>(2, 2).copy_from(&(qd * dt));
    q
}

/// Predicted specific force for the estimated body velocity.
pub fn accel_model(mean: &StateVector, wrench: &BodyWrench, params: &ModuleParams) -> Vector2<f64> {
    wrench.force / params.mass - params.friction_rate() * Vector2::new(mean[2], mean[3])
}

pub fn accel_jacobian(params: &ModuleParams) -> SMatrix<f64, 2, 4> {
    let k = params.friction_rate();
    let mut h = SMatrix::<f64, 2, 4>::zeros();
    h[(0, 2)] = -k;
    h[(1, 3)] = -k;
    h
}

/// Predicted range and its Jacobian; `None` when the antenna sits on the
/// anchor and the gradient is undefined.
pub fn range_model(
    mean: &StateVector,
    anchor: &Vector2<f64>,
    antenna_offset: &Vector2<f64>,
    heading: f64,
) -> Option<(f64, SMatrix<f64, 1, 4>)> {
    let antenna = Vector2::new(mean[0], mean[1]) + rot2(heading) * antenna_offset;
    let diff = antenna - anchor;
    let range = diff.norm();
    if range < 1e-9 {
        return None;
    }
    let u = diff / range;
    Some((range, SMatrix::<f64, 1, 4>::new(u.x, u.y, 0.0, 0.0)))
}

/// Least-squares planar position from ranges to at least three anchors.
///
/// A linear solve of the differenced range equations seeds a few
/// Gauss-Newton iterations on the ranges themselves.
pub fn trilaterate(anchors: &[Vector2<f64>], ranges: &[(usize, f64)]) -> Result<Vector2<f64>> {
    if ranges.len() < 3 {
        return Err(Error::InvalidArgument(
            "trilateration needs at least three ranges".into(),
        ));
    }
    let lookup = |i: usize| {
        anchors
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown anchor {i}")))
    };
    let (i0, r0) = ranges[0];
    let a0 = lookup(i0)?;
    let mut ata = Matrix2::zeros();
    let mut atb = Vector2::zeros();
    for &(i, r) in &ranges[1..] {
        let a = lookup(i)?;
        let row = 2.0 * (a - a0);
        let rhs = r0 * r0 - r * r + a.norm_squared() - a0.norm_squared();
        ata += row * row.transpose();
        atb += row * rhs;
    }
    let mut x = ata
        .try_inverse()
        .map(|inv| inv * atb)
        .ok_or(Error::DegenerateGeometry("anchors used for the fix are collinear"))?;
    for _ in 0..10 {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for &(i, r) in ranges {
            let d = x - lookup(i)?;
            let n = d.norm();
            if n < 1e-9 {
                continue;
            }
            let j = d / n;
            jtj += j * j.transpose();
            jtr += j * (r - n);
        }
        let Some(step) = jtj.try_inverse().map(|inv| inv * jtr) else {
            break;
        };
        x += step;
        if step.norm() < 1e-12 {
            break;
        }
    }
    Ok(x)
}
