//! Built-in consistency checks: analytic Jacobians against central
//! differences, P3P round trips, gate calibration and covariance health.

use nalgebra::{Rotation3, SMatrix, Unit, Vector2, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::run::rng;
use super::{run_scenario, Mode, Scenario};
use crate::dynamics::{BodyWrench, ModuleParams, ThrusterCommand};
use crate::error::Result;
use crate::estimator::{accel_jacobian, accel_model, propagate, range_model, PredictInputs};
use crate::vision::ekf::{feature_jacobian, feature_model};
use crate::vision::{disambiguate, p3p_solve, Correspondence, PoseCandidate};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SelfCheckReport {
    pub checks: Vec<Check>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn below(&mut self, name: &str, value: f64, limit: f64) {
        self.checks.push(Check {
            name: name.into(),
            value,
            limit,
            passed: value < limit,
        });
    }
}

const FD_STEP: f64 = 1e-6;
pub const JACOBIAN_TOLERANCE: f64 = 1e-5;

/// Frobenius-relative difference of an analytic Jacobian from a numeric one.
fn relative_error<const R: usize, const C: usize>(
    analytic: &SMatrix<f64, R, C>,
    numeric: &SMatrix<f64, R, C>,
) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(f64::MIN_POSITIVE)
}

/// Central-difference Jacobian of `f` at `x`.
fn numeric_jacobian<const R: usize, const C: usize>(
    x: &SMatrix<f64, C, 1>,
    f: impl Fn(&SMatrix<f64, C, 1>) -> SMatrix<f64, R, 1>,
) -> SMatrix<f64, R, C> {
    let mut j = SMatrix::<f64, R, C>::zeros();
    for i in 0..C {
        let h = FD_STEP * x[i].abs().max(1.0);
        let mut hi = *x;
        let mut lo = *x;
        hi[i] += h;
        lo[i] -= h;
        j.set_column(i, &((f(&hi) - f(&lo)) / (2.0 * h)));
    }
    j
}

fn random_wrench(r: &mut ChaCha8Rng, params: &ModuleParams) -> BodyWrench {
    let duty = [(); 4].map(|_| r.random_range(0.0..=1.0));
    crate::dynamics::thruster_forces(&ThrusterCommand::from_duty(duty), params)
}

fn random_mean(r: &mut ChaCha8Rng) -> Vector4<f64> {
    Vector4::new(
        r.random_range(-3.0..3.0),
        r.random_range(-3.0..3.0),
        r.random_range(-0.3..0.3),
        r.random_range(-0.3..0.3),
    )
}

/// Worst relative error of the discrete transition Jacobian.
pub fn transition_jacobian_error(samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed, 0);
    let params = ModuleParams::default();
    (0..samples)
        .map(|_| {
            let mean = random_mean(&mut r);
            let inputs = PredictInputs {
                heading: r.random_range(-3.1..3.1),
                rate: r.random_range(-1.0..1.0),
                wrench: random_wrench(&mut r, &params),
            };
            let dt = r.random_range(0.001..0.05);
            let (_, phi) = propagate(&mean, &inputs, &params, dt);
            let num = numeric_jacobian(&mean, |x| propagate(x, &inputs, &params, dt).0);
            relative_error(&phi, &num)
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of the accelerometer measurement Jacobian.
pub fn accel_jacobian_error(samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed, 1);
    let params = ModuleParams::default();
    (0..samples)
        .map(|_| {
            let mean = random_mean(&mut r);
            let wrench = random_wrench(&mut r, &params);
            let num = numeric_jacobian(&mean, |x| accel_model(x, &wrench, &params));
            relative_error(&accel_jacobian(&params), &num)
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of the range measurement Jacobian.
pub fn range_jacobian_error(samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed, 2);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < samples {
        let mean = random_mean(&mut r);
        let anchor = Vector2::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let offset = Vector2::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
        let heading = r.random_range(-3.1..3.1);
        let Some((_, h)) = range_model(&mean, &anchor, &offset, heading) else {
            continue;
        };
        if (mean.xy() - anchor).norm() < 0.1 {
            continue;
        }
        let num = numeric_jacobian(&mean, |x| {
            SMatrix::<f64, 1, 1>::new(range_model(x, &anchor, &offset, heading).map_or(f64::NAN, |p| p.0))
        });
        worst = worst.max(relative_error(&h, &num));
        done += 1;
    }
    worst
}

/// Worst relative error of the feature measurement Jacobian.
pub fn vision_jacobian_error(samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed, 3);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < samples {
        let mut state = SMatrix::<f64, 10, 1>::zeros();
        for i in 0..4 {
            state[i] = r.random_range(-1.0..1.0);
        }
        if state.fixed_rows::<4>(0).norm() < 0.3 {
            continue;
        }
        state[4] = r.random_range(-0.2..0.2);
        state[5] = r.random_range(-0.2..0.2);
        state[6] = r.random_range(0.3..1.5);
        let p = Vector3::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
        let split = |s: &SMatrix<f64, 10, 1>| -> (Vector4<f64>, Vector3<f64>) {
            (s.fixed_rows::<4>(0).into_owned(), s.fixed_rows::<3>(4).into_owned())
        };
        let (q, t) = split(&state);
        let Some(h) = feature_jacobian(&q, &t, &p) else {
            continue;
        };
        let num = numeric_jacobian(&state, |s| {
            let (q, t) = split(s);
            feature_model(&q, &t, &p).unwrap_or(Vector2::repeat(f64::NAN))
        });
        worst = worst.max(relative_error(&h, &num));
        done += 1;
    }
    worst
}

/// Worst errors over noiseless P3P round trips with fourth-point
/// disambiguation.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct P3pRoundTrip {
    pub trials: usize,
    pub failures: usize,
    pub max_translation_error_m: f64,
    pub max_rotation_error_rad: f64,
    /// Largest `|R^T R - I|` over every returned candidate.
    pub max_orthonormality_error: f64,
}

pub fn p3p_round_trip(trials: usize, seed: u64) -> P3pRoundTrip {
    let mut r = rng(seed, 4);
    let mut out = P3pRoundTrip {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let axis = Unit::new_normalize(Vector3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ));
        let rotation = *Rotation3::from_axis_angle(&axis, r.random_range(-3.1..3.1)).matrix();
        let truth = PoseCandidate {
            rotation,
            translation: Vector3::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(0.4..2.0)),
            residual: 0.0,
        };
        // four points in a 10 cm box, all in front of the camera
        let points: Vec<Vector3<f64>> = (0..4)
            .map(|_| Vector3::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), r.random_range(-0.05..0.05)))
            .collect();
        let corr: Vec<Correspondence> = points
            .iter()
            .filter_map(|p| truth.project(p).map(|f| Correspondence { point: *p, feature: f }))
            .collect();
        if corr.len() < 4 {
            out.failures += 1;
            continue;
        }
        let Ok(candidates) = p3p_solve(&[corr[0], corr[1], corr[2]]) else {
            out.failures += 1;
            continue;
        };
        for c in &candidates {
            let e = (c.rotation.transpose() * c.rotation - nalgebra::Matrix3::identity()).abs().max();
            out.max_orthonormality_error = out.max_orthonormality_error.max(e);
        }
        let Ok(best) = disambiguate(&candidates, None, Some(&corr[3])) else {
            out.failures += 1;
            continue;
        };
        out.max_translation_error_m = out.max_translation_error_m.max((best.translation - truth.translation).norm());
        out.max_rotation_error_rad = out
            .max_rotation_error_rad
            .max(crate::geometry::rotation_angle_between(&best.rotation, &truth.rotation));
    }
    out
}

/// Open-loop, outlier-free scenario with the filter matched to the true
/// range noise, for gate calibration.
pub fn calibration_scenario(seed: u64, duration: f64) -> Scenario {
    let mut sc = Scenario {
        name: "gate-calibration".into(),
        mode: Mode::OpenLoop,
        seed,
        duration,
        ..Scenario::default()
    };
    sc.noise.uwb_outlier_prob = 0.0;
    sc.filter.range_var = sc.noise.uwb_inlier_sigma.powi(2);
    sc.initial.position = Vector2::new(1.0, 1.2);
    sc
}

/// Runs every check; `quick` trims sample counts for interactive use.
pub fn self_check(quick: bool) -> Result<SelfCheckReport> {
    let n = if quick { 20 } else { 100 };
    let mut report = SelfCheckReport::default();
    report.below("transition jacobian", transition_jacobian_error(n, 1), JACOBIAN_TOLERANCE);
    report.below("accelerometer jacobian", accel_jacobian_error(n, 2), JACOBIAN_TOLERANCE);
    report.below("range jacobian", range_jacobian_error(n, 3), JACOBIAN_TOLERANCE);
    report.below("feature jacobian", vision_jacobian_error(n, 4), JACOBIAN_TOLERANCE);

    let p3p = p3p_round_trip(if quick { 200 } else { 1000 }, 5);
    report.below("p3p failures", p3p.failures as f64, 1.0);
    report.below("p3p translation error", p3p.max_translation_error_m, 1e-6);
    report.below("p3p rotation error", p3p.max_rotation_error_rad, 1e-6);
    report.below("p3p orthonormality", p3p.max_orthonormality_error, 1e-9);

    let out = run_scenario(&calibration_scenario(6, if quick { 20.0 } else { 60.0 }))?;
    let m = &out.metrics;
    let judged = m.range.accepted + m.range.rejected;
    report.below("gate false rejection rate", m.range.rejected as f64 / judged as f64, 1e-3);
    report.below("covariance violations", m.cov_violations as f64, 1.0);
    report.below("run failures", u8::from(out.failure.is_some()) as f64, 1.0);
    Ok(report)
}
