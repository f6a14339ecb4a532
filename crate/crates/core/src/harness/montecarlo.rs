use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::run::rng;
use super::{run_scenario, RunMetrics, Scenario};
use crate::dynamics::BodyState;
use crate::error::{Error, Result};

/// Stream used to draw Monte-Carlo start states; distinct from every
/// sensor stream of the run itself.
const STREAM_START: u64 = 7;

/// Scenario of run `index`: its own seed and a start state drawn uniformly
/// from the start region.
pub fn monte_carlo_scenario(sc: &Scenario, seed_base: u64, index: usize) -> Scenario {
    let seed = seed_base.wrapping_add(index as u64);
    let mut r = rng(seed, STREAM_START);
    let region = &sc.start_region;
    let mut draw = |lo: f64, hi: f64| if hi > lo { r.random_range(lo..=hi) } else { lo };
    let x = draw(region.center.x - region.half_extent.x, region.center.x + region.half_extent.x);
    let y = draw(region.center.y - region.half_extent.y, region.center.y + region.half_extent.y);
    let heading = draw(region.heading_range[0], region.heading_range[1]);
    Scenario {
        seed,
        initial: BodyState {
            position: nalgebra::Vector2::new(x, y),
            heading: crate::geometry::wrap_angle(heading),
            ..BodyState::default()
        },
        ..sc.clone()
    }
}

/// One row of the batch table.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub start_x_m: f64,
    pub start_y_m: f64,
    pub start_heading_rad: f64,
    /// Set when the run stopped early; its metrics cover the part that ran.
    pub failure: Option<String>,
    pub metrics: RunMetrics,
}

/// Percentiles use linear interpolation between order statistics.
#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub failed_runs: usize,
    pub successes: usize,
    /// Fraction of runs whose endpoint lies within the success radius.
    pub fraction_within_radius: f64,
    pub endpoint_p50_m: f64,
    pub endpoint_p90_m: f64,
    pub endpoint_p95_m: f64,
    pub endpoint_max_m: f64,
    pub position_rmse_mean_m: f64,
    pub velocity_rmse_mean_m_s: f64,
    pub range_accepted: u64,
    pub range_rejected: u64,
    pub outlier_rejection: f64,
    pub inlier_rejection: f64,
    pub cov_violations: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub runs: Vec<RunRecord>,
    pub summary: BatchSummary,
}

impl MonteCarloReport {
    /// One CSV row per run, in run order.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# schema_version={}\nindex,seed,start_x_m,start_y_m,start_heading_rad,endpoint_error_m,final_heading_error_rad,position_rmse_m,velocity_rmse_m_s,range_accepted,range_rejected,cov_violations,success,failure\n",
            super::SCHEMA_VERSION
        );
        for r in &self.runs {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{},{},{},{},{}\n",
                r.index,
                r.seed,
                r.start_x_m,
                r.start_y_m,
                r.start_heading_rad,
                m.endpoint_error_m,
                m.final_heading_error_rad,
                m.position_rmse_m,
                m.velocity_rmse_m_s,
                m.range.accepted,
                m.range.rejected,
                m.cov_violations,
                u8::from(m.success),
                r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        out
    }
}

/// Value at quantile `q` in [0, 1] of `values`, interpolating linearly
/// between neighbouring order statistics. NaNs are ignored.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Runs `n_runs` randomised copies of `sc` in parallel. Output order is the
/// run index whatever the thread count; a failing run becomes a flagged row.
pub fn run_monte_carlo(sc: &Scenario, n_runs: usize, seed_base: u64) -> Result<MonteCarloReport> {
    if n_runs == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    let runs: Vec<RunRecord> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let run = monte_carlo_scenario(sc, seed_base, i);
            let (failure, metrics) = match run_scenario(&run) {
                Ok(out) => (out.failure, out.metrics),
                Err(e) => (
                    Some(e.to_string()),
                    RunMetrics::from_logs(&Default::default(), &run),
                ),
            };
            RunRecord {
                index: i,
                seed: run.seed,
                start_x_m: run.initial.position.x,
                start_y_m: run.initial.position.y,
                start_heading_rad: run.initial.heading,
                failure,
                metrics,
            }
        })
        .collect();
    let summary = summarise(&runs, sc.success_radius);
    Ok(MonteCarloReport { runs, summary })
}

fn summarise(runs: &[RunRecord], radius: f64) -> BatchSummary {
    let endpoints: Vec<f64> = runs.iter().map(|r| r.metrics.endpoint_error_m).collect();
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let sum = |f: &dyn Fn(&RunMetrics) -> u64| runs.iter().map(|r| f(&r.metrics)).sum::<u64>();
    let outliers = sum(&|m| m.injected_outliers);
    let inliers = sum(&|m| m.inliers);
    BatchSummary {
        runs: runs.len(),
        failed_runs: runs.iter().filter(|r| r.failure.is_some()).count(),
        successes: runs.iter().filter(|r| r.metrics.success).count(),
        fraction_within_radius: endpoints.iter().filter(|e| **e < radius).count() as f64 / n,
        endpoint_p50_m: percentile(&endpoints, 0.5),
        endpoint_p90_m: percentile(&endpoints, 0.9),
        endpoint_p95_m: percentile(&endpoints, 0.95),
        endpoint_max_m: percentile(&endpoints, 1.0),
        position_rmse_mean_m: mean(&|m| m.position_rmse_m),
        velocity_rmse_mean_m_s: mean(&|m| m.velocity_rmse_m_s),
        range_accepted: sum(&|m| m.range.accepted),
        range_rejected: sum(&|m| m.range.rejected),
        outlier_rejection: sum(&|m| m.outliers_rejected) as f64 / outliers as f64,
        inlier_rejection: sum(&|m| m.inliers_rejected) as f64 / inliers as f64,
        cov_violations: sum(&|m| m.cov_violations),
    }
}
