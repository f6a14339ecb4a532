use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proxops::harness::{self, selfcheck, Scenario};
use proxops::Error;

const EXIT_SCENARIO_FAILURE: u8 = 1;
const EXIT_CONFIG_ERROR: u8 = 2;
const EXIT_SELF_CHECK_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "proxops", version, about = "Planar proximity-operations simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for CSV output.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Also write the metrics as JSON to this path.
    #[arg(long, global = true)]
    json_metrics: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its logs.
    Simulate {
        config: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a batch of randomised starts.
    Montecarlo {
        config: PathBuf,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Jacobian, P3P, gate-calibration and covariance-health checks.
    Selfcheck {
        /// Fewer samples per check.
        #[arg(long)]
        quick: bool,
    },
    /// Noiseless P3P round trips with fourth-point disambiguation.
    P3pRoundtrip {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG_ERROR,
            _ => EXIT_SCENARIO_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_CONFIG_ERROR, format!("{}: {e}", path.display())))?;
    harness::parse_scenario(&text)
        .map_err(|e| Failure::new(EXIT_CONFIG_ERROR, format!("{}: {e}", path.display())))
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<(), Failure> {
    let Some(path) = path else {
        return Ok(());
    };
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::new(EXIT_SCENARIO_FAILURE, e.to_string()))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| Failure::new(EXIT_SCENARIO_FAILURE, format!("{}: {e}", path.display())))
}

fn simulate(cli: &Cli, config: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut sc = load(config)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let out = harness::run_scenario(&sc)?;
    out.logs.write_dir(&cli.out_dir)?;
    write_json(cli.json_metrics.as_deref(), &out.metrics)?;
    let m = &out.metrics;
    if !cli.quiet {
        println!("scenario         {} (seed {})", sc.name, sc.seed);
        println!("duration         {:.3} s", m.duration_s);
        println!("endpoint error   {:.4} m", m.endpoint_error_m);
        println!("heading error    {:.3} deg", m.final_heading_error_rad.to_degrees());
        println!("position rmse    {:.4} m", m.position_rmse_m);
        println!("velocity rmse    {:.4} m/s", m.velocity_rmse_m_s);
        println!("ranges           {} accepted, {} rejected", m.range.accepted, m.range.rejected);
        println!("vision fixes     {} accepted, {} rejected", m.vision.accepted, m.vision.rejected);
        for p in &m.phases {
            println!("phase            {:>9.3} s  {}", p.time_s, p.phase.name());
        }
        println!("success          {}", m.success);
        println!("logs             {}", cli.out_dir.display());
    }
    if let Some(f) = out.failure {
        return Err(Failure::new(EXIT_SCENARIO_FAILURE, f));
    }
    if !m.success {
        return Err(Failure::new(EXIT_SCENARIO_FAILURE, "scenario did not meet its success condition"));
    }
    Ok(())
}

fn montecarlo(cli: &Cli, config: &Path, runs: usize, seed: u64) -> Result<(), Failure> {
    let sc = load(config)?;
    let report = harness::run_monte_carlo(&sc, runs, seed)?;
    std::fs::create_dir_all(&cli.out_dir).map_err(Error::from)?;
    std::fs::write(cli.out_dir.join("montecarlo.csv"), report.to_csv()).map_err(Error::from)?;
    write_json(cli.json_metrics.as_deref(), &report.summary)?;
    let s = &report.summary;
    if !cli.quiet {
        println!("runs                 {} ({} failed)", s.runs, s.failed_runs);
        println!("within {:.3} m        {:.1} %", sc.success_radius, 100.0 * s.fraction_within_radius);
        println!("endpoint p50/p90/max {:.4} / {:.4} / {:.4} m", s.endpoint_p50_m, s.endpoint_p90_m, s.endpoint_max_m);
        println!("mean position rmse   {:.4} m", s.position_rmse_mean_m);
        println!("range rejections     {} of {}", s.range_rejected, s.range_accepted + s.range_rejected);
    }
    if s.failed_runs > 0 {
        return Err(Failure::new(EXIT_SCENARIO_FAILURE, format!("{} runs failed", s.failed_runs)));
    }
    Ok(())
}

fn self_check(cli: &Cli, quick: bool) -> Result<(), Failure> {
    let report = selfcheck::self_check(quick)?;
    write_json(cli.json_metrics.as_deref(), &report)?;
    if !cli.quiet {
        for c in &report.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            println!("{verdict}  {:<28} {:.3e} (limit {:.1e})", c.name, c.value, c.limit);
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_SELF_CHECK_FAILURE, "self-check failed"))
    }
}

fn p3p_roundtrip(cli: &Cli, trials: usize, seed: u64) -> Result<(), Failure> {
    let r = selfcheck::p3p_round_trip(trials, seed);
    write_json(cli.json_metrics.as_deref(), &r)?;
    if !cli.quiet {
        println!("trials               {}", r.trials);
        println!("failures             {}", r.failures);
        println!("max translation err  {:.3e} m", r.max_translation_error_m);
        println!("max rotation err     {:.3e} rad", r.max_rotation_error_rad);
        println!("max orthonormality   {:.3e}", r.max_orthonormality_error);
    }
    let ok = r.failures == 0
        && r.max_translation_error_m < 1e-6
        && r.max_rotation_error_rad < 1e-6
        && r.max_orthonormality_error < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(Failure::new(EXIT_SELF_CHECK_FAILURE, "P3P round trip out of tolerance"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, seed } => simulate(&cli, config, *seed),
        Command::Montecarlo { config, runs, seed } => montecarlo(&cli, config, *runs, *seed),
        Command::Selfcheck { quick } => self_check(&cli, *quick),
        Command::P3pRoundtrip { trials, seed } => p3p_roundtrip(&cli, *trials, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
