//! Versioned CSV logs. Rows are quantised to the written precision when
//! they are recorded, so anything computed from the in-memory logs matches
//! what a reader of the files computes.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::guidance::GuidancePhase;

pub const SCHEMA_VERSION: u32 = 1;

const TRUTH_HEADER: &[&str] = &[
    "time_s", "x_m", "y_m", "heading_rad", "vx_body_m_s", "vy_body_m_s", "rate_rad_s", "duty0",
    "duty1", "duty2", "duty3",
];
const ESTIMATE_HEADER: &[&str] = &[
    "time_s",
    "x_m",
    "y_m",
    "vx_body_m_s",
    "vy_body_m_s",
    "heading_rad",
    "var_x_m2",
    "var_y_m2",
    "var_vx_m2_s2",
    "var_vy_m2_s2",
    "true_x_m",
    "true_y_m",
    "true_vx_body_m_s",
    "true_vy_body_m_s",
    "cov_violations",
    "vision_locked",
];
const MEASUREMENT_HEADER: &[&str] = &["time_s", "kind", "id", "z1", "z2", "d2", "status", "outlier"];
const PHASE_HEADER: &[&str] = &["time_s", "phase"];

/// Value as it will read back from the log (12 significant digits).
pub(crate) fn quantize(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Timestamp as it will read back from the log (microseconds).
pub(crate) fn quantize_time(t: f64) -> f64 {
    format!("{t:.6}").parse().unwrap_or(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub rate: f64,
    pub duty: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub heading: f64,
    /// Diagonal of the filter covariance.
    pub var: [f64; 4],
    pub true_x: f64,
    pub true_y: f64,
    pub true_vx: f64,
    pub true_vy: f64,
    /// Covariance health violations so far in the run.
    pub cov_violations: u64,
    pub vision_locked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementKind {
    /// Gyro rate (z1) and AHRS heading (z2).
    Imu,
    Accel,
    Range,
    /// Chaser position from the vision pose (z1, z2).
    Vision,
}

impl MeasurementKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Imu => "imu",
            Self::Accel => "accel",
            Self::Range => "range",
            Self::Vision => "vision",
        }
    }
}

impl FromStr for MeasurementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imu" => Ok(Self::Imu),
            "accel" => Ok(Self::Accel),
            "range" => Ok(Self::Range),
            "vision" => Ok(Self::Vision),
            _ => Err(Error::Log(format!("unknown measurement kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementStatus {
    Accepted,
    Rejected,
    /// Could not be linearised.
    Degenerate,
    /// Recorded but not fed to the filter.
    Unused,
    /// Vision filter running but not yet converged.
    Tracking,
    /// No usable marker face in the frame.
    Lost,
}

impl MeasurementStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Accepted => "accepted",
            Self::Rejected => "rejected",
            Self::Degenerate => "degenerate",
            Self::Unused => "unused",
            Self::Tracking => "tracking",
            Self::Lost => "lost",
        }
    }
}

impl FromStr for MeasurementStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accepted" => Ok(Self::Accepted),
            "rejected" => Ok(Self::Rejected),
            "degenerate" => Ok(Self::Degenerate),
            "unused" => Ok(Self::Unused),
            "tracking" => Ok(Self::Tracking),
            "lost" => Ok(Self::Lost),
            _ => Err(Error::Log(format!("unknown measurement status {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRow {
    pub time: f64,
    pub kind: MeasurementKind,
    /// Anchor index for ranges, face id for vision, -1 otherwise.
    pub id: i64,
    pub z1: f64,
    pub z2: f64,
    /// Squared Mahalanobis distance, NaN when not computed.
    pub d2: f64,
    pub status: MeasurementStatus,
    /// Whether the simulator injected this sample as an outlier.
    pub outlier: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRow {
    pub time: f64,
    pub phase: GuidancePhase,
}

/// All four logs of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Logs {
    pub truth: Vec<TruthRow>,
    pub estimate: Vec<EstimateRow>,
    pub measurements: Vec<MeasurementRow>,
    pub phases: Vec<PhaseRow>,
}

impl Logs {
    pub fn push_truth(&mut self, r: TruthRow) {
        self.truth.push(TruthRow {
            time: quantize_time(r.time),
            x: quantize(r.x),
            y: quantize(r.y),
            heading: quantize(r.heading),
            vx: quantize(r.vx),
            vy: quantize(r.vy),
            rate: quantize(r.rate),
            duty: r.duty.map(quantize),
        });
    }

    pub fn push_estimate(&mut self, r: EstimateRow) {
        self.estimate.push(EstimateRow {
            time: quantize_time(r.time),
            x: quantize(r.x),
            y: quantize(r.y),
            vx: quantize(r.vx),
            vy: quantize(r.vy),
            heading: quantize(r.heading),
            var: r.var.map(quantize),
            true_x: quantize(r.true_x),
            true_y: quantize(r.true_y),
            true_vx: quantize(r.true_vx),
            true_vy: quantize(r.true_vy),
            ..r
        });
    }

    pub fn push_measurement(&mut self, r: MeasurementRow) {
        self.measurements.push(MeasurementRow {
            time: quantize_time(r.time),
            z1: quantize(r.z1),
            z2: quantize(r.z2),
            d2: quantize(r.d2),
            ..r
        });
    }

    pub fn push_phase(&mut self, r: PhaseRow) {
        self.phases.push(PhaseRow {
            time: quantize_time(r.time),
            ..r
        });
    }

    pub fn truth_csv(&self) -> String {
        let mut out = preamble(TRUTH_HEADER);
        for r in &self.truth {
            let mut fields = vec![time(r.time)];
            fields.extend([r.x, r.y, r.heading, r.vx, r.vy, r.rate].map(num));
            fields.extend(r.duty.map(num));
            line(&mut out, &fields);
        }
        out
    }

    pub fn estimate_csv(&self) -> String {
        let mut out = preamble(ESTIMATE_HEADER);
        for r in &self.estimate {
            let mut fields = vec![time(r.time)];
            fields.extend([r.x, r.y, r.vx, r.vy, r.heading].map(num));
            fields.extend(r.var.map(num));
            fields.extend([r.true_x, r.true_y, r.true_vx, r.true_vy].map(num));
            fields.push(r.cov_violations.to_string());
            fields.push(u8::from(r.vision_locked).to_string());
            line(&mut out, &fields);
        }
        out
    }

    pub fn measurement_csv(&self) -> String {
        let mut out = preamble(MEASUREMENT_HEADER);
        for r in &self.measurements {
            line(
                &mut out,
                &[
                    time(r.time),
                    r.kind.name().to_string(),
                    r.id.to_string(),
                    num(r.z1),
                    num(r.z2),
                    num(r.d2),
                    r.status.name().to_string(),
                    u8::from(r.outlier).to_string(),
                ],
            );
        }
        out
    }

    pub fn phase_csv(&self) -> String {
        let mut out = preamble(PHASE_HEADER);
        for r in &self.phases {
            line(&mut out, &[time(r.time), r.phase.name().to_string()]);
        }
        out
    }

    /// Writes `truth.csv`, `estimate.csv`, `measurements.csv` and
    /// `phases.csv` into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("truth.csv"), self.truth_csv())?;
        std::fs::write(dir.join("estimate.csv"), self.estimate_csv())?;
        std::fs::write(dir.join("measurements.csv"), self.measurement_csv())?;
        std::fs::write(dir.join("phases.csv"), self.phase_csv())?;
        Ok(())
    }

    /// Reads back a directory written by [`Logs::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        Ok(Self {
            truth: parse_truth_csv(&read("truth.csv")?)?,
            estimate: parse_estimate_csv(&read("estimate.csv")?)?,
            measurements: parse_measurement_csv(&read("measurements.csv")?)?,
            phases: parse_phase_csv(&read("phases.csv")?)?,
        })
    }
}

fn preamble(header: &[&str]) -> String {
    format!("# schema_version={SCHEMA_VERSION}\n{}\n", header.join(","))
}

fn line(out: &mut String, fields: &[String]) {
    let _ = writeln!(out, "{}", fields.join(","));
}

fn num(x: f64) -> String {
    format!("{x:.11e}")
}

fn time(t: f64) -> String {
    format!("{t:.6}")
}

/// Checks the schema line and header, then hands each record to `row`.
fn parse<T>(
    text: &str,
    header: &[&str],
    mut row: impl FnMut(&csv::StringRecord) -> Result<T>,
) -> Result<Vec<T>> {
    let first = text.lines().next().unwrap_or("");
    let version = first
        .strip_prefix("# schema_version=")
        .ok_or_else(|| Error::Log("missing schema_version line".into()))?;
    if version.trim() != SCHEMA_VERSION.to_string() {
        return Err(Error::Log(format!("unsupported schema version {version:?}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let found = reader.headers()?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Log(format!("unexpected header {:?}", found.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Log(format!(
                "line {}: expected {} fields, found {}",
                record.position().map_or(0, |p| p.line()),
                header.len(),
                record.len()
            )));
        }
        out.push(row(&record).map_err(|e| {
            Error::Log(format!("line {}: {e}", record.position().map_or(0, |p| p.line())))
        })?);
    }
    Ok(out)
}

fn field<T: FromStr>(r: &csv::StringRecord, i: usize) -> Result<T> {
    let s = r.get(i).unwrap_or("");
    s.parse()
        .map_err(|_| Error::Log(format!("cannot parse field {i} ({s:?})")))
}

fn flag(r: &csv::StringRecord, i: usize) -> Result<bool> {
    match r.get(i) {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        other => Err(Error::Log(format!("field {i} is not a 0/1 flag: {other:?}"))),
    }
}

pub fn parse_truth_csv(text: &str) -> Result<Vec<TruthRow>> {
    parse(text, TRUTH_HEADER, |r| {
        Ok(TruthRow {
            time: field(r, 0)?,
            x: field(r, 1)?,
            y: field(r, 2)?,
            heading: field(r, 3)?,
            vx: field(r, 4)?,
            vy: field(r, 5)?,
            rate: field(r, 6)?,
            duty: [field(r, 7)?, field(r, 8)?, field(r, 9)?, field(r, 10)?],
        })
    })
}

pub fn parse_estimate_csv(text: &str) -> Result<Vec<EstimateRow>> {
    parse(text, ESTIMATE_HEADER, |r| {
        Ok(EstimateRow {
            time: field(r, 0)?,
            x: field(r, 1)?,
            y: field(r, 2)?,
            vx: field(r, 3)?,
            vy: field(r, 4)?,
            heading: field(r, 5)?,
            var: [field(r, 6)?, field(r, 7)?, field(r, 8)?, field(r, 9)?],
            true_x: field(r, 10)?,
            true_y: field(r, 11)?,
            true_vx: field(r, 12)?,
            true_vy: field(r, 13)?,
            cov_violations: field(r, 14)?,
            vision_locked: flag(r, 15)?,
        })
    })
}

pub fn parse_measurement_csv(text: &str) -> Result<Vec<MeasurementRow>> {
    parse(text, MEASUREMENT_HEADER, |r| {
        Ok(MeasurementRow {
            time: field(r, 0)?,
            kind: field(r, 1)?,
            id: field(r, 2)?,
            z1: field(r, 3)?,
            z2: field(r, 4)?,
            d2: field(r, 5)?,
            status: field(r, 6)?,
            outlier: flag(r, 7)?,
        })
    })
}

pub fn parse_phase_csv(text: &str) -> Result<Vec<PhaseRow>> {
    parse(text, PHASE_HEADER, |r| {
        Ok(PhaseRow {
            time: field(r, 0)?,
            phase: r
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Log(format!("unknown phase {:?}", r.get(1))))?,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Logs {
        let mut logs = Logs::default();
        logs.push_truth(TruthRow {
            time: 0.1 / 3.0,
            x: std::f64::consts::PI,
            y: -1e-300,
            heading: 0.25,
            vx: 1.0 / 7.0,
            vy: 0.0,
            rate: -2.5,
            duty: [0.0, 1.0, 0.3, 2.0 / 3.0],
        });
        logs.push_estimate(EstimateRow {
            time: 1.0,
            x: 0.1,
            y: 0.2,
            vx: 0.3,
            vy: 0.4,
            heading: 0.5,
            var: [1e-4, 2e-4, 3e-4, 4e-4],
            true_x: 0.11,
            true_y: 0.19,
            true_vx: 0.3,
            true_vy: 0.41,
            cov_violations: 2,
            vision_locked: true,
        });
        logs.push_measurement(MeasurementRow {
            time: 0.02,
            kind: MeasurementKind::Range,
            id: 3,
            z1: 1.234567890123456,
            z2: 0.0,
            d2: f64::NAN,
            status: MeasurementStatus::Degenerate,
            outlier: true,
        });
        logs.push_phase(PhaseRow {
            time: 0.0,
            phase: GuidancePhase::AcquireLos,
        });
        logs
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let logs = sample();
        assert_eq!(parse_truth_csv(&logs.truth_csv()).unwrap(), logs.truth);
        assert_eq!(parse_estimate_csv(&logs.estimate_csv()).unwrap(), logs.estimate);
        assert_eq!(parse_phase_csv(&logs.phase_csv()).unwrap(), logs.phases);
        let m = parse_measurement_csv(&logs.measurement_csv()).unwrap();
        assert_eq!(m.len(), 1);
        assert!(m[0].d2.is_nan());
        assert_eq!(m[0].z1, logs.measurements[0].z1);
        assert_eq!(m[0].status, MeasurementStatus::Degenerate);
    }

    #[test]
    fn rewriting_parsed_rows_is_byte_identical() {
        let logs = sample();
        let again = Logs {
            truth: parse_truth_csv(&logs.truth_csv()).unwrap(),
            ..Logs::default()
        };
        assert_eq!(again.truth_csv(), logs.truth_csv());
    }

    #[test]
    fn wrong_schema_or_header_is_rejected() {
        let text = Logs::default().phase_csv();
        assert!(parse_phase_csv(&text.replace("version=1", "version=2")).is_err());
        assert!(parse_phase_csv(&text.replace("phase", "stage")).is_err());
        assert!(parse_phase_csv("").is_err());
        assert!(parse_phase_csv(&format!("{text}0.000000,NOPE\n")).is_err());
        assert!(parse_truth_csv(&format!("{}1,2\n", Logs::default().truth_csv())).is_err());
    }
}
