use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Covariance lost symmetry or positive definiteness.
    #[error("covariance is not symmetric positive definite after {0}")]
    NotPositiveDefinite(&'static str),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("P3P system has no real solution")]
    NoSolution,

    #[error("no marker face matches the observed features")]
    NoFace,

    #[error("observed features match more than one marker face or ordering")]
    AmbiguousFace,

    #[error("no candidate pose places every marker in front of the camera")]
    NoValidPose,

    #[error("vision filter has not converged")]
    NotConverged,

    #[error("{0}")]
    Config(#[from] ConfigError),

    #[error("non-finite value in {what} at t = {time:.6} s")]
    NonFinite { what: &'static str, time: f64 },

    #[error("malformed log: {0}")]
    Log(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Scenario configuration problem, located in the source text when possible.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}", self.render())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: None,
            message: message.into(),
        }
    }

    pub fn at_key(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: Some(key.into()),
            message: message.into(),
        }
    }

    fn render(&self) -> String {
        let mut out = String::from("config error");
        if let Some(line) = self.line {
            out.push_str(&format!(" at line {line}"));
        }
        if let Some(key) = &self.key {
            out.push_str(&format!(" ({key})"));
        }
        out.push_str(": ");
        out.push_str(&self.message);
        out
    }
}
