use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario or parameter set failed validation. `field` names the offending key.
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("device {device} is still executing a protocol; overlapping broadcasts are not supported")]
    ProtocolBusy { device: usize },

    #[error("no event recorded at t = {0} min")]
    NoEventAt(f64),

    #[error("steady window [{start}, {end}] min overlaps the event at {event} min")]
    WindowOverlapsEvent { start: f64, end: f64, event: f64 },

    #[error("trace too short: {0}")]
    TraceTooShort(String),

    #[error("output directory {0} is not empty; pass --force to overwrite")]
    OutputExists(PathBuf),

    #[error("unknown bundled scenario `{0}`")]
    UnknownScenario(String),

    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("failed to serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), reason: reason.into() }
    }

    /// True for failures caused by bad input rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation { .. } | Error::Parse(_) | Error::UnknownScenario(_))
    }
}
