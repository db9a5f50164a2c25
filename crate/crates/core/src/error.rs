use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed attenuation table: {0}")]
    MalformedTable(String),

    #[error("energy {energy} keV outside tabulated range [{min}, {max}] keV")]
    OutOfRange { energy: f64, min: f64, max: f64 },

    #[error("malformed spectrum: {0}")]
    MalformedSpectrum(String),

    #[error("empty spectrum: {0}")]
    EmptySpectrum(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("search exhausted: {0}")]
    SearchExhausted(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
