use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied a value outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent combination of settings (e.g. temperature mode together
    /// with free populations).
    #[error("configuration error: {0}")]
    Config(String),

    /// The padded kick basis was too small to contain the wave packet.
    #[error(
        "kick leakage {leakage:.3e} beyond J = {j_max} for source state {index} exceeds {tolerance:.1e}; enlarge the basis"
    )]
    Leakage {
        index: usize,
        j_max: u32,
        leakage: f64,
        tolerance: f64,
    },

    /// Non-finite objective or gradient encountered.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
