use thiserror::Error;

/// Errors raised by the simulator.
///
/// The variants are grouped so that the command-line front end can map each
/// group onto a distinct exit code (see [`Error::exit_code`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config: {0}")]
    ConfigValue(String),

    #[error("unknown preset '{0}' (expected benzene12, benzene6 or benzene7)")]
    UnknownPreset(String),

    #[error("unknown channel '{0}'")]
    UnknownChannel(String),

    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("irreversible event in sequence: {0}")]
    Irreversible(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigValue(_) | Error::UnknownPreset(_) | Error::Io(_) => 2,
            Error::Fit(_) => 4,
            _ => 3,
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } | Error::ConfigValue(_) => "config",
            Error::UnknownPreset(_) => "preset",
            Error::UnknownChannel(_) => "channel",
            Error::InvalidSystem(_) => "system",
            Error::Dimension(_) => "dimension",
            Error::NotHermitian(_) => "hermiticity",
            Error::InvalidArgument(_) => "argument",
            Error::Irreversible(_) => "irreversible",
            Error::Fit(_) => "fit",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
