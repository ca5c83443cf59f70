use std::fmt;

/// Process exit codes. Stable across releases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    /// A self-check suite failed, or an unexpected internal error.
    Failure = 1,
    /// Malformed JSON config or unparseable input file.
    BadInput = 2,
    /// Output directory cannot be written.
    Unwritable = 3,
    /// Dataset or earlier-stage artifacts missing.
    MissingInput = 4,
    /// Training diverged.
    Diverged = 5,
    /// Trajectory timestamps do not line up.
    TimestampMismatch = 6,
    /// Another process holds the run directory.
    Locked = 7,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(code: ExitCode, error: anyhow::Error) -> Self {
        CliError { code, error }
    }

    pub fn msg(code: ExitCode, msg: impl fmt::Display) -> Self {
        CliError {
            code,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

/// Maps library errors onto exit codes.
impl From<wscloc::Error> for CliError {
    fn from(e: wscloc::Error) -> Self {
        let code = match &e {
            wscloc::Error::Diverged(_) => ExitCode::Diverged,
            wscloc::Error::Parse { .. } | wscloc::Error::Json(_) => ExitCode::BadInput,
            _ => ExitCode::Failure,
        };
        CliError::new(code, e.into())
    }
}

pub trait WithCode<T> {
    fn code(self, code: ExitCode) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: ExitCode) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(code, e.into()))
    }
}
