use std::fmt;

use spst_core::Error as CoreError;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys, missing or malformed input files.
    Input(String),
    /// An acceptance check such as a gradient check did not pass.
    Check(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Input(_) => 2,
            CliError::Check(_) => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::MalformedFile { .. }
            | CoreError::NonFiniteCoordinate { .. }
            | CoreError::EmptySequence
            | CoreError::InvalidSpec(_)
            | CoreError::SequenceTooShort { .. }
            | CoreError::LabelOutOfRange { .. }
            | CoreError::InvalidGraph(_)
            | CoreError::InvalidManifest(_)
            | CoreError::InvalidConfig(_)
            | CoreError::BadBinary { .. }
            | CoreError::Io { .. } => CliError::Input(e.to_string()),
            CoreError::DimensionMismatch(..) | CoreError::ShapeMismatch(_) | CoreError::Diverged(_) => {
                CliError::Internal(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
