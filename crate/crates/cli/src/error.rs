use std::fmt;

use facdiff_core::{BackendError, DecompError, EvalError, RemoteError, SampleError, TensorError};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; every problem found.
    Validation(Vec<String>),
    /// Denoiser or scorer unreachable or misbehaving.
    Backend(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(problems) => {
                write!(f, "invalid configuration ({} problem(s)):", problems.len())?;
                for p in problems {
                    write!(f, "\n  - {p}")?;
                }
                Ok(())
            }
            CliError::Backend(m) => write!(f, "backend error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<DecompError> for CliError {
    fn from(e: DecompError) -> Self {
        match e {
            DecompError::Tensor(t) => t.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<RemoteError> for CliError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Endpoint(m) => CliError::invalid(m),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::Predictor { .. } => CliError::Backend(e.to_string()),
            SampleError::Tensor(t) => t.into(),
            SampleError::Decomp(d) => d.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Write { .. } => CliError::Io(e.to_string()),
            EvalError::Tensor(t) => t.into(),
            other => CliError::Backend(other.to_string()),
        }
    }
}
