use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },
}

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("masks overlap at pixel {index} (y={y}, x={x})")]
    MaskOverlap { index: usize, y: usize, x: usize },
    #[error("no mask covers pixel {index} (y={y}, x={x})")]
    MaskHole { index: usize, y: usize, x: usize },
    #[error("components do not sum to the identity (residual {residual:e})")]
    Incomplete { residual: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("alphas_cumprod not strictly decreasing at index {index}")]
    NonMonotone { index: usize },
    #[error("timestep {t} out of range 0..={max}")]
    OutOfRange { t: usize, max: usize },
    #[error("alpha_bar at timestep {t} is zero")]
    ZeroAlpha { t: usize },
}

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("connection to {url} failed after {attempts} attempt(s): {reason}")]
    Connection {
        url: String,
        attempts: u32,
        reason: String,
    },
    #[error("server returned HTTP {status}: {body}")]
    Server { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server schedule rejected: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("invalid endpoint: {0}")]
    Endpoint(String),
}

/// Failure of a noise predictor or embedding backend.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid sampler argument: {0}")]
    Argument(String),
    #[error("noise predictor failed at step {step} (t={t}): {source}")]
    Predictor {
        step: usize,
        t: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scorer failed at factor {factor}: {source}")]
    Scorer {
        factor: f64,
        #[source]
        source: BackendError,
    },
    #[error("zero-norm embedding at factor {factor}")]
    ZeroEmbedding { factor: f64 },
    #[error("embedding dimensions differ: image {image}, text {text}")]
    Dimension { image: usize, text: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot write report {path}: {reason}")]
    Write { path: String, reason: String },
}
