//! Factorized diffusion sampling.
//!
//! An image is split into linear components (frequency bands, lightness and
//! color, motion-blurred and residual parts, spatial regions, or scalar
//! weights). During reverse diffusion each component of the noise estimate is
//! taken from a prediction conditioned on its own prompt, so each component of
//! the final image follows a different condition. Fixing a component to that
//! of a reference image turns the sampler into a simple inverse-problem
//! solver.
//!
//! - [`tensor`] and [`png`]: pixel arrays, resampling, 8-bit PNG I/O.
//! - [`decomp`]: decompositions and their filters.
//! - [`sampler`]: schedules, DDIM/DDPM updates, factorized and inverse loops.
//! - [`oracle`]: exact noise predictor for Gaussian-mixture data.
//! - [`remote`]: HTTP client for served denoisers and embedding scorers.
//! - [`eval`]: blur-sweep alignment metric.

pub mod decomp;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod png;
pub mod remote;
pub mod sampler;
pub mod tensor;

pub use decomp::{ComponentOp, Decomposition, DecompositionSpec, Mask};
pub use error::{BackendError, DecompError, EvalError, RemoteError, SampleError, ScheduleError, TensorError};
pub use sampler::{
    Condition, ConditionPayload, NoisePredictor, SampleRun, SamplerConfig, Schedule, Step,
    UpdateKind,
};
pub use tensor::{resample, PixelTensor};
