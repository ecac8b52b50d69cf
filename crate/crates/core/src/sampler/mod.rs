//! Reverse-process sampling with composite noise estimates.
//!
//! Each step queries the predictor once per condition, assembles
//! `ε̃ = Σ_i f_i(ε_i)` and applies a DDIM or DDPM update. Inverse mode
//! additionally projects one component of `x_t` onto the forward-noised
//! component of a reference image after every update.
//!
//! Random stream order for a run seeded with `seed` (ChaCha20):
//! 1. `x_T`, `C·H·W` standard normals in storage order;
//! 2. then per step, in order: the DDPM draw `z` (DDPM runs, `prev > 0` only),
//!    then the projection draw `ε` (inverse runs, `prev > 0` only).

mod schedule;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub use schedule::{Schedule, Step, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS};

use crate::decomp::Decomposition;
use crate::error::{BackendError, SampleError};
use crate::tensor::{PixelTensor, Shape};

/// What a condition asks the predictor for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionPayload {
    /// Text prompt for a served model.
    Prompt(String),
    /// Named mixture for the analytic oracle.
    Mixture(String),
}

fn default_guidance() -> f64 {
    1.0
}

/// Conditioning attached to one decomposition component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    #[serde(default)]
    pub id: String,
    #[serde(flatten)]
    pub payload: ConditionPayload,
    /// Classifier-free guidance scale, applied by the predictor.
    #[serde(default = "default_guidance")]
    pub guidance: f64,
}

impl Condition {
    pub fn prompt(text: impl Into<String>, guidance: f64) -> Self {
        let text = text.into();
        Self {
            id: text.clone(),
            payload: ConditionPayload::Prompt(text),
            guidance,
        }
    }

    pub fn mixture(id: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            id: id.clone(),
            payload: ConditionPayload::Mixture(id),
            guidance: 1.0,
        }
    }
}

/// Produces `ε_θ(x_t, y, t)` for a batch of conditions.
///
/// Implementations return one estimate per condition, in request order, each
/// shaped like `x_t`.
pub trait NoisePredictor {
    fn predict(
        &self,
        x_t: &PixelTensor,
        t: usize,
        conditions: &[Condition],
    ) -> Result<Vec<PixelTensor>, BackendError>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(
        &self,
        x_t: &PixelTensor,
        t: usize,
        conditions: &[Condition],
    ) -> Result<Vec<PixelTensor>, BackendError> {
        (**self).predict(x_t, t, conditions)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(
        &self,
        x_t: &PixelTensor,
        t: usize,
        conditions: &[Condition],
    ) -> Result<Vec<PixelTensor>, BackendError> {
        (**self).predict(x_t, t, conditions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    #[default]
    Ddim,
    Ddpm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub kind: UpdateKind,
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl SamplerConfig {
    pub fn shape(&self) -> Shape {
        (self.channels, self.height, self.width)
    }

    fn validate(&self, schedule: &Schedule) -> Result<(), SampleError> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(SampleError::Argument(format!(
                "resolution must be non-empty, got {:?}",
                self.shape()
            )));
        }
        if self.steps == 0 || self.steps > schedule.train_steps() {
            return Err(SampleError::Argument(format!(
                "steps must be in 1..={}, got {}",
                schedule.train_steps(),
                self.steps
            )));
        }
        Ok(())
    }
}

/// A finished run: the sample and per-step wall-clock timings.
#[derive(Debug, Clone)]
pub struct SampleRun {
    pub image: PixelTensor,
    pub steps: Vec<Step>,
    pub step_millis: Vec<f64>,
}

/// DDIM (η = 0): `√ᾱ_prev·(x_t − √(1−ᾱ_t)·ε)/√ᾱ_t + √(1−ᾱ_prev)·ε`,
/// evaluated as `ω·x_t + γ·ε`.
pub fn ddim_update(
    x_t: &PixelTensor,
    eps: &PixelTensor,
    step: Step,
    schedule: &Schedule,
) -> Result<PixelTensor, SampleError> {
    let (omega, gamma) = schedule.ddim_coefficients(step)?;
    Ok(x_t.lincomb(omega, eps, gamma)?)
}

/// Deterministic part of the ancestral update:
/// `(x_t − β/√(1−ᾱ_t)·ε)/√α` with `α = ᾱ_t/ᾱ_prev`, `β = 1 − α`.
pub fn ddpm_mean(
    x_t: &PixelTensor,
    eps: &PixelTensor,
    step: Step,
    schedule: &Schedule,
) -> Result<PixelTensor, SampleError> {
    let (omega, gamma) = schedule.ddpm_coefficients(step)?;
    Ok(x_t.lincomb(omega, eps, gamma)?)
}

/// Ancestral update `ddpm_mean(x_t, ε) + σ_z·z`.
pub fn ddpm_update(
    x_t: &PixelTensor,
    eps: &PixelTensor,
    step: Step,
    schedule: &Schedule,
    z: &PixelTensor,
) -> Result<PixelTensor, SampleError> {
    let mean = ddpm_mean(x_t, eps, step, schedule)?;
    let sigma = schedule.ddpm_sigma(step)?;
    Ok(mean.lincomb(1.0, z, sigma)?)
}

/// `Σ_i f_i(ε_i)`.
pub fn composite_noise(
    d: &Decomposition,
    estimates: &[PixelTensor],
) -> Result<PixelTensor, SampleError> {
    Ok(d.composite(estimates)?)
}

/// Forward-process sample `√ᾱ_t·x_0 + √(1−ᾱ_t)·ε`. At `t = 0` this is `x_0`.
pub fn forward_noise(
    x0: &PixelTensor,
    t: usize,
    schedule: &Schedule,
    eps: &PixelTensor,
) -> Result<PixelTensor, SampleError> {
    if t == 0 {
        return Ok(x0.clone());
    }
    let a = schedule.alpha_bar(t)?;
    Ok(x0.lincomb(a.sqrt(), eps, (1.0 - a).sqrt())?)
}

/// Replaces component `fixed` of `x_t` with that of the forward-noised reference:
/// `f_fixed(√ᾱ_t·x_ref + √(1−ᾱ_t)·ε) + Σ_{i≠fixed} f_i(x_t)`.
pub fn project_component(
    x_t: &PixelTensor,
    x_ref: &PixelTensor,
    d: &Decomposition,
    fixed: usize,
    t: usize,
    schedule: &Schedule,
    eps: &PixelTensor,
) -> Result<PixelTensor, SampleError> {
    if fixed >= d.len() {
        return Err(SampleError::Argument(format!(
            "fixed component {fixed} out of range for {} components",
            d.len()
        )));
    }
    x_t.check_same_shape(x_ref, "projection reference")?;
    let noised = forward_noise(x_ref, t, schedule, eps)?;
    let mut out = d.apply_one(fixed, &noised)?;
    for i in (0..d.len()).filter(|&i| i != fixed) {
        out.add_assign(&d.apply_one(i, x_t)?)?;
    }
    Ok(out)
}

struct Inverse<'a> {
    reference: &'a PixelTensor,
    fixed: usize,
}

fn run_loop<P, F>(
    predictor: &P,
    conditions: &[Condition],
    cfg: &SamplerConfig,
    schedule: &Schedule,
    combine: F,
    inverse: Option<(&Decomposition, Inverse<'_>)>,
) -> Result<SampleRun, SampleError>
where
    P: NoisePredictor + ?Sized,
    F: Fn(&[PixelTensor]) -> Result<PixelTensor, SampleError>,
{
    cfg.validate(schedule)?;
    let steps = schedule.steps(cfg.steps)?;
    let (c, h, w) = cfg.shape();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut x = PixelTensor::randn(c, h, w, &mut rng);
    let mut step_millis = Vec::with_capacity(steps.len());

    for (i, &step) in steps.iter().enumerate() {
        let started = Instant::now();
        let estimates = predictor
            .predict(&x, step.t, conditions)
            .map_err(|source| SampleError::Predictor {
                step: i,
                t: step.t,
                source,
            })?;
        if estimates.len() != conditions.len() {
            return Err(SampleError::Predictor {
                step: i,
                t: step.t,
                source: BackendError::Oracle(format!(
                    "predictor returned {} estimates for {} conditions",
                    estimates.len(),
                    conditions.len()
                )),
            });
        }
        for e in &estimates {
            x.check_same_shape(e, "noise estimate")?;
        }
        let eps = combine(&estimates)?;
        x = match cfg.kind {
            UpdateKind::Ddim => ddim_update(&x, &eps, step, schedule)?,
            UpdateKind::Ddpm if step.prev == 0 => ddpm_mean(&x, &eps, step, schedule)?,
            UpdateKind::Ddpm => {
                let z = PixelTensor::randn(c, h, w, &mut rng);
                ddpm_update(&x, &eps, step, schedule, &z)?
            }
        };
        if let Some((d, inv)) = &inverse {
            let noise = if step.prev == 0 {
                PixelTensor::zeros(c, h, w)
            } else {
                PixelTensor::randn(c, h, w, &mut rng)
            };
            x = project_component(&x, inv.reference, d, inv.fixed, step.prev, schedule, &noise)?;
        }
        step_millis.push(started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(SampleRun {
        image: x,
        steps,
        step_millis,
    })
}

fn check_conditions(d: &Decomposition, conditions: &[Condition]) -> Result<(), SampleError> {
    if conditions.len() != d.len() {
        return Err(SampleError::Argument(format!(
            "{} conditions for {} components",
            conditions.len(),
            d.len()
        )));
    }
    Ok(())
}

/// Factorized sampling: component `i` of every noise estimate comes from the
/// prediction under `conditions[i]`.
pub fn sample_factorized<P: NoisePredictor + ?Sized>(
    predictor: &P,
    d: &Decomposition,
    conditions: &[Condition],
    cfg: &SamplerConfig,
    schedule: &Schedule,
) -> Result<SampleRun, SampleError> {
    check_conditions(d, conditions)?;
    run_loop(
        predictor,
        conditions,
        cfg,
        schedule,
        |eps| composite_noise(d, eps),
        None,
    )
}

/// Ordinary single-condition sampling, with no decomposition involved.
pub fn sample_standard<P: NoisePredictor + ?Sized>(
    predictor: &P,
    condition: &Condition,
    cfg: &SamplerConfig,
    schedule: &Schedule,
) -> Result<SampleRun, SampleError> {
    run_loop(
        predictor,
        std::slice::from_ref(condition),
        cfg,
        schedule,
        |eps| Ok(eps[0].clone()),
        None,
    )
}

/// Factorized sampling with component `fixed` held to that of `x_ref`.
/// The last projection uses zero noise, so `f_fixed` of the output equals
/// `f_fixed(x_ref)` up to how far `f_fixed` is from idempotent.
pub fn sample_inverse<P: NoisePredictor + ?Sized>(
    predictor: &P,
    d: &Decomposition,
    conditions: &[Condition],
    x_ref: &PixelTensor,
    fixed: usize,
    cfg: &SamplerConfig,
    schedule: &Schedule,
) -> Result<SampleRun, SampleError> {
    check_conditions(d, conditions)?;
    if fixed >= d.len() {
        return Err(SampleError::Argument(format!(
            "fixed component {fixed} out of range for {} components",
            d.len()
        )));
    }
    if x_ref.shape() != cfg.shape() {
        return Err(SampleError::Argument(format!(
            "reference is {:?} but the run is {:?}",
            x_ref.shape(),
            cfg.shape()
        )));
    }
    run_loop(
        predictor,
        conditions,
        cfg,
        schedule,
        |eps| composite_noise(d, eps),
        Some((
            d,
            Inverse {
                reference: x_ref,
                fixed,
            },
        )),
    )
}
