//! Variance schedules and the per-step DDIM / DDPM coefficients.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ScheduleError;

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// A reverse-process transition from timestep `t` down to `prev < t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub prev: usize,
}

impl Step {
    /// The unit step `t → t − 1`.
    pub fn single(t: usize) -> Self {
        Self {
            t,
            prev: t.saturating_sub(1),
        }
    }
}

/// Cumulative signal coefficients `ᾱ_t` for `t = 0..=T`, with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alpha_bar: Vec<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

impl Schedule {
    /// Linear β from `beta_start` to `beta_end` over `train_steps` steps.
    pub fn linear(train_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if train_steps == 0 {
            return Err(ScheduleError::Invalid("need at least one timestep".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(ScheduleError::Invalid(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut cumprod = Vec::with_capacity(train_steps);
        let mut acc = 1.0;
        for i in 0..train_steps {
            let beta = if train_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (train_steps - 1) as f64
            };
            acc *= 1.0 - beta;
            cumprod.push(acc);
        }
        Self::from_alphas_cumprod(cumprod)
    }

    /// Wraps a served `alphas_cumprod` table, where entry `i` is `ᾱ_{i+1}`.
    pub fn from_alphas_cumprod(cumprod: Vec<f64>) -> Result<Self, ScheduleError> {
        if cumprod.is_empty() {
            return Err(ScheduleError::Invalid("alphas_cumprod is empty".into()));
        }
        for (i, &a) in cumprod.iter().enumerate() {
            if !(a.is_finite() && a > 0.0 && a <= 1.0) {
                return Err(ScheduleError::Invalid(format!(
                    "alphas_cumprod[{i}] = {a} is outside (0, 1]"
                )));
            }
            if i > 0 && a >= cumprod[i - 1] {
                return Err(ScheduleError::NonMonotone { index: i });
            }
        }
        let mut alpha_bar = Vec::with_capacity(cumprod.len() + 1);
        alpha_bar.push(1.0);
        alpha_bar.extend(cumprod);
        Ok(Self { alpha_bar })
    }

    /// Number of training timesteps `T`.
    pub fn train_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    /// The served-style table `ᾱ_1..=ᾱ_T`.
    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alpha_bar[1..]
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, ScheduleError> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(ScheduleError::OutOfRange {
                t,
                max: self.train_steps(),
            })
    }

    /// `steps` descending timesteps with uniform stride, the first being `T`.
    /// Timestep `i` (1-based) is `⌊i·T/steps⌋`.
    pub fn timesteps(&self, steps: usize) -> Result<Vec<usize>, ScheduleError> {
        let big_t = self.train_steps();
        if steps == 0 || steps > big_t {
            return Err(ScheduleError::Invalid(format!(
                "step count {steps} must be in 1..={big_t}"
            )));
        }
        Ok((1..=steps).rev().map(|i| i * big_t / steps).collect())
    }

    /// The transitions visited by a `steps`-step run, ending at `prev = 0`.
    pub fn steps(&self, steps: usize) -> Result<Vec<Step>, ScheduleError> {
        let ts = self.timesteps(steps)?;
        Ok(ts
            .iter()
            .enumerate()
            .map(|(i, &t)| Step {
                t,
                prev: ts.get(i + 1).copied().unwrap_or(0),
            })
            .collect())
    }

    fn pair(&self, step: Step) -> Result<(f64, f64), ScheduleError> {
        if step.t == 0 || step.prev >= step.t {
            return Err(ScheduleError::Invalid(format!(
                "step must go from t >= 1 to a smaller timestep, got {} -> {}",
                step.t, step.prev
            )));
        }
        let a_t = self.alpha_bar(step.t)?;
        let a_prev = self.alpha_bar(step.prev)?;
        if a_t == 0.0 {
            return Err(ScheduleError::ZeroAlpha { t: step.t });
        }
        Ok((a_t, a_prev))
    }

    /// Deterministic DDIM coefficients `(ω, γ)` with `x_prev = ω·x_t + γ·ε`.
    pub fn ddim_coefficients(&self, step: Step) -> Result<(f64, f64), ScheduleError> {
        let (a_t, a_prev) = self.pair(step)?;
        let omega = (a_prev / a_t).sqrt();
        let gamma = (1.0 - a_prev).sqrt() - (1.0 - a_t).sqrt() * omega;
        Ok((omega, gamma))
    }

    /// Coefficients `(ω, γ)` of the deterministic part of the ancestral update.
    pub fn ddpm_coefficients(&self, step: Step) -> Result<(f64, f64), ScheduleError> {
        let (a_t, a_prev) = self.pair(step)?;
        let alpha = a_t / a_prev;
        let beta = 1.0 - alpha;
        let omega = 1.0 / alpha.sqrt();
        let gamma = -beta / (alpha.sqrt() * (1.0 - a_t).sqrt());
        Ok((omega, gamma))
    }

    /// Ancestral noise scale `σ_z`: the posterior standard deviation, zero when
    /// stepping to `prev = 0`.
    pub fn ddpm_sigma(&self, step: Step) -> Result<f64, ScheduleError> {
        let (a_t, a_prev) = self.pair(step)?;
        let beta = 1.0 - a_t / a_prev;
        Ok((beta * (1.0 - a_prev) / (1.0 - a_t)).max(0.0).sqrt())
    }

    /// SHA-256 over the little-endian `ᾱ` table, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for a in &self.alpha_bar {
            h.update(a.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
