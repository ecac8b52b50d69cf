//! Closed-form noise prediction for isotropic Gaussian-mixture data.
//!
//! For data `x_0 ~ Σ_k w_k N(μ_k, s_k² I)` the forward marginal at level `ᾱ` is
//! `Σ_k w_k N(√ᾱ μ_k, v_k I)` with `v_k = ᾱ s_k² + 1 − ᾱ`, and the MMSE
//! denoiser is available exactly. [`OraclePredictor`] plugs this into the
//! sampler in place of a trained network.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BackendError, TensorError};
use crate::png::load_image;
use crate::sampler::{Condition, ConditionPayload, NoisePredictor, Schedule};
use crate::tensor::{resample, PixelTensor, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: PixelTensor,
    pub var: f64,
}

/// Data distribution attached to one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureCondition {
    components: Vec<MixtureComponent>,
}

impl MixtureCondition {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self, String> {
        let first = components.first().ok_or("mixture has no components")?;
        let shape = first.mean.shape();
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(format!("component {k}: weight {} must be >= 0", c.weight));
            }
            if !(c.var.is_finite() && c.var > 0.0) {
                return Err(format!("component {k}: variance {} must be > 0", c.var));
            }
            if c.mean.shape() != shape {
                return Err(format!(
                    "component {k}: mean shape {:?} differs from {:?}",
                    c.mean.shape(),
                    shape
                ));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("mixture weights sum to {total}, expected 1"));
        }
        Ok(Self { components })
    }

    /// A single isotropic Gaussian `N(μ, var·I)`.
    pub fn gaussian(mean: PixelTensor, var: f64) -> Result<Self, String> {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean,
            var,
        }])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn shape(&self) -> Shape {
        self.components[0].mean.shape()
    }

    /// `Σ_k w_k μ_k`.
    pub fn mean(&self) -> PixelTensor {
        let mut acc = PixelTensor::from_parts(self.shape(), vec![0.0; self.components[0].mean.len()]);
        for c in &self.components {
            acc.add_assign(&c.mean.scale(c.weight)).expect("shapes checked at construction");
        }
        acc
    }
}

/// `E[x_0 | x_t]` under the mixture at signal level `alpha_bar`.
pub fn posterior_x0(
    m: &MixtureCondition,
    x_t: &PixelTensor,
    alpha_bar: f64,
) -> Result<PixelTensor, TensorError> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(TensorError::Argument(format!(
            "alpha_bar must be in (0, 1], got {alpha_bar}"
        )));
    }
    if x_t.shape() != m.shape() {
        return Err(TensorError::Shape(format!(
            "x_t is {:?} but the mixture is {:?}",
            x_t.shape(),
            m.shape()
        )));
    }
    let dim = x_t.len() as f64;
    let root = alpha_bar.sqrt();
    let noise_var = 1.0 - alpha_bar;

    let mut log_resp = Vec::with_capacity(m.components.len());
    for c in &m.components {
        if c.weight == 0.0 {
            log_resp.push(f64::NEG_INFINITY);
            continue;
        }
        let v = alpha_bar * c.var + noise_var;
        let sq: f64 = x_t
            .data()
            .iter()
            .zip(c.mean.data())
            .map(|(x, mu)| (x - root * mu).powi(2))
            .sum();
        log_resp.push(c.weight.ln() - 0.5 * dim * v.ln() - sq / (2.0 * v));
    }
    let top = log_resp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_resp.iter().map(|l| (l - top).exp()).collect();
    let norm: f64 = weights.iter().sum();

    let mut out = vec![0.0; x_t.len()];
    for (c, &w) in m.components.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        let pi = w / norm;
        let v = alpha_bar * c.var + noise_var;
        for ((o, x), mu) in out.iter_mut().zip(x_t.data()).zip(c.mean.data()) {
            *o += pi * (noise_var * mu + root * c.var * x) / v;
        }
    }
    PixelTensor::new(x_t.channels(), x_t.height(), x_t.width(), out)
}

/// MMSE noise estimate `(x_t − √ᾱ_t·E[x_0|x_t]) / √(1−ᾱ_t)`; zero when `ᾱ_t = 1`.
pub fn predict_noise(
    m: &MixtureCondition,
    x_t: &PixelTensor,
    t: usize,
    schedule: &Schedule,
) -> Result<PixelTensor, BackendError> {
    let a = schedule
        .alpha_bar(t)
        .map_err(|e| BackendError::Oracle(e.to_string()))?;
    noise_at_level(m, x_t, a)
}

/// As [`predict_noise`] at an explicit signal level.
pub fn noise_at_level(
    m: &MixtureCondition,
    x_t: &PixelTensor,
    alpha_bar: f64,
) -> Result<PixelTensor, BackendError> {
    let (c, h, w) = x_t.shape();
    if alpha_bar >= 1.0 {
        return Ok(PixelTensor::zeros(c, h, w));
    }
    let x0 = posterior_x0(m, x_t, alpha_bar)?;
    let (root, sd) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x_t.zip_map(&x0, |x, x0| (x - root * x0) / sd)?)
}

/// `n` i.i.d. draws from the mixture.
pub fn sample_data(m: &MixtureCondition, n: usize, seed: u64) -> Vec<PixelTensor> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(m.components.iter().map(|c| c.weight))
        .expect("weights validated at construction");
    let (ch, h, w) = m.shape();
    (0..n)
        .map(|_| {
            let c = &m.components[picker.sample(&mut rng)];
            let z = PixelTensor::randn(ch, h, w, &mut rng);
            c.mean.lincomb(1.0, &z, c.var.sqrt()).expect("same shape")
        })
        .collect()
}

/// Noise predictor backed by named mixtures.
///
/// A condition with guidance `γ ≠ 1` uses `ε_u + γ(ε_c − ε_u)`, where `ε_u`
/// comes from the `unconditional` mixture.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    schedule: Schedule,
    mixtures: BTreeMap<String, MixtureCondition>,
    unconditional: Option<String>,
}

impl OraclePredictor {
    pub fn new(schedule: Schedule, mixtures: BTreeMap<String, MixtureCondition>) -> Self {
        Self {
            schedule,
            mixtures,
            unconditional: None,
        }
    }

    pub fn with_unconditional(mut self, id: impl Into<String>) -> Self {
        self.unconditional = Some(id.into());
        self
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn mixture(&self, id: &str) -> Option<&MixtureCondition> {
        self.mixtures.get(id)
    }

    fn lookup(&self, id: &str) -> Result<&MixtureCondition, BackendError> {
        self.mixtures
            .get(id)
            .ok_or_else(|| BackendError::Oracle(format!("unknown mixture {id:?}")))
    }
}

impl NoisePredictor for OraclePredictor {
    fn predict(
        &self,
        x_t: &PixelTensor,
        t: usize,
        conditions: &[Condition],
    ) -> Result<Vec<PixelTensor>, BackendError> {
        conditions
            .iter()
            .map(|cond| {
                let id = match &cond.payload {
                    ConditionPayload::Mixture(id) => id,
                    ConditionPayload::Prompt(p) => {
                        return Err(BackendError::Oracle(format!(
                            "oracle cannot condition on prompt {p:?}"
                        )))
                    }
                };
                let eps = predict_noise(self.lookup(id)?, x_t, t, &self.schedule)?;
                if cond.guidance == 1.0 {
                    return Ok(eps);
                }
                let uncond_id = self.unconditional.as_deref().ok_or_else(|| {
                    BackendError::Oracle(format!(
                        "guidance {} on {id:?} needs an unconditional mixture",
                        cond.guidance
                    ))
                })?;
                let uncond = predict_noise(self.lookup(uncond_id)?, x_t, t, &self.schedule)?;
                Ok(uncond.lincomb(1.0 - cond.guidance, &eps, cond.guidance)?)
            })
            .collect()
    }
}

/// Mixture mean as written in JSON: a constant, inline values in CHW order,
/// or a PNG path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Constant(f64),
    Values(Vec<f64>),
    Png(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub w: f64,
    pub mean: MeanSpec,
    pub var: f64,
}

/// `{"conditions": {"A": [{"w": 1.0, "mean": ..., "var": 1.0}], ...}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MixtureFile {
    pub conditions: BTreeMap<String, Vec<ComponentSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconditional: Option<String>,
}

impl MixtureFile {
    /// Resolves every mixture at `shape`. PNG means are resampled to the
    /// run size; relative paths resolve against `base_dir`. Returns all
    /// problems found.
    pub fn build(
        &self,
        shape: Shape,
        base_dir: &Path,
    ) -> Result<BTreeMap<String, MixtureCondition>, Vec<String>> {
        let (c, h, w) = shape;
        let mut out = BTreeMap::new();
        let mut problems = Vec::new();
        if let Some(u) = &self.unconditional {
            if !self.conditions.contains_key(u) {
                problems.push(format!("unconditional mixture {u:?} is not defined"));
            }
        }
        for (id, comps) in &self.conditions {
            let mut built = Vec::new();
            for (k, spec) in comps.iter().enumerate() {
                let mean = match &spec.mean {
                    MeanSpec::Constant(v) if v.is_finite() => Ok(PixelTensor::filled(c, h, w, *v)),
                    MeanSpec::Constant(v) => Err(format!("non-finite constant {v}")),
                    MeanSpec::Values(vals) => {
                        PixelTensor::new(c, h, w, vals.clone()).map_err(|e| e.to_string())
                    }
                    MeanSpec::Png(p) => {
                        let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                        load_image(&path)
                            .and_then(|t| t.with_channels(c))
                            .and_then(|t| resample(&t, h, w))
                            .map_err(|e| e.to_string())
                    }
                };
                match mean {
                    Ok(mean) => built.push(MixtureComponent {
                        weight: spec.w,
                        mean,
                        var: spec.var,
                    }),
                    Err(e) => problems.push(format!("mixture {id:?} component {k}: {e}")),
                }
            }
            if built.len() == comps.len() {
                match MixtureCondition::new(built) {
                    Ok(m) => {
                        out.insert(id.clone(), m);
                    }
                    Err(e) => problems.push(format!("mixture {id:?}: {e}")),
                }
            }
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(problems)
        }
    }
}
