//! Linear image decompositions `x = Σ_i f_i(x)`.
//!
//! A [`Decomposition`] is an ordered list of linear component operators that
//! sum to the identity. Constructors cover frequency bands (hybrid and triple),
//! a gray/color split, motion blur, binary spatial masks and plain scalar
//! weights. Completeness is checked on random probes when a decomposition is
//! built.

pub mod filter;
mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use filter::{gaussian_blur, BlurKernel, GaussianKernel, DEFAULT_KSIZE};
pub use spec::{DecompositionSpec, MotionKernelKind, DEFAULT_BASE_WIDTH, DEFAULT_MOTION_K};

use crate::error::{DecompError, TensorError};
use crate::tensor::{PixelTensor, Shape};

/// Tolerance for the construction-time completeness check.
pub const COMPLETENESS_TOL: f64 = 1e-5;

/// A binary `height × width` map, broadcast over channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, DecompError> {
        if bits.len() != height * width || height == 0 || width == 0 {
            return Err(TensorError::Shape(format!(
                "mask has {} entries for {height}x{width}",
                bits.len()
            ))
            .into());
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self {
            height,
            width,
            bits,
        }
    }

    /// Thresholds a single-channel tensor at zero (model space), i.e. bytes ≥ 128.
    pub fn from_tensor(t: &PixelTensor) -> Result<Self, DecompError> {
        let gray = t.with_channels(1)?;
        Ok(Self {
            height: t.height(),
            width: t.width(),
            bits: gray.data().iter().map(|&v| v > 0.0).collect(),
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    fn apply(&self, x: &PixelTensor) -> Result<PixelTensor, DecompError> {
        let (c, h, w) = x.shape();
        if (h, w) != (self.height, self.width) {
            return Err(TensorError::Shape(format!(
                "mask is {}x{} but tensor is {h}x{w}",
                self.height, self.width
            ))
            .into());
        }
        let hw = h * w;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.bits[i % hw] { v } else { 0.0 })
            .collect();
        Ok(PixelTensor::from_parts((c, h, w), data))
    }
}

/// One linear component operator `f_i`.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentOp {
    /// A cascade of Gaussian blurs, applied in order.
    Lowpass(Vec<GaussianKernel>),
    /// `G_outer(G_inner(x))` subtracted from `G_inner(x)`.
    Bandpass {
        inner: GaussianKernel,
        outer: GaussianKernel,
    },
    /// `x − G(x)`.
    HighpassResidual(GaussianKernel),
    /// Channel mean replicated across all three channels.
    Gray,
    /// `x − gray(x)`.
    ColorResidual,
    /// `K ∗ x`.
    Blurred(BlurKernel),
    /// `x − K ∗ x`.
    ResidualOf(BlurKernel),
    /// `m ⊙ x`.
    Mask(Mask),
    /// `a · x`.
    Scale(f64),
}

impl ComponentOp {
    pub fn apply(&self, x: &PixelTensor) -> Result<PixelTensor, DecompError> {
        Ok(match self {
            ComponentOp::Lowpass(blurs) => {
                let mut y = x.clone();
                for g in blurs {
                    y = g.apply(&y);
                }
                y
            }
            ComponentOp::Bandpass { inner, outer } => {
                let low = inner.apply(x);
                let lower = outer.apply(&low);
                low.sub(&lower)?
            }
            ComponentOp::HighpassResidual(g) => x.sub(&g.apply(x))?,
            ComponentOp::Gray => gray(x)?,
            ComponentOp::ColorResidual => x.sub(&gray(x)?)?,
            ComponentOp::Blurred(k) => k.convolve(x),
            ComponentOp::ResidualOf(k) => x.sub(&k.convolve(x))?,
            ComponentOp::Mask(m) => m.apply(x)?,
            ComponentOp::Scale(a) => x.scale(*a),
        })
    }

    /// Whether the component is a zero-mean residual (rescaled for display).
    pub fn is_residual(&self) -> bool {
        matches!(
            self,
            ComponentOp::Bandpass { .. }
                | ComponentOp::HighpassResidual(_)
                | ComponentOp::ColorResidual
                | ComponentOp::ResidualOf(_)
        )
    }

    fn required_channels(&self) -> Option<usize> {
        matches!(self, ComponentOp::Gray | ComponentOp::ColorResidual).then_some(3)
    }

    fn required_size(&self) -> Option<(usize, usize)> {
        match self {
            ComponentOp::Mask(m) => Some(m.size()),
            _ => None,
        }
    }
}

fn gray(x: &PixelTensor) -> Result<PixelTensor, DecompError> {
    let (c, h, w) = x.shape();
    if c != 3 {
        return Err(TensorError::Shape(format!(
            "gray/color decomposition needs 3 channels, got {c}"
        ))
        .into());
    }
    let hw = h * w;
    let d = x.data();
    let mean: Vec<f64> = (0..hw).map(|i| (d[i] + d[hw + i] + d[2 * hw + i]) / 3.0).collect();
    let mut data = Vec::with_capacity(3 * hw);
    for _ in 0..3 {
        data.extend_from_slice(&mean);
    }
    Ok(PixelTensor::from_parts((3, h, w), data))
}

/// Ordered, labelled components summing to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    components: Vec<ComponentOp>,
    labels: Vec<String>,
}

impl Decomposition {
    /// Validates labels and checks completeness on three random probes.
    pub fn new(components: Vec<ComponentOp>, labels: Vec<String>) -> Result<Self, DecompError> {
        if components.is_empty() {
            return Err(DecompError::Argument("decomposition has no components".into()));
        }
        if components.len() != labels.len() {
            return Err(DecompError::Argument(format!(
                "{} components but {} labels",
                components.len(),
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(DecompError::Argument(format!("duplicate label {l:?}")));
            }
        }
        let d = Self { components, labels };
        d.check_completeness()?;
        Ok(d)
    }

    fn probe_shape(&self) -> Shape {
        let channels = self
            .components
            .iter()
            .find_map(ComponentOp::required_channels)
            .unwrap_or(3);
        let (h, w) = self
            .components
            .iter()
            .find_map(ComponentOp::required_size)
            .unwrap_or((16, 16));
        (channels, h, w)
    }

    fn check_completeness(&self) -> Result<(), DecompError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
        let shape = self.probe_shape();
        for _ in 0..3 {
            let x = PixelTensor::rand_uniform(shape, -1.0, 1.0, &mut rng);
            let back = self.recompose(&self.apply(&x)?)?;
            let residual = back.max_abs_diff(&x)?;
            if residual > COMPLETENESS_TOL {
                return Err(DecompError::Incomplete { residual });
            }
        }
        Ok(())
    }

    /// Low and high frequency pair `["high", "low"]`: `x − G_σ(x)` and `G_σ(x)`.
    pub fn hybrid(sigma: f64, ksize: usize) -> Result<Self, DecompError> {
        let g = GaussianKernel::new(sigma, ksize)?;
        Self::new(
            vec![
                ComponentOp::HighpassResidual(g.clone()),
                ComponentOp::Lowpass(vec![g]),
            ],
            labels(&["high", "low"]),
        )
    }

    /// Three Laplacian-pyramid levels `["high", "med", "low"]`.
    pub fn triple(sigma1: f64, sigma2: f64, ksize: usize) -> Result<Self, DecompError> {
        let g1 = GaussianKernel::new(sigma1, ksize)?;
        let g2 = GaussianKernel::new(sigma2, ksize)?;
        Self::new(
            vec![
                ComponentOp::HighpassResidual(g1.clone()),
                ComponentOp::Bandpass {
                    inner: g1.clone(),
                    outer: g2.clone(),
                },
                ComponentOp::Lowpass(vec![g1, g2]),
            ],
            labels(&["high", "med", "low"]),
        )
    }

    /// Lightness (channel mean) and chromatic residual `["gray", "color"]`.
    pub fn gray_color() -> Self {
        Self::new(
            vec![ComponentOp::Gray, ComponentOp::ColorResidual],
            labels(&["gray", "color"]),
        )
        .expect("gray + residual is complete")
    }

    /// Motion-blurred part and its residual `["motion", "residual"]`.
    pub fn motion(kernel: BlurKernel) -> Result<Self, DecompError> {
        Self::new(
            vec![
                ComponentOp::Blurred(kernel.clone()),
                ComponentOp::ResidualOf(kernel),
            ],
            labels(&["motion", "residual"]),
        )
    }

    /// One component per mask; masks must tile the image exactly once.
    /// Labels are `mask0`, `mask1`, ...
    pub fn spatial(masks: Vec<Mask>) -> Result<Self, DecompError> {
        let first = masks
            .first()
            .ok_or_else(|| DecompError::Argument("no masks given".into()))?;
        let (h, w) = first.size();
        if let Some(m) = masks.iter().find(|m| m.size() != (h, w)) {
            return Err(TensorError::Shape(format!(
                "mask sizes differ: {h}x{w} vs {}x{}",
                m.height, m.width
            ))
            .into());
        }
        for i in 0..h * w {
            let hits = masks.iter().filter(|m| m.bits[i]).count();
            let (y, x) = (i / w, i % w);
            match hits {
                1 => {}
                0 => return Err(DecompError::MaskHole { index: i, y, x }),
                _ => return Err(DecompError::MaskOverlap { index: i, y, x }),
            }
        }
        let labels = (0..masks.len()).map(|i| format!("mask{i}")).collect();
        Self::new(masks.into_iter().map(ComponentOp::Mask).collect(), labels)
    }

    /// `x = Σ a_i x` with `Σ a_i = 1`. Labels are `w0`, `w1`, ...
    pub fn scaling(weights: &[f64]) -> Result<Self, DecompError> {
        if weights.is_empty() {
            return Err(DecompError::Argument("scaling needs at least one weight".into()));
        }
        if weights.iter().any(|a| !a.is_finite()) {
            return Err(DecompError::Argument("scaling weights must be finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DecompError::Argument(format!(
                "scaling weights must sum to 1, sum to {total}"
            )));
        }
        let labels = (0..weights.len()).map(|i| format!("w{i}")).collect();
        Self::new(weights.iter().map(|&a| ComponentOp::Scale(a)).collect(), labels)
    }

    /// Scaling weights `(1 − γ, γ)` reproducing classifier-free guidance when
    /// paired with (unconditional, conditional) estimates.
    pub fn guidance(gamma: f64) -> Result<Self, DecompError> {
        Self::scaling(&[1.0 - gamma, gamma])
    }

    /// Single identity component labelled `all`.
    pub fn identity() -> Self {
        Self::new(vec![ComponentOp::Scale(1.0)], labels(&["all"])).expect("identity is complete")
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn components(&self) -> &[ComponentOp] {
        &self.components
    }

    pub fn component(&self, i: usize) -> Option<&ComponentOp> {
        self.components.get(i)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `[f_1(x), …, f_N(x)]` in declared order.
    pub fn apply(&self, x: &PixelTensor) -> Result<Vec<PixelTensor>, DecompError> {
        self.components.iter().map(|f| f.apply(x)).collect()
    }

    /// `f_i(x)` for a single component.
    pub fn apply_one(&self, i: usize, x: &PixelTensor) -> Result<PixelTensor, DecompError> {
        self.components
            .get(i)
            .ok_or_else(|| {
                DecompError::Argument(format!(
                    "component index {i} out of range for {} components",
                    self.len()
                ))
            })?
            .apply(x)
    }

    /// Sum of component tensors.
    pub fn recompose(&self, parts: &[PixelTensor]) -> Result<PixelTensor, DecompError> {
        let (first, rest) = parts
            .split_first()
            .ok_or_else(|| DecompError::Argument("nothing to recompose".into()))?;
        let mut acc = first.clone();
        for p in rest {
            acc.add_assign(p)?;
        }
        Ok(acc)
    }

    /// Composite estimate `Σ_i f_i(ε_i)`.
    pub fn composite(&self, estimates: &[PixelTensor]) -> Result<PixelTensor, DecompError> {
        if estimates.len() != self.len() {
            return Err(DecompError::Argument(format!(
                "{} noise estimates for {} components",
                estimates.len(),
                self.len()
            )));
        }
        let parts = self
            .components
            .iter()
            .zip(estimates)
            .map(|(f, e)| f.apply(e))
            .collect::<Result<Vec<_>, _>>()?;
        self.recompose(&parts)
    }
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
