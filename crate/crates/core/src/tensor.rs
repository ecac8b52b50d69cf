//! Channel-major pixel tensors.
//!
//! A [`PixelTensor`] carries images, noisy samples and noise estimates alike.
//! Model space is `[-1, 1]`; values outside that range are legal (noise is
//! unbounded) but every tensor is finite.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::TensorError;

/// A `channels × height × width` array of `f64`, row-major within a channel.
#[derive(Clone, PartialEq)]
pub struct PixelTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Tensor shape as `(channels, height, width)`.
pub type Shape = (usize, usize, usize);

impl fmt::Debug for PixelTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PixelTensor")
            .field("shape", &self.shape())
            .field("min", &self.min())
            .field("max", &self.max())
            .finish()
    }
}

impl PixelTensor {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(TensorError::Argument(format!(
                "empty tensor shape {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(TensorError::Shape(format!(
                "data length {} does not match {channels}x{height}x{width} = {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index: i });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Constructor for callers that already guarantee the invariants.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.0 * shape.1 * shape.2);
        Self {
            channels: shape.0,
            height: shape.1,
            width: shape.2,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self::from_parts(
            (channels, height, width),
            vec![value; channels * height * width],
        )
    }

    /// Builds a tensor from `f(c, y, x)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        assert!(data.iter().all(|v| v.is_finite()), "from_fn produced a non-finite value");
        Self::from_parts((channels, height, width), data)
    }

    /// Standard Gaussian draw, consuming `channels·height·width` normals from `rng`
    /// in storage order.
    pub fn randn<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let n = channels * height * width;
        let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self::from_parts((channels, height, width), data)
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(
        shape: Shape,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Self {
        let n = shape.0 * shape.1 * shape.2;
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Self::from_parts(shape, data)
    }

    pub fn shape(&self) -> Shape {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    /// One channel plane as a slice of `height·width` values.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &str) -> Result<(), TensorError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(TensorError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(
        &self,
        other: &Self,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, TensorError> {
        self.check_same_shape(other, "elementwise operands")?;
        Ok(Self::from_parts(
            self.shape(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| k * v)
    }

    /// `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self, TensorError> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        self.check_same_shape(other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖∞`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, TensorError> {
        self.check_same_shape(other, "difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Self) -> Result<f64, TensorError> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// SHA-256 over the shape and little-endian values, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in [self.channels, self.height, self.width] {
            h.update((d as u64).to_le_bytes());
        }
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Affine rescale to `[-1, 1]` using the tensor's own min and max.
    /// Constant tensors map to zero. Used only for display.
    pub fn min_max_normalized(&self) -> Self {
        let (lo, hi) = (self.min(), self.max());
        let span = hi - lo;
        if span <= f64::EPSILON {
            return Self::zeros(self.channels, self.height, self.width);
        }
        self.map(|v| 2.0 * (v - lo) / span - 1.0)
    }

    /// Repeats a single-channel tensor across `channels`, or averages channels
    /// down to one. Identity when the count already matches.
    pub fn with_channels(&self, channels: usize) -> Result<Self, TensorError> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, n) => {
                let plane = self.plane(0);
                let mut data = Vec::with_capacity(n * plane.len());
                for _ in 0..n {
                    data.extend_from_slice(plane);
                }
                Ok(Self::from_parts((n, self.height, self.width), data))
            }
            (n, 1) => {
                let hw = self.height * self.width;
                let data = (0..hw)
                    .map(|i| (0..n).map(|c| self.data[c * hw + i]).sum::<f64>() / n as f64)
                    .collect();
                Ok(Self::from_parts((1, self.height, self.width), data))
            }
            (a, b) => Err(TensorError::Shape(format!(
                "cannot convert {a} channels to {b}"
            ))),
        }
    }

    /// Places tensors side by side; all must share channels and height.
    pub fn hconcat(parts: &[PixelTensor]) -> Result<Self, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Argument("nothing to concatenate".into()))?;
        let (c, h) = (first.channels, first.height);
        if let Some(bad) = parts.iter().find(|p| p.channels != c || p.height != h) {
            return Err(TensorError::Shape(format!(
                "hconcat expects {c}x{h}xW, got {:?}",
                bad.shape()
            )));
        }
        let width: usize = parts.iter().map(|p| p.width).sum();
        let mut data = Vec::with_capacity(c * h * width);
        for ch in 0..c {
            for y in 0..h {
                for p in parts {
                    let start = p.index(ch, y, 0);
                    data.extend_from_slice(&p.data[start..start + p.width]);
                }
            }
        }
        Ok(Self::from_parts((c, h, width), data))
    }
}

/// Bilinear resampling with half-pixel centres (`align_corners = false`).
///
/// Sizes that already match return an exact copy.
pub fn resample(x: &PixelTensor, out_h: usize, out_w: usize) -> Result<PixelTensor, TensorError> {
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::Argument(format!(
            "resample target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    let (c, in_h, in_w) = x.shape();
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ys = axis_taps(in_h, out_h);
    let xs = axis_taps(in_w, out_w);
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = x.plane(ch);
        for &(y0, y1, fy) in &ys {
            let r0 = &plane[y0 * in_w..(y0 + 1) * in_w];
            let r1 = &plane[y1 * in_w..(y1 + 1) * in_w];
            for &(x0, x1, fx) in &xs {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                data.push(top + (bottom - top) * fy);
            }
        }
    }
    Ok(PixelTensor::from_parts((c, out_h, out_w), data))
}

/// Source index pair and interpolation weight for every output coordinate.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}
