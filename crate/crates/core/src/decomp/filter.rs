//! Spatial filters: separable Gaussian blur and general 2-D kernel convolution.
//! All borders use reflect padding (mirror about the edge pixel, edge not repeated).

use crate::error::{DecompError, TensorError};
use crate::tensor::PixelTensor;

pub const DEFAULT_KSIZE: usize = 33;

/// Mirror `i` into `0..n`, folding as many times as needed.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Normalized 1-D Gaussian taps sampled at integer offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64, ksize: usize) -> Result<Self, DecompError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(DecompError::Argument(format!(
                "blur sigma must be positive, got {sigma}"
            )));
        }
        if ksize < 3 || ksize % 2 == 0 {
            return Err(DecompError::Argument(format!(
                "kernel size must be odd and >= 3, got {ksize}"
            )));
        }
        let r = (ksize / 2) as isize;
        let mut taps: Vec<f64> = (-r..=r)
            .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|w| *w /= total);
        Ok(Self { sigma, taps })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn ksize(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn center(&self) -> f64 {
        self.taps[self.taps.len() / 2]
    }

    /// Horizontal pass then vertical pass, per channel.
    pub fn apply(&self, x: &PixelTensor) -> PixelTensor {
        let (c, h, w) = x.shape();
        let r = (self.taps.len() / 2) as isize;
        let mut tmp = vec![0.0; h * w];
        let mut out = Vec::with_capacity(c * h * w);
        // precomputed reflected source columns/rows for each output position
        let col_src: Vec<Vec<usize>> = (0..w as isize)
            .map(|xx| (-r..=r).map(|k| reflect_index(xx + k, w)).collect())
            .collect();
        let row_src: Vec<Vec<usize>> = (0..h as isize)
            .map(|yy| (-r..=r).map(|k| reflect_index(yy + k, h)).collect())
            .collect();
        for ch in 0..c {
            let plane = x.plane(ch);
            for y in 0..h {
                let row = &plane[y * w..(y + 1) * w];
                for (xx, src) in col_src.iter().enumerate() {
                    tmp[y * w + xx] = self
                        .taps
                        .iter()
                        .zip(src)
                        .map(|(wt, &s)| wt * row[s])
                        .sum();
                }
            }
            for src in &row_src {
                for xx in 0..w {
                    out.push(
                        self.taps
                            .iter()
                            .zip(src)
                            .map(|(wt, &s)| wt * tmp[s * w + xx])
                            .sum(),
                    );
                }
            }
        }
        PixelTensor::from_parts((c, h, w), out)
    }
}

/// Blurs `x` with a Gaussian of standard deviation `sigma` pixels.
pub fn gaussian_blur(x: &PixelTensor, sigma: f64, ksize: usize) -> Result<PixelTensor, DecompError> {
    Ok(GaussianKernel::new(sigma, ksize)?.apply(x))
}

/// A non-negative 2-D kernel with odd side lengths summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self, DecompError> {
        if height % 2 == 0 || width % 2 == 0 {
            return Err(DecompError::Argument(format!(
                "kernel sides must be odd, got {height}x{width}"
            )));
        }
        if weights.len() != height * width {
            return Err(TensorError::Shape(format!(
                "kernel has {} weights for {height}x{width}",
                weights.len()
            ))
            .into());
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(DecompError::Argument(format!(
                "kernel weight {i} is negative or non-finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DecompError::Argument(format!(
                "kernel must sum to 1, sums to {total}"
            )));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    /// `(1/k)·I`: a line from upper left to lower right.
    pub fn diagonal(k: usize) -> Result<Self, DecompError> {
        if k == 0 {
            return Err(DecompError::Argument("kernel size must be >= 1".into()));
        }
        let w = (0..k * k)
            .map(|i| if i / k == i % k { 1.0 / k as f64 } else { 0.0 })
            .collect();
        Self::new(k, k, w)
    }

    /// Line from upper right to lower left.
    pub fn anti_diagonal(k: usize) -> Result<Self, DecompError> {
        if k == 0 {
            return Err(DecompError::Argument("kernel size must be >= 1".into()));
        }
        let w = (0..k * k)
            .map(|i| if i / k + i % k == k - 1 { 1.0 / k as f64 } else { 0.0 })
            .collect();
        Self::new(k, k, w)
    }

    pub fn identity() -> Self {
        Self {
            height: 1,
            width: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True convolution `K ∗ x` (kernel flipped), per channel.
    pub fn convolve(&self, x: &PixelTensor) -> PixelTensor {
        let (c, h, w) = x.shape();
        let (ry, rx) = ((self.height / 2) as isize, (self.width / 2) as isize);
        let taps: Vec<(isize, isize, f64)> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, &wt)| wt != 0.0)
            .map(|(i, &wt)| {
                let (ky, kx) = ((i / self.width) as isize, (i % self.width) as isize);
                (ry - ky, rx - kx, wt)
            })
            .collect();
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let plane = x.plane(ch);
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let v = taps
                        .iter()
                        .map(|&(dy, dx, wt)| {
                            wt * plane[reflect_index(y + dy, h) * w + reflect_index(xx + dx, w)]
                        })
                        .sum();
                    out.push(v);
                }
            }
        }
        PixelTensor::from_parts((c, h, w), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct 2-D sum over the outer-product kernel.
    fn naive_blur(x: &PixelTensor, sigma: f64, ksize: usize) -> PixelTensor {
        let r = (ksize / 2) as isize;
        let g: Vec<f64> = (-r..=r)
            .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        let (c, h, w) = x.shape();
        PixelTensor::from_fn(c, h, w, |ch, y, xx| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sy = reflect_index(y as isize + dy, h);
                    let sx = reflect_index(xx as isize + dx, w);
                    acc += g[(dy + r) as usize] * g[(dx + r) as usize] / (s * s) * x.get(ch, sy, sx);
                }
            }
            acc
        })
    }

    #[test]
    fn reflect_folds_repeatedly() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-16, 16), 14);
        assert_eq!(reflect_index(40, 4), 2);
        assert_eq!(reflect_index(-7, 1), 0);
        for i in -100..100 {
            assert!(reflect_index(i, 3) < 3);
        }
    }

    #[test]
    fn kernel_validation() {
        assert!(GaussianKernel::new(1.0, 32).is_err());
        assert!(GaussianKernel::new(1.0, 1).is_err());
        assert!(GaussianKernel::new(0.0, 33).is_err());
        assert!(GaussianKernel::new(-1.0, 33).is_err());
        let k = GaussianKernel::new(2.0, DEFAULT_KSIZE).unwrap();
        assert_eq!(k.ksize(), 33);
        assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_image_is_preserved() {
        let x = PixelTensor::filled(3, 10, 7, 0.7);
        for sigma in [0.5, 1.0, 3.0, 12.0] {
            let y = gaussian_blur(&x, sigma, 33).unwrap();
            assert!(y.max_abs_diff(&x).unwrap() < 1e-12);
        }
    }

    #[test]
    fn impulse_center_is_squared_center_tap() {
        let mut data = vec![0.0; 33 * 33];
        data[16 * 33 + 16] = 1.0;
        let x = PixelTensor::new(1, 33, 33, data).unwrap();
        let k = GaussianKernel::new(1.0, 33).unwrap();
        let y = k.apply(&x);
        let k0 = k.center();
        assert!((y.get(0, 16, 16) - k0 * k0).abs() < 1e-15);
        assert!(y.max_abs_diff(&naive_blur(&x, 1.0, 33)).unwrap() < 1e-12);
    }

    #[test]
    fn separable_matches_naive_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (sigma, ksize) in [(1.0, 33), (2.0, 33), (0.8, 5), (3.0, 9)] {
            let x = PixelTensor::randn(3, 16, 16, &mut rng);
            let fast = gaussian_blur(&x, sigma, ksize).unwrap();
            assert!(fast.max_abs_diff(&naive_blur(&x, sigma, ksize)).unwrap() < 1e-6);
        }
    }

    #[test]
    fn blur_kernel_checks() {
        assert!(BlurKernel::new(2, 1, vec![0.5, 0.5]).is_err());
        assert!(BlurKernel::new(1, 3, vec![0.5, 0.5, 0.5]).is_err());
        assert!(BlurKernel::new(1, 3, vec![1.5, -1.0, 0.5]).is_err());
        let d = BlurKernel::diagonal(29).unwrap();
        assert_eq!(d.size(), (29, 29));
        assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d.weights()[0] - 1.0 / 29.0).abs() < 1e-15);
        assert_eq!(d.weights()[1], 0.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = PixelTensor::randn(3, 5, 6, &mut rng);
        assert_eq!(BlurKernel::identity().convolve(&x), x);
    }

    #[test]
    fn diagonal_kernel_averages_along_the_line() {
        // single impulse spreads along the main diagonal
        let mut data = vec![0.0; 7 * 7];
        data[3 * 7 + 3] = 1.0;
        let x = PixelTensor::new(1, 7, 7, data).unwrap();
        let y = BlurKernel::diagonal(3).unwrap().convolve(&x);
        for (yy, xx) in [(2, 2), (3, 3), (4, 4)] {
            assert!((y.get(0, yy, xx) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(y.get(0, 2, 4), 0.0);
    }
}
