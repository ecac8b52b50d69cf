//! Blur-sweep alignment scoring.
//!
//! An image is downsampled by each factor in a sweep, upsampled back, resized
//! to the scorer's input size and compared with a prompt by cosine similarity
//! of embeddings. The report keeps every per-factor score and the maximum.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, EvalError};
use crate::tensor::{resample, PixelTensor};

pub const SWEEP_COUNT: usize = 20;
pub const SWEEP_MIN: f64 = 1.0;
pub const SWEEP_MAX: f64 = 8.0;
/// Side length of the scorer's square input.
pub const SCORER_SIZE: usize = 224;

/// Image and text embeddings in a shared space.
pub trait Embedder {
    fn embed_image(&self, x: &PixelTensor) -> Result<Vec<f64>, BackendError>;
    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>, BackendError>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed_image(&self, x: &PixelTensor) -> Result<Vec<f64>, BackendError> {
        (**self).embed_image(x)
    }

    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>, BackendError> {
        (**self).embed_text(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub prompt: String,
    pub factors: Vec<f64>,
    pub scores: Vec<f64>,
    pub max_score: f64,
    /// Smallest factor attaining `max_score`.
    pub argmax_factor: f64,
}

impl SweepReport {
    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| EvalError::Write {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// `factor,score` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let werr = |e: csv::Error| EvalError::Write {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(werr)?;
        w.write_record(["factor", "score"]).map_err(werr)?;
        for (f, s) in self.factors.iter().zip(&self.scores) {
            w.write_record([f.to_string(), s.to_string()]).map_err(werr)?;
        }
        w.flush().map_err(|e| werr(e.into()))
    }
}

/// `count` evenly spaced values on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        n => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// The default sweep: 20 factors from 1 to 8.
pub fn sweep_factors() -> Vec<f64> {
    linspace(SWEEP_MIN, SWEEP_MAX, SWEEP_COUNT)
}

/// Down/up-samples by `factor`, then resizes to the scorer input.
/// The reduced size is `round(dim / factor)`, at least one pixel.
pub fn degrade(x: &PixelTensor, factor: f64) -> Result<PixelTensor, EvalError> {
    let (_, h, w) = x.shape();
    let small_h = ((h as f64 / factor).round() as usize).max(1);
    let small_w = ((w as f64 / factor).round() as usize).max(1);
    let down = resample(x, small_h, small_w)?;
    let up = resample(&down, h, w)?;
    Ok(resample(&up, SCORER_SIZE, SCORER_SIZE)?)
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Scores `x` against `prompt` at every factor in `factors`.
pub fn blur_sweep_with<E: Embedder + ?Sized>(
    x: &PixelTensor,
    prompt: &str,
    scorer: &E,
    factors: &[f64],
) -> Result<SweepReport, EvalError> {
    if factors.is_empty() {
        return Err(EvalError::Tensor(crate::error::TensorError::Argument(
            "empty factor list".into(),
        )));
    }
    let text = scorer.embed_text(prompt).map_err(|source| EvalError::Scorer {
        factor: factors[0],
        source,
    })?;
    let mut scores = Vec::with_capacity(factors.len());
    for &factor in factors {
        let img = degrade(x, factor)?;
        let emb = scorer
            .embed_image(&img)
            .map_err(|source| EvalError::Scorer { factor, source })?;
        if emb.len() != text.len() {
            return Err(EvalError::Dimension {
                image: emb.len(),
                text: text.len(),
            });
        }
        scores.push(cosine(&emb, &text).ok_or(EvalError::ZeroEmbedding { factor })?);
    }
    let (mut best, mut best_factor) = (scores[0], factors[0]);
    for (&s, &f) in scores.iter().zip(factors).skip(1) {
        if s > best || (s == best && f < best_factor) {
            best = s;
            best_factor = f;
        }
    }
    Ok(SweepReport {
        prompt: prompt.to_string(),
        factors: factors.to_vec(),
        scores,
        max_score: best,
        argmax_factor: best_factor,
    })
}

/// [`blur_sweep_with`] over the default 20-factor sweep.
pub fn blur_sweep<E: Embedder + ?Sized>(
    x: &PixelTensor,
    prompt: &str,
    scorer: &E,
) -> Result<SweepReport, EvalError> {
    blur_sweep_with(x, prompt, scorer, &sweep_factors())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::RefCell;

    struct Constant;

    impl Embedder for Constant {
        fn embed_image(&self, _x: &PixelTensor) -> Result<Vec<f64>, BackendError> {
            Ok(vec![0.6, 0.8])
        }
        fn embed_text(&self, _p: &str) -> Result<Vec<f64>, BackendError> {
            Ok(vec![1.0, 0.0])
        }
    }

    /// Image embedding tracks the first pixel; records what it was shown.
    struct Recording(RefCell<Vec<PixelTensor>>);

    impl Embedder for Recording {
        fn embed_image(&self, x: &PixelTensor) -> Result<Vec<f64>, BackendError> {
            self.0.borrow_mut().push(x.clone());
            let v = x.data()[0];
            let n = (1.0 + v * v).sqrt();
            Ok(vec![1.0 / n, v / n])
        }
        fn embed_text(&self, _p: &str) -> Result<Vec<f64>, BackendError> {
            Ok(vec![1.0, 0.0])
        }
    }

    #[test]
    fn factors_are_twenty_uniform_on_one_to_eight() {
        let f = sweep_factors();
        assert_eq!(f.len(), 20);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[19], 8.0);
        for w in f.windows(2) {
            assert!((w[1] - w[0] - 7.0 / 19.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_scorer_gives_constant_scores() {
        let x = PixelTensor::zeros(3, 32, 32);
        let r = blur_sweep(&x, "a dog", &Constant).unwrap();
        assert!(r.scores.iter().all(|&s| (s - 0.6).abs() < 1e-12));
        assert!((r.max_score - 0.6).abs() < 1e-12);
        assert_eq!(r.argmax_factor, 1.0);
    }

    #[test]
    fn factor_one_only_resizes_to_scorer_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PixelTensor::randn(3, 40, 30, &mut rng);
        let rec = Recording(RefCell::new(vec![]));
        blur_sweep_with(&x, "p", &rec, &[1.0]).unwrap();
        let seen = rec.0.borrow()[0].clone();
        assert_eq!(seen, resample(&x, 224, 224).unwrap());
    }

    #[test]
    fn max_and_argmax_consistent_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = PixelTensor::randn(1, 48, 48, &mut rng);
        let rec = Recording(RefCell::new(vec![]));
        let a = blur_sweep(&x, "p", &rec).unwrap();
        let b = blur_sweep(&x, "p", &rec).unwrap();
        assert_eq!(a, b);
        let m = a.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.max_score, m);
        let first = a.scores.iter().position(|&s| s == m).unwrap();
        assert_eq!(a.argmax_factor, a.factors[first]);
    }

    #[test]
    fn degrade_sizes_round_with_floor_of_one() {
        let x = PixelTensor::filled(1, 3, 3, 0.2);
        let y = degrade(&x, 8.0).unwrap();
        assert_eq!(y.shape(), (1, 224, 224));
        assert!(y.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = blur_sweep(&PixelTensor::zeros(3, 16, 16), "x", &Constant).unwrap();
        r.write_json(&dir.path().join("r.json")).unwrap();
        r.write_csv(&dir.path().join("r.csv")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(csv.lines().count(), 21);
        assert!(csv.starts_with("factor,score"));
        let back: SweepReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
