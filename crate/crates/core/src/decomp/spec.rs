use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BlurKernel, Decomposition, Mask, DEFAULT_KSIZE};
use crate::error::{DecompError, TensorError};
use crate::png::load_image;

/// Width at which blur sigmas are specified.
pub const DEFAULT_BASE_WIDTH: usize = 64;
pub const DEFAULT_MOTION_K: usize = 29;

fn default_ksize() -> usize {
    DEFAULT_KSIZE
}

fn default_base_width() -> usize {
    DEFAULT_BASE_WIDTH
}

fn default_motion_k() -> usize {
    DEFAULT_MOTION_K
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKernelKind {
    Diag,
    Antidiag,
}

/// Decomposition as written in a run config.
///
/// Blur sigmas are given at `base_width` pixels and scaled by
/// `width / base_width` when built for a run resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecompositionSpec {
    Hybrid {
        sigma: f64,
        #[serde(default = "default_ksize")]
        ksize: usize,
        #[serde(default = "default_base_width")]
        base_width: usize,
    },
    Triple {
        sigma1: f64,
        sigma2: f64,
        #[serde(default = "default_ksize")]
        ksize: usize,
        #[serde(default = "default_base_width")]
        base_width: usize,
    },
    GrayColor,
    Motion {
        #[serde(default = "MotionKernelKind::default_kind")]
        kernel: MotionKernelKind,
        #[serde(default = "default_motion_k")]
        k: usize,
    },
    Spatial {
        masks: Vec<PathBuf>,
    },
    Scaling {
        weights: Vec<f64>,
    },
}

impl MotionKernelKind {
    fn default_kind() -> Self {
        MotionKernelKind::Diag
    }
}

impl DecompositionSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DecompositionSpec::Hybrid { .. } => "hybrid",
            DecompositionSpec::Triple { .. } => "triple",
            DecompositionSpec::GrayColor => "gray_color",
            DecompositionSpec::Motion { .. } => "motion",
            DecompositionSpec::Spatial { .. } => "spatial",
            DecompositionSpec::Scaling { .. } => "scaling",
        }
    }

    /// Number of components this spec produces.
    pub fn component_count(&self) -> usize {
        match self {
            DecompositionSpec::Hybrid { .. }
            | DecompositionSpec::GrayColor
            | DecompositionSpec::Motion { .. } => 2,
            DecompositionSpec::Triple { .. } => 3,
            DecompositionSpec::Spatial { masks } => masks.len(),
            DecompositionSpec::Scaling { weights } => weights.len(),
        }
    }

    /// Component labels of the built decomposition, in order.
    pub fn labels(&self) -> Vec<String> {
        let fixed = |names: &[&str]| names.iter().map(|s| s.to_string()).collect();
        match self {
            DecompositionSpec::Hybrid { .. } => fixed(&["high", "low"]),
            DecompositionSpec::Triple { .. } => fixed(&["high", "med", "low"]),
            DecompositionSpec::GrayColor => fixed(&["gray", "color"]),
            DecompositionSpec::Motion { .. } => fixed(&["motion", "residual"]),
            DecompositionSpec::Spatial { masks } => {
                (0..masks.len()).map(|i| format!("mask{i}")).collect()
            }
            DecompositionSpec::Scaling { weights } => {
                (0..weights.len()).map(|i| format!("w{i}")).collect()
            }
        }
    }

    /// Static checks that need no files. Returns every problem found.
    pub fn problems(&self, channels: usize) -> Vec<String> {
        let mut out = Vec::new();
        let check_sigma = |name: &str, s: f64, out: &mut Vec<String>| {
            if !(s.is_finite() && s > 0.0) {
                out.push(format!("decomposition.{name} must be positive, got {s}"));
            }
        };
        let check_ksize = |k: usize, out: &mut Vec<String>| {
            if k < 3 || k % 2 == 0 {
                out.push(format!("decomposition.ksize must be odd and >= 3, got {k}"));
            }
        };
        match self {
            DecompositionSpec::Hybrid {
                sigma,
                ksize,
                base_width,
            } => {
                check_sigma("sigma", *sigma, &mut out);
                check_ksize(*ksize, &mut out);
                if *base_width == 0 {
                    out.push("decomposition.base_width must be >= 1".into());
                }
            }
            DecompositionSpec::Triple {
                sigma1,
                sigma2,
                ksize,
                base_width,
            } => {
                check_sigma("sigma1", *sigma1, &mut out);
                check_sigma("sigma2", *sigma2, &mut out);
                check_ksize(*ksize, &mut out);
                if *base_width == 0 {
                    out.push("decomposition.base_width must be >= 1".into());
                }
            }
            DecompositionSpec::GrayColor => {
                if channels != 3 {
                    out.push(format!(
                        "gray_color decomposition needs 3 channels, run has {channels}"
                    ));
                }
            }
            DecompositionSpec::Motion { k, .. } => {
                if *k == 0 || *k % 2 == 0 {
                    out.push(format!("decomposition.k must be odd and >= 1, got {k}"));
                }
            }
            DecompositionSpec::Spatial { masks } => {
                if masks.is_empty() {
                    out.push("decomposition.masks is empty".into());
                }
            }
            DecompositionSpec::Scaling { weights } => {
                if weights.is_empty() {
                    out.push("decomposition.weights is empty".into());
                } else if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    out.push(format!(
                        "decomposition.weights must sum to 1, sum to {}",
                        weights.iter().sum::<f64>()
                    ));
                }
            }
        }
        out
    }

    /// Sigma in pixels at the given run width.
    pub fn scaled_sigma(sigma: f64, width: usize, base_width: usize) -> f64 {
        sigma * width as f64 / base_width as f64
    }

    /// Replaces the hybrid sigma, keeping everything else.
    pub fn with_sigma(&self, new_sigma: f64) -> Option<Self> {
        match self {
            DecompositionSpec::Hybrid {
                ksize, base_width, ..
            } => Some(DecompositionSpec::Hybrid {
                sigma: new_sigma,
                ksize: *ksize,
                base_width: *base_width,
            }),
            _ => None,
        }
    }

    /// Builds the decomposition for a `height × width` run. Relative mask paths
    /// resolve against `base_dir`.
    pub fn build(
        &self,
        height: usize,
        width: usize,
        base_dir: &Path,
    ) -> Result<Decomposition, DecompError> {
        match self {
            DecompositionSpec::Hybrid {
                sigma,
                ksize,
                base_width,
            } => Decomposition::hybrid(Self::scaled_sigma(*sigma, width, *base_width), *ksize),
            DecompositionSpec::Triple {
                sigma1,
                sigma2,
                ksize,
                base_width,
            } => Decomposition::triple(
                Self::scaled_sigma(*sigma1, width, *base_width),
                Self::scaled_sigma(*sigma2, width, *base_width),
                *ksize,
            ),
            DecompositionSpec::GrayColor => Ok(Decomposition::gray_color()),
            DecompositionSpec::Motion { kernel, k } => {
                let k = match kernel {
                    MotionKernelKind::Diag => BlurKernel::diagonal(*k)?,
                    MotionKernelKind::Antidiag => BlurKernel::anti_diagonal(*k)?,
                };
                Decomposition::motion(k)
            }
            DecompositionSpec::Spatial { masks } => {
                let loaded = masks
                    .iter()
                    .map(|p| {
                        let path = if p.is_absolute() {
                            p.clone()
                        } else {
                            base_dir.join(p)
                        };
                        let t = load_image(&path)?;
                        if (t.height(), t.width()) != (height, width) {
                            return Err(DecompError::Tensor(TensorError::Shape(format!(
                                "mask {} is {}x{}, run resolution is {height}x{width}",
                                path.display(),
                                t.height(),
                                t.width()
                            ))));
                        }
                        Mask::from_tensor(&t)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Decomposition::spatial(loaded)
            }
            DecompositionSpec::Scaling { weights } => Decomposition::scaling(weights),
        }
    }
}
