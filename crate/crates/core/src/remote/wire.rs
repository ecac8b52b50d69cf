//! JSON bodies and tensor encoding for the denoiser/scorer HTTP protocol.
//!
//! Tensors travel as base64 of little-endian `f32`, row-major `C×H×W`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::RemoteError;
use crate::sampler::Schedule;
use crate::tensor::{PixelTensor, Shape};

pub const DTYPE_F32LE: &str = "f32le";

/// Narrows to `f32` and encodes.
pub fn encode_tensor(x: &PixelTensor) -> String {
    let mut bytes = Vec::with_capacity(4 * x.len());
    for &v in x.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_tensor(payload: &str, shape: Shape) -> Result<PixelTensor, RemoteError> {
    let bytes = STANDARD
        .decode(payload)
        .map_err(|e| RemoteError::Protocol(format!("bad base64: {e}")))?;
    let (c, h, w) = shape;
    let expected = 4 * c * h * w;
    if bytes.len() != expected {
        return Err(RemoteError::Protocol(format!(
            "tensor payload is {} bytes, expected {expected} for {c}x{h}x{w}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    PixelTensor::new(c, h, w, data).map_err(|e| RemoteError::Protocol(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    #[serde(rename = "T")]
    pub train_steps: usize,
    pub alphas_cumprod: Vec<f64>,
    pub resolution: [usize; 3],
    pub model: String,
}

/// Parsed `/v1/info`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub schedule: Schedule,
    pub resolution: Shape,
    pub model: String,
}

impl InfoResponse {
    pub fn into_model_info(self) -> Result<ModelInfo, RemoteError> {
        if self.alphas_cumprod.len() != self.train_steps {
            return Err(RemoteError::Protocol(format!(
                "T = {} but {} alphas_cumprod entries",
                self.train_steps,
                self.alphas_cumprod.len()
            )));
        }
        let [c, h, w] = self.resolution;
        if c == 0 || h == 0 || w == 0 {
            return Err(RemoteError::Protocol(format!(
                "empty resolution {:?}",
                self.resolution
            )));
        }
        Ok(ModelInfo {
            schedule: Schedule::from_alphas_cumprod(self.alphas_cumprod)?,
            resolution: (c, h, w),
            model: self.model,
        })
    }

    pub fn from_schedule(schedule: &Schedule, resolution: Shape, model: &str) -> Self {
        Self {
            train_steps: schedule.train_steps(),
            alphas_cumprod: schedule.alphas_cumprod().to_vec(),
            resolution: [resolution.0, resolution.1, resolution.2],
            model: model.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCondition {
    pub prompt: String,
    pub guidance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub shape: [usize; 3],
    pub dtype: String,
    pub x_t: String,
    pub t: usize,
    pub conditions: Vec<WireCondition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub epsilons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedImageRequest {
    pub shape: [usize; 3],
    pub dtype: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTextRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}
