//! HTTP client for a networked denoiser and embedding scorer.
//!
//! Endpoints:
//! - `GET  /v1/info`
//! - `POST /v1/predict_noise`
//! - `POST /v1/embed_image`
//! - `POST /v1/embed_text`
//!
//! The served `alphas_cumprod[i]` is the engine's `ᾱ_{i+1}`, so an engine
//! timestep `t` is sent on the wire as `t − 1`.

pub mod wire;

use std::sync::OnceLock;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{BackendError, RemoteError};
use crate::eval::Embedder;
use crate::sampler::{Condition, ConditionPayload, NoisePredictor};
use crate::tensor::PixelTensor;

pub use wire::{decode_tensor, encode_tensor, ModelInfo};
use wire::{
    EmbedImageRequest, EmbedResponse, EmbedTextRequest, InfoResponse, PredictRequest,
    PredictResponse, WireCondition, DTYPE_F32LE,
};

pub const ENV_ENDPOINT: &str = "FD_ENDPOINT";
pub const ENV_TOKEN: &str = "FD_TOKEN";

/// Allowed deviation of a served embedding's norm from 1.
pub const EMBED_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteEndpoint {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    pub token: Option<String>,
}

impl RemoteEndpoint {
    pub fn new(base_url: impl Into<String>) -> Result<Self, RemoteError> {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(RemoteError::Endpoint(format!(
                "{base_url:?} is not an http(s) URL"
            )));
        }
        Ok(Self {
            base_url,
            timeout: Duration::from_secs(120),
            retries: 2,
            token: None,
        })
    }

    /// `FD_ENDPOINT` wins over `configured`; `FD_TOKEN` supplies a bearer token.
    pub fn from_env(configured: Option<&str>) -> Result<Self, RemoteError> {
        let url = std::env::var(ENV_ENDPOINT)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| configured.map(str::to_string))
            .ok_or_else(|| {
                RemoteError::Endpoint(format!("no endpoint configured and {ENV_ENDPOINT} unset"))
            })?;
        let mut e = Self::new(url)?;
        e.token = std::env::var(ENV_TOKEN).ok().filter(|s| !s.is_empty());
        Ok(e)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Result<Self, RemoteError> {
        if timeout.is_zero() {
            return Err(RemoteError::Endpoint("timeout must be positive".into()));
        }
        self.timeout = timeout;
        Ok(self)
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }
}

/// Blocking client; safe to share across threads.
#[derive(Debug)]
pub struct RemoteClient {
    endpoint: RemoteEndpoint,
    agent: ureq::Agent,
    embed_dim: OnceLock<usize>,
}

impl RemoteClient {
    pub fn new(endpoint: RemoteEndpoint) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(endpoint.timeout).build();
        Self {
            endpoint,
            agent,
            embed_dim: OnceLock::new(),
        }
    }

    pub fn endpoint(&self) -> &RemoteEndpoint {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url, path)
    }

    /// Sends with retries on transport failures and 5xx responses.
    fn call<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&B>,
    ) -> Result<R, RemoteError> {
        let url = self.url(path);
        let attempts = self.endpoint.retries + 1;
        let mut last = None;
        for _ in 0..attempts {
            let mut req = match body {
                Some(_) => self.agent.post(&url),
                None => self.agent.get(&url),
            };
            if let Some(tok) = &self.endpoint.token {
                req = req.set("Authorization", &format!("Bearer {tok}"));
            }
            let result = match body {
                Some(b) => req.send_json(b),
                None => req.call(),
            };
            match result {
                Ok(resp) => {
                    return resp
                        .into_json::<R>()
                        .map_err(|e| RemoteError::Protocol(format!("malformed body from {path}: {e}")))
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    let err = RemoteError::Server { status, body };
                    if status < 500 {
                        return Err(err);
                    }
                    last = Some(err);
                }
                Err(ureq::Error::Transport(t)) => {
                    last = Some(RemoteError::Connection {
                        url: url.clone(),
                        attempts,
                        reason: t.to_string(),
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// `GET /v1/info`, validated into a schedule and resolution.
    pub fn fetch_info(&self) -> Result<ModelInfo, RemoteError> {
        self.call::<(), InfoResponse>("/v1/info", None)?
            .into_model_info()
    }

    /// One round trip for all conditions. `wire_t` is the server's timestep index.
    pub fn predict_noise(
        &self,
        x_t: &PixelTensor,
        wire_t: usize,
        conditions: &[Condition],
    ) -> Result<Vec<PixelTensor>, RemoteError> {
        let wire_conditions = conditions
            .iter()
            .map(|c| match &c.payload {
                ConditionPayload::Prompt(p) => Ok(WireCondition {
                    prompt: p.clone(),
                    guidance: c.guidance,
                }),
                ConditionPayload::Mixture(m) => Err(RemoteError::Protocol(format!(
                    "remote backend needs prompts, got mixture {m:?}"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (c, h, w) = x_t.shape();
        let req = PredictRequest {
            shape: [c, h, w],
            dtype: DTYPE_F32LE.into(),
            x_t: encode_tensor(x_t),
            t: wire_t,
            conditions: wire_conditions,
        };
        let resp: PredictResponse = self.call("/v1/predict_noise", Some(&req))?;
        if resp.epsilons.len() != conditions.len() {
            return Err(RemoteError::Protocol(format!(
                "{} epsilons for {} conditions",
                resp.epsilons.len(),
                conditions.len()
            )));
        }
        resp.epsilons
            .iter()
            .map(|e| decode_tensor(e, (c, h, w)))
            .collect()
    }

    fn check_embedding(&self, v: Vec<f64>) -> Result<Vec<f64>, RemoteError> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(RemoteError::Protocol("empty or non-finite embedding".into()));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > EMBED_NORM_TOL {
            return Err(RemoteError::Protocol(format!(
                "embedding norm {norm} is not 1 within {EMBED_NORM_TOL}"
            )));
        }
        let dim = *self.embed_dim.get_or_init(|| v.len());
        if dim != v.len() {
            return Err(RemoteError::Protocol(format!(
                "embedding dimension changed from {dim} to {}",
                v.len()
            )));
        }
        Ok(v)
    }

    pub fn embed_image(&self, x: &PixelTensor) -> Result<Vec<f64>, RemoteError> {
        let (c, h, w) = x.shape();
        let req = EmbedImageRequest {
            shape: [c, h, w],
            dtype: DTYPE_F32LE.into(),
            image: encode_tensor(x),
        };
        let resp: EmbedResponse = self.call("/v1/embed_image", Some(&req))?;
        self.check_embedding(resp.embedding)
    }

    pub fn embed_text(&self, prompt: &str) -> Result<Vec<f64>, RemoteError> {
        let req = EmbedTextRequest {
            text: prompt.to_string(),
        };
        let resp: EmbedResponse = self.call("/v1/embed_text", Some(&req))?;
        self.check_embedding(resp.embedding)
    }
}

impl NoisePredictor for RemoteClient {
    fn predict(
        &self,
        x_t: &PixelTensor,
        t: usize,
        conditions: &[Condition],
    ) -> Result<Vec<PixelTensor>, BackendError> {
        let wire_t = t.checked_sub(1).ok_or_else(|| {
            BackendError::Remote(RemoteError::Protocol("timestep 0 has no noise to predict".into()))
        })?;
        Ok(self.predict_noise(x_t, wire_t, conditions)?)
    }
}

impl Embedder for RemoteClient {
    fn embed_image(&self, x: &PixelTensor) -> Result<Vec<f64>, BackendError> {
        Ok(RemoteClient::embed_image(self, x)?)
    }

    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>, BackendError> {
        Ok(RemoteClient::embed_text(self, prompt)?)
    }
}
