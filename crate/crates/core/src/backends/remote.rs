//! JSON-over-HTTP backend adapter.
//!
//! Every request is a POST of `{"task": ..., "payload": {...}}` to the
//! configured URL; images travel as base64-encoded PNG. See
//! `docs/protocol.md` for the full field list.

use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Captioner, CaptionerCapabilities, DiffusionCall, DiffusionCapabilities,
    DiffusionMode, Diffuser, Scorer,
};
use crate::captioning::{SamplingConfig, SamplingMode};
use crate::imageio;
use crate::prompting::ByteSpan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteBackendConfig {
    pub id: String,
    pub url: String,
    pub timeout_secs: u64,
    pub retries: u32,
    /// Embedding dimension reported by the scorer endpoint.
    pub embedding_dim: usize,
    pub similarity_range: (f64, f64),
    pub max_concurrency: Option<usize>,
}

impl Default for RemoteBackendConfig {
    fn default() -> Self {
        Self {
            id: String::new(),
            url: String::new(),
            timeout_secs: 120,
            retries: 2,
            embedding_dim: 512,
            similarity_range: (-1.0, 1.0),
            max_concurrency: Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "payload", rename_all = "snake_case")]
pub enum WireRequest {
    Caption(CaptionPayload),
    Score(ScorePayload),
    Generate(GeneratePayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPayload {
    pub image_png_b64: String,
    pub mode: SamplingMode,
    pub count: usize,
    pub nucleus_p: f64,
    pub beam_width: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreInput {
    Image { image_png_b64: String },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePayload {
    pub inputs: Vec<ScoreInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratePayload {
    pub mode: DiffusionMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_png_b64: Option<String>,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_span: Option<ByteSpan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption_span: Option<ByteSpan>,
    pub w_l: f64,
    pub w_c: f64,
    pub renormalize: bool,
    pub guidance_scale: f64,
    pub strength: f64,
    pub denoising_steps: u32,
    pub num_inference_steps: u32,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Deserialize)]
struct CaptionResponse {
    captions: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct ScoreResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
struct GenerateResponse {
    image_png_b64: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ErrorResponse {
    error: String,
}

pub struct RemoteBackend {
    config: RemoteBackendConfig,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("config", &self.config)
            .finish()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Failure {
                backend: config.id.clone(),
                message: e.to_string(),
            })?;
        Ok(Self { config, client })
    }

    fn failure(&self, message: impl Into<String>) -> BackendError {
        BackendError::Failure {
            backend: self.config.id.clone(),
            message: message.into(),
        }
    }

    /// POST one request, retrying transport errors and 5xx responses.
    pub fn call(&self, request: &WireRequest) -> Result<serde_json::Value, BackendError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
            }
            let resp = match self.client.post(&self.config.url).json(request).send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    log::warn!("{}: attempt {} failed: {last}", self.config.id, attempt + 1);
                    continue;
                }
            };
            let status = resp.status();
            let body = resp.text().map_err(|e| self.failure(e.to_string()))?;
            if status.is_success() {
                return serde_json::from_str(&body)
                    .map_err(|e| self.failure(format!("malformed response: {e}")));
            }
            let message = serde_json::from_str::<ErrorResponse>(&body)
                .map(|e| e.error)
                .unwrap_or(body);
            last = format!("HTTP {status}: {message}");
            if status.is_client_error() {
                break;
            }
        }
        Err(self.failure(last))
    }

    fn decode<T: for<'de> Deserialize<'de>>(&self, v: serde_json::Value) -> Result<T, BackendError> {
        serde_json::from_value(v).map_err(|e| self.failure(format!("malformed response: {e}")))
    }

    fn embed(&self, inputs: Vec<ScoreInput>) -> Result<Vec<f64>, BackendError> {
        let v = self.call(&WireRequest::Score(ScorePayload { inputs }))?;
        let resp: ScoreResponse = self.decode(v)?;
        let emb = resp
            .embeddings
            .into_iter()
            .next()
            .ok_or_else(|| self.failure("empty embeddings"))?;
        if emb.len() != self.config.embedding_dim {
            return Err(self.failure(format!(
                "embedding has {} components, expected {}",
                emb.len(),
                self.config.embedding_dim
            )));
        }
        Ok(emb)
    }
}

pub fn encode_image_b64(image: &RgbImage) -> Result<String, BackendError> {
    let png = imageio::encode_png(image).map_err(|e| BackendError::InvalidInput(e.to_string()))?;
    Ok(B64.encode(png))
}

pub fn decode_image_b64(data: &str) -> Result<RgbImage, BackendError> {
    let bytes = B64
        .decode(data)
        .map_err(|e| BackendError::InvalidInput(format!("bad base64: {e}")))?;
    imageio::decode_rgb(&bytes).map_err(|e| BackendError::InvalidInput(e.to_string()))
}

impl Captioner for RemoteBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn capabilities(&self) -> CaptionerCapabilities {
        CaptionerCapabilities {
            modes: vec![SamplingMode::Beam, SamplingMode::Nucleus],
            max_count: 64,
            min_len: 1,
            max_len: 77,
            max_concurrency: self.config.max_concurrency,
        }
    }

    fn caption(
        &self,
        image: &RgbImage,
        config: &SamplingConfig,
        seed: u64,
    ) -> Result<Vec<String>, BackendError> {
        let req = WireRequest::Caption(CaptionPayload {
            image_png_b64: encode_image_b64(image)?,
            mode: config.mode,
            count: config.count,
            nucleus_p: config.nucleus_p,
            beam_width: config.beam_width,
            min_len: config.min_len,
            max_len: config.max_len,
            seed,
        });
        let resp: CaptionResponse = self.decode(self.call(&req)?)?;
        if resp.captions.len() != config.count {
            return Err(self.failure(format!(
                "asked for {} captions, got {}",
                config.count,
                resp.captions.len()
            )));
        }
        Ok(resp.captions)
    }
}

impl Scorer for RemoteBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    fn similarity_range(&self) -> (f64, f64) {
        self.config.similarity_range
    }

    fn max_concurrency(&self) -> Option<usize> {
        self.config.max_concurrency
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError> {
        self.embed(vec![ScoreInput::Image {
            image_png_b64: encode_image_b64(image)?,
        }])
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        self.embed(vec![ScoreInput::Text { text: text.into() }])
    }
}

impl Diffuser for RemoteBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn capabilities(&self) -> DiffusionCapabilities {
        DiffusionCapabilities {
            img2img: true,
            text2img: true,
            max_concurrency: self.config.max_concurrency,
        }
    }

    fn generate(&self, call: &DiffusionCall<'_>) -> Result<RgbImage, BackendError> {
        call.validate()?;
        let (width, height) = match call.mode {
            DiffusionMode::Img2img => call.source.map(|s| s.dimensions()).unwrap_or_default(),
            DiffusionMode::Text2img => call.output_size.unwrap_or_default(),
        };
        let req = WireRequest::Generate(GeneratePayload {
            mode: call.mode,
            image_png_b64: call.source.map(encode_image_b64).transpose()?,
            prompt: call.prompt.rendered_text.clone(),
            label_span: call.prompt.label_span,
            caption_span: call.prompt.caption_span,
            w_l: call.prompt.w_l,
            w_c: call.prompt.w_c,
            renormalize: call.prompt.renormalize,
            guidance_scale: call.guidance,
            strength: call.strength(),
            denoising_steps: call.denoising_steps,
            num_inference_steps: call.effective_steps(),
            seed: call.seed,
            width,
            height,
        });
        let resp: GenerateResponse = self.decode(self.call(&req)?)?;
        decode_image_b64(&resp.image_png_b64)
    }
}
