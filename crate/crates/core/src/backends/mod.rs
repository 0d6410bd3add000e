//! Model backend contracts.
//!
//! The pipeline talks to three roles: a captioner, an image-text scorer and a
//! diffusion generator. Concrete backends are looked up by id through a
//! [`BackendRegistry`]; the core types never name a model family.
//!
//! [`fake`] provides pure, seeded stand-ins for all three roles so the whole
//! pipeline runs on a laptop without model weights. [`remote`] speaks the
//! JSON-over-HTTP protocol documented in `docs/protocol.md`.

pub mod fake;
pub mod registry;
pub mod remote;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::captioning::{SamplingConfig, SamplingMode};
use crate::prompting::WeightedPrompt;

pub use fake::{FakeCaptioner, FakeDiffuser, FakeFeature, FakeScorer};
pub use registry::BackendRegistry;
pub use remote::{RemoteBackend, RemoteBackendConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend {backend} does not support sampling mode {mode}")]
    UnsupportedMode { backend: String, mode: SamplingMode },
    #[error("img2img generation needs a source image")]
    MissingImage,
    #[error("noise rate {0} is outside [0, 1]")]
    BadNoiseRate(f64),
    #[error("text is empty")]
    EmptyText,
    #[error("invalid request: {0}")]
    InvalidInput(String),
    #[error("backend {backend} failed: {message}")]
    Failure { backend: String, message: String },
    #[error("no backend registered under id {0:?} for role {1}")]
    UnknownBackend(String, &'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionerCapabilities {
    pub modes: Vec<SamplingMode>,
    pub max_count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// `None` means safe for unbounded concurrent calls.
    pub max_concurrency: Option<usize>,
}

pub trait Captioner: Send + Sync {
    fn id(&self) -> &str;
    fn capabilities(&self) -> CaptionerCapabilities;
    /// Produce `config.count` captions for `image`. Fakes are pure functions
    /// of (image, config, seed); real backends are best-effort deterministic.
    fn caption(
        &self,
        image: &RgbImage,
        config: &SamplingConfig,
        seed: u64,
    ) -> Result<Vec<String>, BackendError>;
}

pub trait Scorer: Send + Sync {
    fn id(&self) -> &str;
    fn embedding_dim(&self) -> usize;
    /// Declared similarity range `[lo, hi]`, a subset of `[-1, 1]`.
    fn similarity_range(&self) -> (f64, f64);
    fn max_concurrency(&self) -> Option<usize> {
        None
    }
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError>;

    fn image_text_similarity(&self, image: &RgbImage, text: &str) -> Result<f64, BackendError> {
        Ok(cosine(&self.embed_image(image)?, &self.embed_text(text)?))
    }

    fn image_image_similarity(&self, a: &RgbImage, b: &RgbImage) -> Result<f64, BackendError> {
        Ok(cosine(&self.embed_image(a)?, &self.embed_image(b)?))
    }
}

/// Cosine similarity clamped to `[-1, 1]`; zero vectors give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    #[default]
    Img2img,
    Text2img,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffusionCapabilities {
    pub img2img: bool,
    pub text2img: bool,
    pub max_concurrency: Option<usize>,
}

/// Everything a diffusion backend needs for one image.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionCall<'a> {
    pub mode: DiffusionMode,
    pub source: Option<&'a RgbImage>,
    pub prompt: &'a WeightedPrompt,
    pub guidance: f64,
    pub noise_rate: f64,
    pub denoising_steps: u32,
    pub seed: u64,
    /// Required for text2img; ignored in img2img (output matches the source).
    pub output_size: Option<(u32, u32)>,
}

impl DiffusionCall<'_> {
    /// img2img strength: the noise rate applied to the source image.
    pub fn strength(&self) -> f64 {
        self.noise_rate
    }

    /// Denoising steps actually run by a strength-based img2img scheduler:
    /// `round(noise_rate * denoising_steps)`. Text2img runs all of them.
    pub fn effective_steps(&self) -> u32 {
        match self.mode {
            DiffusionMode::Img2img => (self.noise_rate * f64::from(self.denoising_steps)).round() as u32,
            DiffusionMode::Text2img => self.denoising_steps,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(BackendError::BadNoiseRate(self.noise_rate));
        }
        match self.mode {
            DiffusionMode::Img2img if self.source.is_none() => Err(BackendError::MissingImage),
            DiffusionMode::Text2img if self.output_size.is_none() => Err(
                BackendError::InvalidInput("text2img needs an output size".into()),
            ),
            _ => Ok(()),
        }
    }
}

pub trait Diffuser: Send + Sync {
    fn id(&self) -> &str;
    fn capabilities(&self) -> DiffusionCapabilities;
    fn generate(&self, call: &DiffusionCall<'_>) -> Result<RgbImage, BackendError>;
}
