//! Deterministic stand-ins for the captioner, scorer and diffusion roles.
//!
//! Features live in a 64-dimensional nonnegative unit sphere:
//! - images: grayscale mean-pooled onto an 8x8 grid, L2-normalized;
//! - text: case-folded byte 3-grams hashed (FNV-1a) into 64 bins, L2-normalized.
//!
//! Both are nonnegative, so every fake similarity lies in `[0, 1]`.

use image::RgbImage;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    BackendError, Captioner, CaptionerCapabilities, DiffusionCall, DiffusionCapabilities,
    DiffusionMode, Diffuser, Scorer,
};
use crate::captioning::{SamplingConfig, SamplingMode};
use crate::seed::{fnv1a64, stage_seed};

pub const FAKE_DIM: usize = 64;
const GRID: usize = 8;

/// Unit-norm, nonnegative 64-component feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FakeFeature([f64; FAKE_DIM]);

impl FakeFeature {
    /// Normalize raw nonnegative bins; an all-zero input becomes the uniform vector.
    fn from_bins(bins: [f64; FAKE_DIM]) -> Self {
        let norm = bins.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return FakeFeature([1.0 / (FAKE_DIM as f64).sqrt(); FAKE_DIM]);
        }
        let mut out = bins;
        for v in &mut out {
            *v /= norm;
        }
        FakeFeature(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &FakeFeature) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Gray level used by the fake image feature.
pub fn fake_luma(p: &image::Rgb<u8>) -> f64 {
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

/// Pixel column `x` of a `width`-wide image falls in grid cell `x * 8 / width`.
pub fn fake_image_feature(image: &RgbImage) -> FakeFeature {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut sums = [0.0f64; FAKE_DIM];
    let mut counts = [0usize; FAKE_DIM];
    for (x, y, p) in image.enumerate_pixels() {
        let gx = x as usize * GRID / w;
        let gy = y as usize * GRID / h;
        let cell = gy * GRID + gx;
        sums[cell] += fake_luma(p);
        counts[cell] += 1;
    }
    let mut bins = [0.0f64; FAKE_DIM];
    for i in 0..FAKE_DIM {
        if counts[i] > 0 {
            bins[i] = sums[i] / counts[i] as f64;
        }
    }
    FakeFeature::from_bins(bins)
}

/// Texts shorter than three bytes count as a single gram.
pub fn fake_text_feature(text: &str) -> Result<FakeFeature, BackendError> {
    if text.is_empty() {
        return Err(BackendError::EmptyText);
    }
    let folded = text.to_lowercase();
    let bytes = folded.as_bytes();
    let mut bins = [0.0f64; FAKE_DIM];
    if bytes.len() < 3 {
        bins[(fnv1a64(bytes) % FAKE_DIM as u64) as usize] += 1.0;
    } else {
        for gram in bytes.windows(3) {
            bins[(fnv1a64(gram) % FAKE_DIM as u64) as usize] += 1.0;
        }
    }
    Ok(FakeFeature::from_bins(bins))
}

/// Coarse color word used as the fake captioner's subject hint.
pub fn color_hint(image: &RgbImage) -> &'static str {
    let n = (image.width() * image.height()).max(1) as f64;
    let mut mean = [0.0f64; 3];
    for p in image.pixels() {
        for c in 0..3 {
            mean[c] += f64::from(p[c]);
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let lum = (mean[0] + mean[1] + mean[2]) / 3.0;
    let spread = mean.iter().cloned().fold(f64::MIN, f64::max)
        - mean.iter().cloned().fold(f64::MAX, f64::min);
    if spread < 24.0 {
        return if lum < 64.0 {
            "dark"
        } else if lum > 192.0 {
            "bright"
        } else {
            "gray"
        };
    }
    let idx = (0..3)
        .max_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    ["red", "green", "blue"][idx]
}

const SAFE_PHRASES: [&str; 3] = ["in the frame", "on a plain background", "in daylight"];
const DIVERSE_PHRASES: [&str; 10] = [
    "in a desert",
    "on green grass",
    "at night",
    "near the sea",
    "under bright light",
    "with a blurred background",
    "in the city",
    "on a wooden table",
    "next to a tree",
    "in the snow",
];

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Template captions `a synthetic photo of <hint> variant <i>` extended with
/// seeded scene phrases. Beam mode draws at most one phrase from a small safe
/// set; nucleus mode draws up to four from a wider set.
pub fn fake_captions(
    image: &RgbImage,
    config: &SamplingConfig,
    seed: u64,
) -> Result<Vec<String>, BackendError> {
    config
        .validate()
        .map_err(|e| BackendError::InvalidInput(e.to_string()))?;
    let hint = color_hint(image);
    let mut out = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let base = format!("a synthetic photo of {hint} variant {i}");
        if word_count(&base) > config.max_len {
            return Err(BackendError::InvalidInput(format!(
                "max_len {} is shorter than the fake caption template",
                config.max_len
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, config.mode.as_str(), i as u64));
        let (pool, extra): (&[&str], usize) = match config.mode {
            SamplingMode::Beam => (&SAFE_PHRASES, rng.random_range(0..=1)),
            SamplingMode::Nucleus => (&DIVERSE_PHRASES, rng.random_range(0..=4)),
        };
        let mut caption = base;
        for _ in 0..extra {
            let phrase = pool[rng.random_range(0..pool.len())];
            if word_count(&caption) + word_count(phrase) <= config.max_len {
                caption.push(' ');
                caption.push_str(phrase);
            }
        }
        while word_count(&caption) < config.min_len {
            caption.push_str(" scene");
        }
        out.push(caption);
    }
    Ok(out)
}

/// Seeded noise image keyed by (seed, prompt).
pub fn fake_noise_image(width: u32, height: u32, seed: u64, prompt: &str) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(prompt.as_bytes()));
    let mut buf = vec![0u8; width as usize * height as usize * 3];
    rng.fill_bytes(&mut buf);
    RgbImage::from_raw(width, height, buf).expect("buffer sized for image")
}

/// img2img: `round((1 - n) * x + n * N)` per channel; text2img: `N` alone.
pub fn fake_diffusion(
    source: Option<&RgbImage>,
    prompt: &str,
    noise_rate: f64,
    seed: u64,
    mode: DiffusionMode,
    output_size: Option<(u32, u32)>,
) -> Result<RgbImage, BackendError> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(BackendError::BadNoiseRate(noise_rate));
    }
    match mode {
        DiffusionMode::Img2img => {
            let src = source.ok_or(BackendError::MissingImage)?;
            let noise = fake_noise_image(src.width(), src.height(), seed, prompt);
            let mut out = src.clone();
            for (o, n) in out.iter_mut().zip(noise.iter()) {
                let v = (1.0 - noise_rate) * f64::from(*o) + noise_rate * f64::from(*n);
                *o = v.round().clamp(0.0, 255.0) as u8;
            }
            Ok(out)
        }
        DiffusionMode::Text2img => {
            let (w, h) = output_size
                .or_else(|| source.map(|s| s.dimensions()))
                .ok_or_else(|| BackendError::InvalidInput("text2img needs an output size".into()))?;
            Ok(fake_noise_image(w, h, seed, prompt))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FakeCaptioner {
    id: String,
    modes: Vec<SamplingMode>,
}

impl FakeCaptioner {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            modes: vec![SamplingMode::Beam, SamplingMode::Nucleus],
        }
    }

    pub fn with_modes(mut self, modes: Vec<SamplingMode>) -> Self {
        self.modes = modes;
        self
    }
}

impl Captioner for FakeCaptioner {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> CaptionerCapabilities {
        CaptionerCapabilities {
            modes: self.modes.clone(),
            max_count: 64,
            min_len: 1,
            max_len: 64,
            max_concurrency: None,
        }
    }

    fn caption(
        &self,
        image: &RgbImage,
        config: &SamplingConfig,
        seed: u64,
    ) -> Result<Vec<String>, BackendError> {
        if !self.modes.contains(&config.mode) {
            return Err(BackendError::UnsupportedMode {
                backend: self.id.clone(),
                mode: config.mode,
            });
        }
        fake_captions(image, config, seed)
    }
}

#[derive(Debug, Clone)]
pub struct FakeScorer {
    id: String,
}

impl FakeScorer {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }
}

impl Scorer for FakeScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn embedding_dim(&self) -> usize {
        FAKE_DIM
    }

    fn similarity_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError> {
        Ok(fake_image_feature(image).as_slice().to_vec())
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        Ok(fake_text_feature(text)?.as_slice().to_vec())
    }

    fn image_text_similarity(&self, image: &RgbImage, text: &str) -> Result<f64, BackendError> {
        Ok(fake_image_feature(image)
            .dot(&fake_text_feature(text)?)
            .clamp(0.0, 1.0))
    }

    fn image_image_similarity(&self, a: &RgbImage, b: &RgbImage) -> Result<f64, BackendError> {
        Ok(fake_image_feature(a)
            .dot(&fake_image_feature(b))
            .clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone)]
pub struct FakeDiffuser {
    id: String,
}

impl FakeDiffuser {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }
}

impl Diffuser for FakeDiffuser {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> DiffusionCapabilities {
        DiffusionCapabilities {
            img2img: true,
            text2img: true,
            max_concurrency: None,
        }
    }

    fn generate(&self, call: &DiffusionCall<'_>) -> Result<RgbImage, BackendError> {
        call.validate()?;
        fake_diffusion(
            call.source,
            &call.prompt.rendered_text,
            call.noise_rate,
            call.seed,
            call.mode,
            call.output_size,
        )
    }
}
