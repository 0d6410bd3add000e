//! Candidate captions per image, their image-text similarities, and the
//! selection of one caption `c*` with similarity `s*`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Captioner, Scorer};
use crate::imageio;
use crate::seed::{rng_from_seed, stage_seed};

/// Slack allowed on a backend's declared similarity range before a score is
/// treated as a backend fault.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CaptionError {
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("captioner {backend} does not support {mode} sampling")]
    UnsupportedMode { backend: String, mode: SamplingMode },
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("no captions to choose from")]
    EmptySet,
    #[error("similarity {value} outside the scorer's declared range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("caption cache io error: {0}")]
    Io(#[from] io::Error),
    #[error("caption cache parse error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Beam,
    Nucleus,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Beam => "beam",
            SamplingMode::Nucleus => "nucleus",
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beam" => Ok(SamplingMode::Beam),
            "nucleus" => Ok(SamplingMode::Nucleus),
            other => Err(format!("unknown sampling mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub count: usize,
    pub nucleus_p: f64,
    pub beam_width: usize,
    /// Caption length bounds, in whitespace tokens for the fakes.
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::Nucleus,
            count: 10,
            nucleus_p: 0.9,
            beam_width: 3,
            min_len: 5,
            max_len: 20,
        }
    }
}

impl SamplingConfig {
    pub fn beam(count: usize) -> Self {
        Self {
            mode: SamplingMode::Beam,
            count,
            ..Default::default()
        }
    }

    pub fn nucleus(count: usize) -> Self {
        Self {
            mode: SamplingMode::Nucleus,
            count,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), CaptionError> {
        let fail = |m: String| Err(CaptionError::InvalidConfig(m));
        if self.count < 1 {
            return fail("count must be at least 1".into());
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return fail(format!("nucleus_p {} not in (0, 1]", self.nucleus_p));
        }
        if self.beam_width < 1 {
            return fail("beam_width must be at least 1".into());
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return fail(format!(
                "length bounds {}..{} are invalid",
                self.min_len, self.max_len
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Random,
    /// Highest image-caption similarity; ties go to the lowest index.
    #[default]
    ClipFilter,
}

impl SelectionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::Random => "random",
            SelectionStrategy::ClipFilter => "clip_filter",
        }
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "random" => Ok(SelectionStrategy::Random),
            "clip_filter" => Ok(SelectionStrategy::ClipFilter),
            other => Err(format!("unknown selection strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub mode: SamplingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCaption {
    pub text: String,
    pub mode: SamplingMode,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCaptionSet {
    pub record_id: String,
    pub captions: Vec<ScoredCaption>,
    pub strategy: SelectionStrategy,
    pub chosen_index: usize,
    pub seed: u64,
}

impl ScoredCaptionSet {
    pub fn chosen(&self) -> &ScoredCaption {
        &self.captions[self.chosen_index]
    }

    pub fn c_star(&self) -> &str {
        &self.chosen().text
    }

    pub fn s_star(&self) -> f64 {
        self.chosen().similarity
    }
}

/// Run each sampling config against the captioner and concatenate the
/// results in config order. All configs are validated before any backend call.
pub fn generate_captions(
    captioner: &dyn Captioner,
    image: &RgbImage,
    configs: &[SamplingConfig],
    seed: u64,
) -> Result<Vec<Caption>, CaptionError> {
    if configs.is_empty() {
        return Err(CaptionError::InvalidConfig("no sampling configs".into()));
    }
    let caps = captioner.capabilities();
    for c in configs {
        c.validate()?;
        if !caps.modes.contains(&c.mode) {
            return Err(CaptionError::UnsupportedMode {
                backend: captioner.id().to_string(),
                mode: c.mode,
            });
        }
    }
    let mut out = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let texts = captioner.caption(image, c, stage_seed(seed, "sampling", i as u64))?;
        if texts.len() != c.count {
            return Err(BackendError::Failure {
                backend: captioner.id().to_string(),
                message: format!("requested {} captions, got {}", c.count, texts.len()),
            }
            .into());
        }
        out.extend(texts.into_iter().map(|text| Caption { text, mode: c.mode }));
    }
    Ok(out)
}

/// One similarity per caption, order-aligned, each inside the scorer's declared range.
pub fn score_captions(
    scorer: &dyn Scorer,
    image: &RgbImage,
    captions: &[String],
) -> Result<Vec<f64>, CaptionError> {
    if captions.is_empty() {
        return Err(CaptionError::EmptySet);
    }
    let (lo, hi) = scorer.similarity_range();
    captions
        .iter()
        .map(|c| {
            let s = scorer.image_text_similarity(image, c)?;
            if s.is_nan() || s < lo - RANGE_SLACK || s > hi + RANGE_SLACK {
                return Err(CaptionError::OutOfRange { value: s, lo, hi });
            }
            Ok(s.clamp(lo, hi))
        })
        .collect()
}

/// Index of the first maximum.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Pick `(c*, s*)`. `random_pool` restricts the random strategy to captions
/// from one sampling mode; clip_filter always searches the whole pool.
pub fn select_caption(
    captions: &[ScoredCaption],
    strategy: SelectionStrategy,
    random_pool: Option<SamplingMode>,
    seed: u64,
) -> Result<Selection, CaptionError> {
    if captions.is_empty() {
        return Err(CaptionError::EmptySet);
    }
    let index = match strategy {
        SelectionStrategy::ClipFilter => {
            let scores: Vec<f64> = captions.iter().map(|c| c.similarity).collect();
            argmax_first(&scores).ok_or(CaptionError::EmptySet)?
        }
        SelectionStrategy::Random => {
            let pool: Vec<usize> = captions
                .iter()
                .enumerate()
                .filter(|(_, c)| random_pool.is_none_or(|m| c.mode == m))
                .map(|(i, _)| i)
                .collect();
            if pool.is_empty() {
                return Err(CaptionError::EmptySet);
            }
            let mut rng = rng_from_seed(seed);
            pool[rng.random_range(0..pool.len())]
        }
    };
    Ok(Selection {
        index,
        similarity: captions[index].similarity,
    })
}

/// Full captioning step for one record: generate, score, select.
#[allow(clippy::too_many_arguments)]
pub fn caption_record(
    record_id: &str,
    image: &RgbImage,
    captioner: &dyn Captioner,
    scorer: &dyn Scorer,
    configs: &[SamplingConfig],
    strategy: SelectionStrategy,
    random_pool: Option<SamplingMode>,
    seed: u64,
) -> Result<ScoredCaptionSet, CaptionError> {
    let captions = generate_captions(captioner, image, configs, stage_seed(seed, "caption", 0))?;
    let texts: Vec<String> = captions.iter().map(|c| c.text.clone()).collect();
    let scores = score_captions(scorer, image, &texts)?;
    let scored: Vec<ScoredCaption> = captions
        .into_iter()
        .zip(scores)
        .map(|(c, similarity)| ScoredCaption {
            text: c.text,
            mode: c.mode,
            similarity,
        })
        .collect();
    let sel = select_caption(&scored, strategy, random_pool, stage_seed(seed, "select", 0))?;
    Ok(ScoredCaptionSet {
        record_id: record_id.to_string(),
        captions: scored,
        strategy,
        chosen_index: sel.index,
        seed,
    })
}

/// One line of the caption cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionCacheEntry {
    pub record_id: String,
    /// Sampling modes joined with `+`, in config order.
    pub mode: String,
    pub captions: Vec<String>,
    pub caption_modes: Vec<SamplingMode>,
    pub scores: Vec<f64>,
    pub chosen: String,
    pub chosen_index: usize,
    pub s_star: f64,
    pub strategy: SelectionStrategy,
    pub seed: u64,
    /// Hash of the captioning settings that produced the entry.
    pub config_hash: String,
}

impl CaptionCacheEntry {
    pub fn from_set(set: &ScoredCaptionSet, configs: &[SamplingConfig], config_hash: &str) -> Self {
        let mode = configs
            .iter()
            .map(|c| c.mode.as_str())
            .collect::<Vec<_>>()
            .join("+");
        Self {
            record_id: set.record_id.clone(),
            mode,
            captions: set.captions.iter().map(|c| c.text.clone()).collect(),
            caption_modes: set.captions.iter().map(|c| c.mode).collect(),
            scores: set.captions.iter().map(|c| c.similarity).collect(),
            chosen: set.c_star().to_string(),
            chosen_index: set.chosen_index,
            s_star: set.s_star(),
            strategy: set.strategy,
            seed: set.seed,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn to_set(&self) -> Option<ScoredCaptionSet> {
        if self.captions.len() != self.scores.len()
            || self.captions.len() != self.caption_modes.len()
            || self.chosen_index >= self.captions.len()
        {
            return None;
        }
        Some(ScoredCaptionSet {
            record_id: self.record_id.clone(),
            captions: self
                .captions
                .iter()
                .zip(&self.caption_modes)
                .zip(&self.scores)
                .map(|((t, m), s)| ScoredCaption {
                    text: t.clone(),
                    mode: *m,
                    similarity: *s,
                })
                .collect(),
            strategy: self.strategy,
            chosen_index: self.chosen_index,
            seed: self.seed,
        })
    }
}

/// JSONL caption cache keyed by record id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptionCache {
    entries: BTreeMap<String, CaptionCacheEntry>,
}

impl CaptionCache {
    pub fn load(path: &Path) -> Result<Self, CaptionError> {
        let mut cache = Self::default();
        if !path.exists() {
            return Ok(cache);
        }
        for line in fs::read_to_string(path)?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CaptionCacheEntry = serde_json::from_str(line)?;
            cache.entries.insert(entry.record_id.clone(), entry);
        }
        Ok(cache)
    }

    /// Cached set for the record if it was produced with the same seed and settings.
    pub fn lookup(&self, record_id: &str, seed: u64, config_hash: &str) -> Option<ScoredCaptionSet> {
        self.entries
            .get(record_id)
            .filter(|e| e.seed == seed && e.config_hash == config_hash)
            .and_then(CaptionCacheEntry::to_set)
    }

    pub fn insert(&mut self, entry: CaptionCacheEntry) {
        self.entries.insert(entry.record_id.clone(), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Write entries in `order` (record ids), skipping ids not in the cache.
    pub fn save(&self, path: &Path, order: &[String]) -> Result<(), CaptionError> {
        let mut out = String::new();
        for id in order {
            if let Some(e) = self.entries.get(id) {
                out.push_str(&serde_json::to_string(e)?);
                out.push('\n');
            }
        }
        imageio::write_atomic(path, out.as_bytes())?;
        Ok(())
    }
}
