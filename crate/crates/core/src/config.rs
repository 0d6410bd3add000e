//! Run configuration, its hash, and the ablation grids built from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backends::registry::FAKE_BACKEND_ID;
use crate::backends::{BackendError, BackendRegistry, DiffusionMode, RemoteBackendConfig};
use crate::baselines::PerturbationConfig;
use crate::captioning::{SamplingConfig, SamplingMode, SelectionStrategy};
use crate::filters::FilterKind;
use crate::prompting::{GuidanceConfig, GuidanceMapping, PromptMode, DEFAULT_CAPTION_WEIGHT, DEFAULT_LABEL_WEIGHT};
use crate::seed::sha256_hex;
use crate::trainer::ProbeConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendIds {
    pub caption: String,
    pub score: String,
    pub generate: String,
}

impl Default for BackendIds {
    fn default() -> Self {
        Self {
            caption: FAKE_BACKEND_ID.into(),
            score: FAKE_BACKEND_ID.into(),
            generate: FAKE_BACKEND_ID.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub global_seed: u64,
    pub dataset_manifest: Option<PathBuf>,
    pub backends: BackendIds,
    pub remote_backends: Vec<RemoteBackendConfig>,
    /// One entry per sampling pass; the candidate pool is their concatenation.
    pub sampling: Vec<SamplingConfig>,
    pub selection_strategy: SelectionStrategy,
    /// Restrict random selection to one sampling mode's captions.
    pub random_pool: Option<SamplingMode>,
    pub prompt_mode: PromptMode,
    pub bracket_mode: bool,
    pub w_l: f64,
    pub w_c: f64,
    pub renormalize: bool,
    pub guidance: GuidanceConfig,
    pub generation_mode: DiffusionMode,
    pub noise_rate: f64,
    /// Values swept by the noise ablation.
    pub noise_grid: Vec<f64>,
    pub denoising_steps: u32,
    pub k_augment: usize,
    /// Output size for text-to-image generation; defaults to the source size.
    pub text2img_size: Option<(u32, u32)>,
    pub train_only: bool,
    pub generation_retries: u32,
    /// Filters applied by `augment` after generation, in order.
    pub filters: Vec<FilterKind>,
    pub baseline: PerturbationConfig,
    pub trainer: ProbeConfig,

    // Runtime knobs below do not change outputs and are not hashed.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub no_cache: bool,
    pub journal_every: usize,
}

const RUNTIME_KEYS: &[&str] = &[
    "dataset_manifest",
    "remote_backends",
    "workers",
    "out_dir",
    "no_cache",
    "journal_every",
    "filters",
    "baseline",
    "trainer",
    "noise_grid",
];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            global_seed: 0,
            dataset_manifest: None,
            backends: BackendIds::default(),
            remote_backends: Vec::new(),
            sampling: vec![SamplingConfig::beam(10), SamplingConfig::nucleus(10)],
            selection_strategy: SelectionStrategy::ClipFilter,
            random_pool: None,
            prompt_mode: PromptMode::Full,
            bracket_mode: false,
            w_l: DEFAULT_LABEL_WEIGHT,
            w_c: DEFAULT_CAPTION_WEIGHT,
            renormalize: false,
            guidance: GuidanceConfig::default(),
            generation_mode: DiffusionMode::Img2img,
            noise_rate: 0.5,
            noise_grid: vec![0.3, 0.5, 0.7],
            denoising_steps: 100,
            k_augment: 1,
            text2img_size: None,
            train_only: true,
            generation_retries: 2,
            filters: Vec::new(),
            baseline: PerturbationConfig::default(),
            trainer: ProbeConfig::default(),
            workers: 1,
            out_dir: PathBuf::from("sgid-out"),
            no_cache: false,
            journal_every: 100,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.noise_rate) {
            return Err(invalid(format!("noise_rate {} outside [0, 1]", self.noise_rate)));
        }
        if let Some(v) = self.noise_grid.iter().find(|v| !unit(**v)) {
            return Err(invalid(format!("noise_grid value {v} outside [0, 1]")));
        }
        if self.denoising_steps == 0 {
            return Err(invalid("denoising_steps must be at least 1"));
        }
        if self.k_augment == 0 {
            return Err(invalid("k_augment must be at least 1"));
        }
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        if self.journal_every == 0 {
            return Err(invalid("journal_every must be at least 1"));
        }
        if !(self.w_l > 0.0 && self.w_c > 0.0 && self.w_l.is_finite() && self.w_c.is_finite()) {
            return Err(invalid(format!("weights must be positive, got w_l={} w_c={}", self.w_l, self.w_c)));
        }
        if self.sampling.is_empty() {
            return Err(invalid("sampling needs at least one entry"));
        }
        for s in &self.sampling {
            s.validate().map_err(|e| invalid(e.to_string()))?;
        }
        if let Some(pool) = self.random_pool {
            if !self.sampling.iter().any(|s| s.mode == pool) {
                return Err(invalid(format!("random_pool {} has no sampling entry", pool.as_str())));
            }
        }
        if self.guidance.mapping == GuidanceMapping::Constant && self.guidance.constant_value.is_none() {
            return Err(invalid("constant guidance mapping needs constant_value"));
        }
        if self.guidance.floor.is_some_and(|f| !f.is_finite()) {
            return Err(invalid("guidance floor must be finite"));
        }
        if self.text2img_size.is_some_and(|(w, h)| w == 0 || h == 0) {
            return Err(invalid("text2img_size must be non-zero"));
        }
        self.baseline.validate().map_err(|e| invalid(e.to_string()))?;
        self.trainer.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    /// Registry with the fakes plus every configured remote backend.
    pub fn registry(&self) -> Result<BackendRegistry, ConfigError> {
        let mut reg = BackendRegistry::with_fakes();
        for r in &self.remote_backends {
            reg.register_remote(r.clone())?;
        }
        Ok(reg)
    }

    /// Check every referenced backend id resolves and supports what it is asked to do.
    pub fn check_backends(&self, registry: &BackendRegistry) -> Result<(), ConfigError> {
        let captioner = registry.captioner(&self.backends.caption)?;
        registry.scorer(&self.backends.score)?;
        let diffuser = registry.diffuser(&self.backends.generate)?;
        // captions are always produced: s* drives guidance in every prompt mode
        let caps = captioner.capabilities();
        for s in &self.sampling {
            if !caps.modes.contains(&s.mode) {
                return Err(BackendError::UnsupportedMode {
                    backend: captioner.id().to_string(),
                    mode: s.mode,
                }
                .into());
            }
        }
        let dcaps = diffuser.capabilities();
        let supported = match self.generation_mode {
            DiffusionMode::Img2img => dcaps.img2img,
            DiffusionMode::Text2img => dcaps.text2img,
        };
        if !supported {
            return Err(invalid(format!(
                "diffusion backend {} does not support {:?}",
                diffuser.id(),
                self.generation_mode
            )));
        }
        Ok(())
    }

    fn hash_of(value: Value) -> String {
        // serde_json maps are sorted, so this serialization is canonical
        sha256_hex(value.to_string().as_bytes())
    }

    /// Hash of everything that can change generated outputs.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            for k in RUNTIME_KEYS {
                map.remove(*k);
            }
        }
        Self::hash_of(v)
    }

    /// Hash of the settings that define captioning output.
    pub fn caption_hash(&self) -> String {
        Self::hash_of(serde_json::json!({
            "captioner": self.backends.caption,
            "scorer": self.backends.score,
            "sampling": self.sampling,
            "selection_strategy": self.selection_strategy,
            "random_pool": self.random_pool,
        }))
    }

    /// Hash of the settings that define a baseline run.
    pub fn baseline_hash(&self) -> String {
        Self::hash_of(serde_json::json!({
            "global_seed": self.global_seed,
            "k_augment": self.k_augment,
            "train_only": self.train_only,
            "baseline": self.baseline,
        }))
    }
}

/// A named variant of a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: PipelineConfig,
}

fn variant(name: impl Into<String>, base: &PipelineConfig, edit: impl FnOnce(&mut PipelineConfig)) -> Variant {
    let mut config = base.clone();
    edit(&mut config);
    Variant {
        name: name.into(),
        config,
    }
}

/// No prompt / caption only / label only / full prompt.
pub fn prompt_mode_ablation(base: &PipelineConfig) -> Vec<Variant> {
    PromptMode::ALL
        .iter()
        .map(|&m| variant(format!("prompt_{}", m.as_str()), base, |c| c.prompt_mode = m))
        .collect()
}

/// One variant per value of `noise_grid`.
pub fn noise_ablation(base: &PipelineConfig) -> Vec<Variant> {
    base.noise_grid
        .iter()
        .map(|&n| variant(format!("noise_{n}"), base, |c| c.noise_rate = n))
        .collect()
}

/// Random beam caption / random nucleus caption / similarity-selected caption.
pub fn caption_ablation(base: &PipelineConfig) -> Vec<Variant> {
    vec![
        variant("caption_beam_random", base, |c| {
            c.selection_strategy = SelectionStrategy::Random;
            c.random_pool = Some(SamplingMode::Beam);
        }),
        variant("caption_nucleus_random", base, |c| {
            c.selection_strategy = SelectionStrategy::Random;
            c.random_pool = Some(SamplingMode::Nucleus);
        }),
        variant("caption_clip_filter", base, |c| {
            c.selection_strategy = SelectionStrategy::ClipFilter;
            c.random_pool = None;
        }),
    ]
}

/// Unit weights against the configured label/caption weights.
pub fn weighting_ablation(base: &PipelineConfig) -> Vec<Variant> {
    vec![
        variant("weights_unit", base, |c| {
            c.w_l = 1.0;
            c.w_c = 1.0;
        }),
        variant("weights_default", base, |_| {}),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&json).unwrap(), c);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(PipelineConfig::from_json(r#"{"noise":0.5}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [
            r#"{"noise_rate":1.5}"#,
            r#"{"k_augment":0}"#,
            r#"{"denoising_steps":0}"#,
            r#"{"w_l":0}"#,
            r#"{"sampling":[]}"#,
            r#"{"guidance":{"mapping":"constant"}}"#,
        ] {
            assert!(PipelineConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_ignores_runtime_knobs() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            workers: 8,
            out_dir: "elsewhere".into(),
            no_cache: true,
            ..a.clone()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = PipelineConfig { noise_rate: 0.7, ..a.clone() };
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.caption_hash(), c.caption_hash());
    }

    #[test]
    fn ablation_grids() {
        let base = PipelineConfig::default();
        let p = prompt_mode_ablation(&base);
        assert_eq!(p.len(), 4);
        assert_eq!(p[3].config.prompt_mode, PromptMode::Full);
        let n = noise_ablation(&base);
        assert_eq!(n.iter().map(|v| v.config.noise_rate).collect::<Vec<_>>(), vec![0.3, 0.5, 0.7]);
        for v in caption_ablation(&base) {
            v.config.validate().unwrap();
        }
        let hashes: std::collections::BTreeSet<String> =
            p.iter().chain(&n).map(|v| v.config.config_hash()).collect();
        assert_eq!(hashes.len(), 6);
    }

    #[test]
    fn backends_checked_against_registry() {
        let c = PipelineConfig::default();
        let reg = c.registry().unwrap();
        c.check_backends(&reg).unwrap();
        let bad = PipelineConfig {
            backends: BackendIds {
                generate: "nope".into(),
                ..Default::default()
            },
            ..c
        };
        assert!(bad.check_backends(&reg).is_err());
    }
}
