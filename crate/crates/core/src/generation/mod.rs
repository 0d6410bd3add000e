//! Generation: turn a captioned record into weighted prompts and guidance,
//! call the diffusion backend, and record everything in a manifest.

pub mod manifest;

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::Serialize;

pub use manifest::{
    AugRecord, AugmentationManifest, CaptionProvenance, FilterStatus, GenerationRequest,
    ManifestHeader, RecordStatus, StatusCounts, AUG_FORMAT_VERSION,
};

use crate::backends::{BackendError, BackendRegistry, Captioner, DiffusionCall, DiffusionMode, Diffuser, Scorer};
use crate::captioning::{caption_record, CaptionCache, CaptionCacheEntry, CaptionError, ScoredCaptionSet};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{DatasetError, DatasetManifest, ImageRecord};
use crate::imageio::{self, ImageIoError};
use crate::prompting::{build_prompt, guidance_scale, PromptError};
use crate::seed::{record_seed, stage_seed};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PARTIAL_MANIFEST_FILE: &str = "manifest.partial.jsonl";
pub const CAPTION_CACHE_FILE: &str = "captions.jsonl";
pub const EVENT_LOG_FILE: &str = "events.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("invalid augmentation manifest: {0}")]
    InvalidManifest(String),
    #[error("prompt is empty; text-to-image needs a label or caption")]
    EmptyPrompt,
    #[error("backend returned {got:?} for a {expected:?} source image")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenerationError + '_ {
    move |source| GenerationError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn call_for<'a>(request: &'a GenerationRequest, source: Option<&'a RgbImage>) -> DiffusionCall<'a> {
    DiffusionCall {
        mode: request.mode,
        source,
        prompt: &request.prompt,
        guidance: request.g_applied,
        noise_rate: request.noise_rate,
        denoising_steps: request.denoising_steps,
        seed: request.seed,
        output_size: request.output_size,
    }
}

/// Image-to-image generation. The output must match the source size.
pub fn augment_image(
    source: &RgbImage,
    request: &GenerationRequest,
    diffuser: &dyn Diffuser,
) -> Result<RgbImage, GenerationError> {
    request.validate()?;
    if request.mode != DiffusionMode::Img2img {
        return Err(GenerationError::InvalidRequest("augment_image needs img2img mode".into()));
    }
    let out = diffuser.generate(&call_for(request, Some(source)))?;
    if out.dimensions() != source.dimensions() {
        return Err(GenerationError::DimensionMismatch {
            expected: source.dimensions(),
            got: out.dimensions(),
        });
    }
    Ok(out)
}

/// Text-to-image generation from the prompt alone.
pub fn text_to_image(request: &GenerationRequest, diffuser: &dyn Diffuser) -> Result<RgbImage, GenerationError> {
    request.validate()?;
    if request.prompt.is_empty() {
        return Err(GenerationError::EmptyPrompt);
    }
    let size = request
        .output_size
        .ok_or_else(|| GenerationError::InvalidRequest("text2img needs output_size".into()))?;
    let out = diffuser.generate(&call_for(request, None))?;
    if out.dimensions() != size {
        return Err(GenerationError::DimensionMismatch {
            expected: size,
            got: out.dimensions(),
        });
    }
    Ok(out)
}

/// Build the generation request for one augmented copy of `record`.
pub fn build_request(
    record: &ImageRecord,
    captions: &ScoredCaptionSet,
    config: &PipelineConfig,
    diffuser_id: &str,
    aug_index: usize,
    source_size: (u32, u32),
) -> Result<GenerationRequest, GenerationError> {
    let prompt = build_prompt(
        &record.label_text,
        Some(captions.c_star()),
        config.prompt_mode,
        config.bracket_mode,
    )?
    .with_weights(config.w_l, config.w_c)?;
    let prompt = crate::prompting::WeightedPrompt {
        renormalize: config.renormalize,
        ..prompt
    };
    let g = guidance_scale(captions.s_star(), &config.guidance)?;
    let rseed = record_seed(config.global_seed, &record.record_id);
    Ok(GenerationRequest {
        record_id: record.record_id.clone(),
        aug_index,
        prompt,
        g_applied: g.applied,
        g_raw: config.guidance.record_raw.then_some(g.raw),
        noise_rate: config.noise_rate,
        denoising_steps: config.denoising_steps,
        seed: stage_seed(rseed, "generate", aug_index as u64),
        mode: config.generation_mode,
        backend_id: diffuser_id.to_string(),
        output_size: match config.generation_mode {
            DiffusionMode::Img2img => None,
            DiffusionMode::Text2img => Some(config.text2img_size.unwrap_or(source_size)),
        },
    })
}

fn generate_with_retries(
    source: &RgbImage,
    request: &GenerationRequest,
    diffuser: &dyn Diffuser,
    retries: u32,
) -> Result<RgbImage, GenerationError> {
    let mut attempt = 0;
    loop {
        let result = match request.mode {
            DiffusionMode::Img2img => augment_image(source, request, diffuser),
            DiffusionMode::Text2img => text_to_image(request, diffuser),
        };
        match result {
            Err(GenerationError::Backend(BackendError::Failure { .. })) if attempt < retries => {
                attempt += 1;
                log::warn!(
                    "generation for {}#{} failed, retry {attempt}/{retries}",
                    request.record_id,
                    request.aug_index
                );
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event<'a> {
    RunStarted {
        config_hash: &'a str,
        records: usize,
        resumed: usize,
    },
    RecordDone {
        record_id: &'a str,
        aug_index: usize,
        ok: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<&'a str>,
    },
    Checkpoint {
        done: usize,
        total: usize,
    },
    RunFinished {
        ok: usize,
        failed: usize,
    },
}

struct EventLog {
    file: Option<std::fs::File>,
}

impl EventLog {
    fn open(path: &Path) -> Result<Self, GenerationError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self { file: Some(file) })
    }

    fn emit(&mut self, event: &Event<'_>) {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(event).expect("event serializes");
            if writeln!(f, "{line}").is_err() {
                log::warn!("event log write failed; disabling event log");
                self.file = None;
            }
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest_path: PathBuf,
    pub manifest: AugmentationManifest,
    /// Originals taken over from an interrupted run.
    pub resumed: usize,
    pub captions_from_cache: usize,
}

pub type ProgressFn<'a> = &'a (dyn Fn(usize, usize) + Sync);

struct Backends {
    captioner: std::sync::Arc<dyn Captioner>,
    scorer: std::sync::Arc<dyn Scorer>,
    diffuser: std::sync::Arc<dyn Diffuser>,
}

impl Backends {
    fn concurrency_cap(&self) -> Option<usize> {
        [
            self.captioner.capabilities().max_concurrency,
            self.scorer.max_concurrency(),
            self.diffuser.capabilities().max_concurrency,
        ]
        .into_iter()
        .flatten()
        .min()
    }
}

fn failed_record(record: &ImageRecord, config: &PipelineConfig, backend_id: &str, k: usize, error: String) -> AugRecord {
    let rseed = record_seed(config.global_seed, &record.record_id);
    AugRecord {
        record_id: record.record_id.clone(),
        aug_index: k,
        label_raw: record.label_raw.clone(),
        label_text: record.label_text.clone(),
        source_path: Some(record.source_path.clone()),
        method: method_name(config).into(),
        backend_id: backend_id.into(),
        seed: stage_seed(rseed, "generate", k as u64),
        request: None,
        caption: None,
        soft_label: None,
        status: RecordStatus::Failed,
        output_path: None,
        checksum: None,
        error: Some(error),
        filter_status: FilterStatus::Pending,
    }
}

fn method_name(config: &PipelineConfig) -> &'static str {
    match config.generation_mode {
        DiffusionMode::Img2img => "sgid",
        DiffusionMode::Text2img => "text2img",
    }
}

struct RecordOutcome {
    records: Vec<AugRecord>,
    caption: Option<(ScoredCaptionSet, bool)>,
}

fn process_record(
    dataset: &DatasetManifest,
    record: &ImageRecord,
    config: &PipelineConfig,
    backends: &Backends,
    cache: &CaptionCache,
    caption_hash: &str,
    out_dir: &Path,
) -> RecordOutcome {
    let diffuser_id = backends.diffuser.id().to_string();
    let fail_all = |e: String| RecordOutcome {
        records: (0..config.k_augment)
            .map(|k| failed_record(record, config, &diffuser_id, k, e.clone()))
            .collect(),
        caption: None,
    };
    let source = match dataset.load_image(record) {
        Ok(img) => img,
        Err(e) => return fail_all(e.to_string()),
    };
    let rseed = record_seed(config.global_seed, &record.record_id);
    let cached = if config.no_cache {
        None
    } else {
        cache.lookup(&record.record_id, rseed, caption_hash)
    };
    let (captions, from_cache) = match cached {
        Some(set) => (set, true),
        None => match caption_record(
            &record.record_id,
            &source,
            backends.captioner.as_ref(),
            backends.scorer.as_ref(),
            &config.sampling,
            config.selection_strategy,
            config.random_pool,
            rseed,
        ) {
            Ok(set) => (set, false),
            Err(e) => return fail_all(e.to_string()),
        },
    };
    let provenance = CaptionProvenance {
        c_star: captions.c_star().to_string(),
        s_star: captions.s_star(),
        strategy: captions.strategy,
    };
    let records = (0..config.k_augment)
        .map(|k| {
            let request = match build_request(record, &captions, config, &diffuser_id, k, source.dimensions()) {
                Ok(r) => r,
                Err(e) => return failed_record(record, config, &diffuser_id, k, e.to_string()),
            };
            let rel = AugRecord::default_output_path(&record.label_raw, &record.record_id, k);
            let result = generate_with_retries(&source, &request, backends.diffuser.as_ref(), config.generation_retries)
                .and_then(|img| {
                    let png = imageio::encode_png(&img)?;
                    let path = out_dir.join(&rel);
                    imageio::write_atomic(&path, &png).map_err(io_err(&path))?;
                    Ok(imageio::png_checksum(&png))
                });
            let (status, output_path, checksum, error) = match result {
                Ok(sum) => (RecordStatus::Ok, Some(rel), Some(sum), None),
                Err(e) => (RecordStatus::Failed, None, None, Some(e.to_string())),
            };
            AugRecord {
                record_id: record.record_id.clone(),
                aug_index: k,
                label_raw: record.label_raw.clone(),
                label_text: record.label_text.clone(),
                source_path: match config.generation_mode {
                    DiffusionMode::Img2img => Some(record.source_path.clone()),
                    DiffusionMode::Text2img => None,
                },
                method: method_name(config).into(),
                backend_id: diffuser_id.clone(),
                seed: request.seed,
                request: Some(request),
                caption: Some(provenance.clone()),
                soft_label: None,
                status,
                output_path,
                checksum,
                error,
                filter_status: FilterStatus::Pending,
            }
        })
        .collect();
    RecordOutcome {
        records,
        caption: Some((captions, from_cache)),
    }
}

/// Records from an interrupted run that can be reused: same config hash, all
/// `k_augment` copies present, and successful outputs intact on disk.
fn resumable(partial: &Path, config_hash: &str, k_augment: usize, out_dir: &Path) -> HashMap<String, Vec<AugRecord>> {
    let Ok(m) = AugmentationManifest::read(partial) else {
        return HashMap::new();
    };
    if m.header.config_hash != config_hash {
        log::info!("ignoring partial manifest from a different config");
        return HashMap::new();
    }
    let mut by_id: HashMap<String, Vec<AugRecord>> = HashMap::new();
    for r in m.records {
        by_id.entry(r.record_id.clone()).or_default().push(r);
    }
    by_id.retain(|_, recs| {
        recs.len() == k_augment
            && recs.iter().all(|r| {
                !r.is_ok()
                    || match (&r.output_path, &r.checksum) {
                        (Some(p), Some(c)) => imageio::file_checksum(&out_dir.join(p)).ok().as_ref() == Some(c),
                        _ => false,
                    }
            })
    });
    by_id
}

/// Run captioning and generation over the dataset, writing images,
/// `manifest.jsonl`, the caption cache and an event log under `config.out_dir`.
pub fn run_pipeline(
    dataset: &DatasetManifest,
    config: &PipelineConfig,
    registry: &BackendRegistry,
    progress: Option<ProgressFn<'_>>,
) -> Result<RunSummary, GenerationError> {
    config.validate()?;
    config.check_backends(registry)?;
    dataset.validate()?;
    let backends = Backends {
        captioner: registry.captioner(&config.backends.caption)?,
        scorer: registry.scorer(&config.backends.score)?,
        diffuser: registry.diffuser(&config.backends.generate)?,
    };
    let out_dir = config.out_dir.as_path();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let config_hash = config.config_hash();
    let caption_hash = config.caption_hash();
    let cache_path = out_dir.join(CAPTION_CACHE_FILE);
    let partial_path = out_dir.join(PARTIAL_MANIFEST_FILE);
    let mut cache = if config.no_cache {
        CaptionCache::default()
    } else {
        CaptionCache::load(&cache_path)?
    };

    let records: Vec<&ImageRecord> = dataset
        .records
        .iter()
        .filter(|r| !config.train_only || r.is_train())
        .collect();
    let mut reused = resumable(&partial_path, &config_hash, config.k_augment, out_dir);
    let resumed = records.iter().filter(|r| reused.contains_key(&r.record_id)).count();

    let workers = backends
        .concurrency_cap()
        .map_or(config.workers, |cap| config.workers.min(cap.max(1)));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| GenerationError::InvalidRequest(format!("cannot start worker pool: {e}")))?;

    let mut events = EventLog::open(&out_dir.join(EVENT_LOG_FILE))?;
    events.emit(&Event::RunStarted {
        config_hash: &config_hash,
        records: records.len(),
        resumed,
    });

    let header = ManifestHeader {
        format_version: AUG_FORMAT_VERSION.into(),
        method: method_name(config).into(),
        config_hash: config_hash.clone(),
        k_augment: config.k_augment,
        dataset_root: dataset.root_path.clone(),
        record_count: records.len(),
    };
    let mut done: Vec<AugRecord> = Vec::with_capacity(records.len() * config.k_augment);
    let mut captions_from_cache = 0;
    let order: Vec<String> = records.iter().map(|r| r.record_id.clone()).collect();

    for (chunk_index, chunk) in records.chunks(config.journal_every).enumerate() {
        let outcomes: Vec<RecordOutcome> = pool.install(|| {
            chunk
                .par_iter()
                .map(|r| match reused.get(&r.record_id) {
                    Some(recs) => RecordOutcome {
                        records: recs.clone(),
                        caption: None,
                    },
                    None => process_record(dataset, r, config, &backends, &cache, &caption_hash, out_dir),
                })
                .collect()
        });
        for outcome in outcomes {
            if let Some((set, from_cache)) = outcome.caption {
                if from_cache {
                    captions_from_cache += 1;
                } else {
                    cache.insert(CaptionCacheEntry::from_set(&set, &config.sampling, &caption_hash));
                }
            }
            for r in &outcome.records {
                events.emit(&Event::RecordDone {
                    record_id: &r.record_id,
                    aug_index: r.aug_index,
                    ok: r.is_ok(),
                    error: r.error.as_deref(),
                });
            }
            done.extend(outcome.records);
        }
        let finished = (chunk_index * config.journal_every + chunk.len()).min(records.len());
        let journal = AugmentationManifest {
            header: header.clone(),
            records: done.clone(),
        };
        journal.write(&partial_path)?;
        if !config.no_cache {
            cache.save(&cache_path, &order)?;
        }
        events.emit(&Event::Checkpoint {
            done: finished,
            total: records.len(),
        });
        if let Some(p) = progress {
            p(finished, records.len());
        }
    }
    reused.clear();

    let manifest = AugmentationManifest { header, records: done };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    if partial_path.exists() {
        std::fs::remove_file(&partial_path).map_err(io_err(&partial_path))?;
    }
    let counts = manifest.counts();
    events.emit(&Event::RunFinished {
        ok: counts.total() - counts.failed,
        failed: counts.failed,
    });
    Ok(RunSummary {
        manifest_path,
        manifest,
        resumed,
        captions_from_cache,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::FakeDiffuser;
    use crate::prompting::PromptMode;

    fn request(mode: DiffusionMode, prompt_mode: PromptMode) -> GenerationRequest {
        let caption = prompt_mode.needs_caption().then_some("a red ball");
        GenerationRequest {
            record_id: "r".into(),
            aug_index: 0,
            prompt: build_prompt("ball", caption, prompt_mode, false).unwrap(),
            g_applied: 1.0,
            g_raw: None,
            noise_rate: 0.5,
            denoising_steps: 10,
            seed: 7,
            mode,
            backend_id: "fake".into(),
            output_size: (mode == DiffusionMode::Text2img).then_some((8, 6)),
        }
    }

    #[test]
    fn img2img_preserves_size() {
        let src = RgbImage::from_pixel(12, 9, image::Rgb([1, 2, 3]));
        let out = augment_image(&src, &request(DiffusionMode::Img2img, PromptMode::Full), &FakeDiffuser::new("fake")).unwrap();
        assert_eq!(out.dimensions(), (12, 9));
    }

    #[test]
    fn text2img_rejects_empty_prompt() {
        let d = FakeDiffuser::new("fake");
        assert!(matches!(
            text_to_image(&request(DiffusionMode::Text2img, PromptMode::None), &d),
            Err(GenerationError::EmptyPrompt)
        ));
        let img = text_to_image(&request(DiffusionMode::Text2img, PromptMode::LabelOnly), &d).unwrap();
        assert_eq!(img.dimensions(), (8, 6));
    }

    #[test]
    fn invalid_noise_rejected_before_backend() {
        let src = RgbImage::new(4, 4);
        let mut r = request(DiffusionMode::Img2img, PromptMode::Full);
        r.noise_rate = 1.2;
        assert!(matches!(
            augment_image(&src, &r, &FakeDiffuser::new("fake")),
            Err(GenerationError::InvalidRequest(_))
        ));
    }

    struct Shrinking;
    impl Diffuser for Shrinking {
        fn id(&self) -> &str {
            "shrinking"
        }
        fn capabilities(&self) -> crate::backends::DiffusionCapabilities {
            crate::backends::DiffusionCapabilities {
                img2img: true,
                text2img: false,
                max_concurrency: None,
            }
        }
        fn generate(&self, _: &DiffusionCall<'_>) -> Result<RgbImage, BackendError> {
            Ok(RgbImage::new(2, 2))
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let src = RgbImage::new(4, 4);
        assert!(matches!(
            augment_image(&src, &request(DiffusionMode::Img2img, PromptMode::Full), &Shrinking),
            Err(GenerationError::DimensionMismatch { .. })
        ));
    }
}
