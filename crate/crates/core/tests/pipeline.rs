mod common;

use std::sync::Arc;

use sgid_core::backends::{BackendError, BackendRegistry, DiffusionCall, DiffusionCapabilities, Diffuser, FakeDiffuser};
use sgid_core::captioning::CaptionCache;
use sgid_core::generation::{run_pipeline, AugmentationManifest, RecordStatus, CAPTION_CACHE_FILE, MANIFEST_FILE};
use sgid_core::imageio;
use sgid_core::prompting::PromptMode;
use sgid_core::seed::fnv1a64;

#[test]
fn thirty_records_no_failures() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 10);
    let summary = common::run(&ds, &common::config(dir.path().join("out")));
    let m = &summary.manifest;
    assert_eq!(m.records.len(), 30);
    assert!(m.records.iter().all(|r| r.is_ok()));
    assert_eq!(m.counts().pending, 30);
    m.verify_checksums(&dir.path().join("out")).unwrap();
    for r in &m.records {
        let req = r.request.as_ref().unwrap();
        assert_eq!(req.prompt.prompt_mode, PromptMode::Full);
        assert!(req.prompt.rendered_text.starts_with("A picture of a "));
        assert_eq!(r.output_path.as_deref().unwrap(), format!("{}/{}_0.png", r.label_raw, r.record_id));
        let g = -4.0 * r.caption.as_ref().unwrap().s_star.powi(2) + 2.0 * r.caption.as_ref().unwrap().s_star + 1.0;
        assert!((req.g_raw.unwrap() - g).abs() < 1e-12);
    }
    assert!(!dir.path().join("out").join("manifest.partial.jsonl").exists());
}

#[test]
fn reruns_and_worker_counts_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 4);
    let mut bytes = Vec::new();
    for (name, workers) in [("a", 1), ("b", 1), ("c", 4)] {
        let cfg = sgid_core::config::PipelineConfig {
            workers,
            no_cache: true,
            ..common::config(dir.path().join(name))
        };
        let s = common::run(&ds, &cfg);
        bytes.push(common::read(&s.manifest_path));
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[0], bytes[2]);
}

#[test]
fn k_five_gives_five_per_original() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 10);
    let cfg = sgid_core::config::PipelineConfig {
        k_augment: 5,
        workers: 4,
        ..common::config(dir.path().join("out"))
    };
    let m = common::run(&ds, &cfg).manifest;
    assert_eq!(m.records.len(), 150);
    assert!(m.groups().values().all(|g| g.len() == 5));
    let seeds: std::collections::BTreeSet<u64> = m.records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 150);
}

#[test]
fn zero_noise_reproduces_originals() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 3);
    let cfg = sgid_core::config::PipelineConfig {
        noise_rate: 0.0,
        ..common::config(dir.path().join("out"))
    };
    let m = common::run(&ds, &cfg).manifest;
    for r in &m.records {
        let orig = ds.load_image(ds.record(&r.record_id).unwrap()).unwrap();
        let aug = imageio::load_rgb(&dir.path().join("out").join(r.output_path.as_ref().unwrap())).unwrap();
        assert_eq!(orig, aug);
    }
}

#[test]
fn pixel_distance_grows_with_noise() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 3);
    let mut distances = Vec::new();
    for n in [0.3, 0.5, 0.7] {
        let out = dir.path().join(format!("n{n}"));
        let cfg = sgid_core::config::PipelineConfig {
            noise_rate: n,
            ..common::config(out.clone())
        };
        let m = common::run(&ds, &cfg).manifest;
        let mut total = 0.0;
        let mut count = 0.0;
        for r in &m.records {
            let a = ds.load_image(ds.record(&r.record_id).unwrap()).unwrap();
            let b = imageio::load_rgb(&out.join(r.output_path.as_ref().unwrap())).unwrap();
            for (p, q) in a.as_raw().iter().zip(b.as_raw()) {
                total += (f64::from(*p) - f64::from(*q)).abs();
                count += 1.0;
            }
        }
        distances.push(total / count);
    }
    assert!(distances[0] <= distances[1] && distances[1] <= distances[2], "{distances:?}");
}

#[test]
fn caption_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 2);
    let cfg = common::config(dir.path().join("out"));
    let first = common::run(&ds, &cfg);
    assert_eq!(first.captions_from_cache, 0);
    let cache = CaptionCache::load(&dir.path().join("out").join(CAPTION_CACHE_FILE)).unwrap();
    assert_eq!(cache.len(), 6);
    let second = common::run(&ds, &cfg);
    assert_eq!(second.captions_from_cache, 6);
    assert_eq!(first.manifest, second.manifest);
    let changed = sgid_core::config::PipelineConfig { global_seed: 8, ..cfg };
    assert_eq!(common::run(&ds, &changed).captions_from_cache, 0);
}

#[test]
fn prompt_mode_none_gives_empty_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 2);
    let cfg = sgid_core::config::PipelineConfig {
        prompt_mode: PromptMode::None,
        ..common::config(dir.path().join("out"))
    };
    let m = common::run(&ds, &cfg).manifest;
    assert!(m.records.iter().all(|r| r.is_ok() && r.request.as_ref().unwrap().prompt.rendered_text.is_empty()));
}

#[test]
fn text2img_records_have_no_source() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 2);
    let cfg = sgid_core::config::PipelineConfig {
        generation_mode: sgid_core::backends::DiffusionMode::Text2img,
        text2img_size: Some((16, 16)),
        ..common::config(dir.path().join("out"))
    };
    let m = common::run(&ds, &cfg).manifest;
    assert_eq!(m.header.method, "text2img");
    for r in &m.records {
        assert!(r.source_path.is_none());
        let img = imageio::load_rgb(&dir.path().join("out").join(r.output_path.as_ref().unwrap())).unwrap();
        assert_eq!(img.dimensions(), (16, 16));
    }
}

#[test]
fn text2img_noise_is_keyed_by_prompt_hash() {
    use rand::{RngCore, SeedableRng};
    let prompt_a = sgid_core::prompting::build_prompt("cat", None, PromptMode::LabelOnly, false).unwrap();
    let prompt_b = sgid_core::prompting::build_prompt("dog", None, PromptMode::LabelOnly, false).unwrap();
    let d = FakeDiffuser::new("fake");
    let call = |p| DiffusionCall {
        mode: sgid_core::backends::DiffusionMode::Text2img,
        source: None,
        prompt: p,
        guidance: 1.0,
        noise_rate: 1.0,
        denoising_steps: 10,
        seed: 5,
        output_size: Some((4, 4)),
    };
    let a = d.generate(&call(&prompt_a)).unwrap();
    let b = d.generate(&call(&prompt_b)).unwrap();
    // independent recomputation of the keyed noise
    let mut oracle = vec![0u8; 48];
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in prompt_a.rendered_text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    assert_eq!(hash, fnv1a64(prompt_a.rendered_text.as_bytes()));
    rand_chacha::ChaCha8Rng::seed_from_u64(5 ^ hash).fill_bytes(&mut oracle);
    assert_eq!(a.as_raw(), &oracle);
    assert_ne!(imageio::png_checksum(&imageio::encode_png(&a).unwrap()), imageio::png_checksum(&imageio::encode_png(&b).unwrap()));
}

struct Flaky {
    inner: FakeDiffuser,
    fail_label: &'static str,
}

impl Diffuser for Flaky {
    fn id(&self) -> &str {
        "flaky"
    }
    fn capabilities(&self) -> DiffusionCapabilities {
        self.inner.capabilities()
    }
    fn generate(&self, call: &DiffusionCall<'_>) -> Result<image::RgbImage, BackendError> {
        if call.prompt.label_text == self.fail_label {
            return Err(BackendError::Failure {
                backend: "flaky".into(),
                message: "out of memory".into(),
            });
        }
        self.inner.generate(call)
    }
}

#[test]
fn backend_failures_are_recorded_and_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 3);
    let mut registry = BackendRegistry::with_fakes();
    registry.register_diffuser(Arc::new(Flaky {
        inner: FakeDiffuser::new("fake"),
        fail_label: "top block",
    }));
    let mut cfg = common::config(dir.path().join("out"));
    cfg.backends.generate = "flaky".into();
    let s = run_pipeline(&ds, &cfg, &registry, None).unwrap();
    let c = s.manifest.counts();
    assert_eq!((c.failed, c.pending), (3, 6));
    for r in s.manifest.records.iter().filter(|r| r.status == RecordStatus::Failed) {
        assert!(r.error.as_deref().unwrap().contains("out of memory"));
        assert!(r.output_path.is_none());
    }
    let back = AugmentationManifest::read(&dir.path().join("out").join(MANIFEST_FILE)).unwrap();
    assert_eq!(back, s.manifest);
}

#[test]
fn interrupted_run_resumes_from_journal() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 4);
    let out = dir.path().join("out");
    let cfg = sgid_core::config::PipelineConfig {
        journal_every: 5,
        ..common::config(out.clone())
    };
    let full = common::run(&ds, &cfg);
    // fake an interruption: keep the first 5 records as a partial journal
    let partial = AugmentationManifest {
        header: full.manifest.header.clone(),
        records: full.manifest.records[..5].to_vec(),
    };
    partial.write(&out.join("manifest.partial.jsonl")).unwrap();
    std::fs::remove_file(out.join(MANIFEST_FILE)).unwrap();
    let resumed = common::run(&ds, &cfg);
    assert_eq!(resumed.resumed, 5);
    assert_eq!(resumed.manifest, full.manifest);
}

#[test]
fn unknown_backend_is_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 1);
    let mut cfg = common::config(dir.path().join("out"));
    cfg.backends.score = "missing".into();
    let registry = cfg.registry().unwrap();
    assert!(run_pipeline(&ds, &cfg, &registry, None).is_err());
    assert!(!dir.path().join("out").exists());
}
