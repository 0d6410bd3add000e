mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;
use sgid_core::backends::{BackendError, FakeScorer, Scorer};
use sgid_core::baselines::{run_baseline, BaselineRun, PerturbationConfig, PerturbationMethod};
use sgid_core::config::PipelineConfig;
use sgid_core::filters::{apply_report, run_filter, FilterKind};
use sgid_core::trainer::{
    assemble, compare_configs, extract_features, train_and_evaluate, CompareEntry, FeatureCache, FeatureItem, ProbeConfig,
};

struct Counting {
    inner: FakeScorer,
    calls: AtomicUsize,
}

impl Scorer for Counting {
    fn id(&self) -> &str {
        "fake"
    }
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }
    fn similarity_range(&self) -> (f64, f64) {
        self.inner.similarity_range()
    }
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_image(image)
    }
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.inner.embed_text(text)
    }
}

fn probe() -> ProbeConfig {
    let mut c = ProbeConfig {
        epochs: 30,
        ..Default::default()
    };
    c.lr.milestones = vec![15, 25];
    c
}

#[test]
fn features_are_cached_and_failures_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 2);
    let bad = dir.path().join("broken.png");
    std::fs::write(&bad, b"not a png").unwrap();
    let mut items: Vec<FeatureItem> = ds
        .records
        .iter()
        .map(|r| FeatureItem {
            key: r.record_id.clone(),
            path: ds.resolve(r),
            checksum: None,
        })
        .collect();
    items.push(FeatureItem {
        key: "broken".into(),
        path: bad,
        checksum: None,
    });
    let scorer = Counting {
        inner: FakeScorer::new("fake"),
        calls: AtomicUsize::new(0),
    };
    let mut cache = FeatureCache::default();
    let t = extract_features(&items, &scorer, &mut cache);
    assert_eq!(t.dim, 64);
    assert_eq!(t.features.len(), 6);
    assert!(t.features.values().all(|f| f.len() == 64));
    assert_eq!(t.failures.len(), 1);
    assert!(t.failures.contains_key("broken"));

    let cache_path = dir.path().join("features.jsonl");
    cache.save(&cache_path).unwrap();
    let mut reloaded = FeatureCache::load(&cache_path).unwrap();
    let before = scorer.calls.load(Ordering::SeqCst);
    let again = extract_features(&items[..6], &scorer, &mut reloaded);
    assert_eq!(again.backend_calls, 0);
    assert_eq!(scorer.calls.load(Ordering::SeqCst), before);
    assert_eq!(again.features, t.features);
}

/// Multi-class perceptron on the raw features; converging to zero training
/// errors proves the set is linearly separable.
fn perceptron_separates(x: &[Vec<f64>], y: &[usize], classes: usize) -> bool {
    let d = x[0].len() + 1;
    let mut w = vec![vec![0.0; d]; classes];
    for _ in 0..5000 {
        let mut errors = 0;
        for (xi, &yi) in x.iter().zip(y) {
            let xb: Vec<f64> = xi.iter().copied().chain([1.0]).collect();
            let score = |c: usize| w[c].iter().zip(&xb).map(|(a, b)| a * b).sum::<f64>();
            let pred = (0..classes).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
            let competitor = (0..classes).filter(|&c| c != yi).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
            if pred != yi || score(yi) <= score(competitor) {
                errors += 1;
                for j in 0..d {
                    w[yi][j] += xb[j];
                    w[competitor][j] -= xb[j];
                }
            }
        }
        if errors == 0 {
            return true;
        }
    }
    false
}

#[test]
fn separable_task_is_learned() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 40);
    let scorer = FakeScorer::new("fake");
    let items: Vec<FeatureItem> = ds
        .records
        .iter()
        .map(|r| FeatureItem {
            key: r.record_id.clone(),
            path: ds.resolve(r),
            checksum: None,
        })
        .collect();
    let table = extract_features(&items, &scorer, &mut FeatureCache::default());
    let x: Vec<Vec<f64>> = ds.records.iter().map(|r| table.features[&r.record_id].clone()).collect();
    let y: Vec<usize> = ds.records.iter().map(|r| ds.label_index(&r.label_text).unwrap()).collect();
    assert!(perceptron_separates(&x, &y, 3));

    let result = train_and_evaluate(&ds, &[], &scorer, &probe(), &mut FeatureCache::default(), 0).unwrap();
    assert!(result.top1 >= 0.95, "accuracy {}", result.top1);
    assert_eq!(result.per_label.values().map(|l| l.total).sum::<usize>(), result.n_eval);
    assert_eq!(result.lr_sequence.len(), 30);
    // loss does not rise across the milestone boundaries
    for &m in &probe().lr.milestones {
        if m < result.loss_curve.len() {
            assert!(result.loss_curve[m] <= result.loss_curve[m - 1] + 1e-9);
        }
    }
}

#[test]
fn duplicates_do_not_hurt_and_eval_is_never_augmented() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 20);
    let out = dir.path().join("out");
    let cfg = PipelineConfig {
        noise_rate: 0.0,
        ..common::config(out.clone())
    };
    let m = common::run(&ds, &cfg).manifest;
    let scorer = FakeScorer::new("fake");
    let base = train_and_evaluate(&ds, &[], &scorer, &probe(), &mut FeatureCache::default(), 1).unwrap();
    let with = train_and_evaluate(&ds, &[(&m, &out)], &scorer, &probe(), &mut FeatureCache::default(), 1).unwrap();
    assert!((base.top1 - with.top1).abs() <= 0.1, "{} vs {}", base.top1, with.top1);
    let data = assemble(&ds, &[(&m, &out)], &probe()).unwrap();
    assert_eq!(data.augmented + data.excluded_eval_originals, 60);
    let eval_ids: std::collections::BTreeSet<&str> = data.eval.iter().map(|s| s.record_id.as_str()).collect();
    assert!(data.train.iter().all(|s| !eval_ids.contains(s.record_id.as_str())));
}

#[test]
fn dropped_records_are_excluded_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 10);
    let out = dir.path().join("out");
    let m = common::run(&ds, &common::config(out.clone())).manifest;
    let report = run_filter(FilterKind::Prompt, &m, &out, &ds, &FakeScorer::new("fake")).unwrap();
    let filtered = apply_report(&m, &report).unwrap();
    let data = assemble(&ds, &[(&filtered, &out)], &probe()).unwrap();
    assert_eq!(data.excluded_dropped, report.dropped());
    let all = assemble(&ds, &[(&filtered, &out)], &ProbeConfig { include_dropped: true, ..probe() }).unwrap();
    assert_eq!(all.excluded_dropped, 0);
    assert_eq!(
        all.augmented + all.excluded_eval_originals,
        data.augmented + data.excluded_eval_originals + report.dropped()
    );
}

#[test]
fn compare_ranks_entries_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 10);
    let gen_out = dir.path().join("gen");
    let generated = common::run(&ds, &PipelineConfig { noise_rate: 0.3, ..common::config(gen_out.clone()) }).manifest;
    let base_out = dir.path().join("ra");
    let pc = PerturbationConfig {
        method: PerturbationMethod::CutMix,
        ..Default::default()
    };
    let baseline = run_baseline(
        &ds,
        &BaselineRun {
            config: &pc,
            global_seed: 1,
            k_augment: 1,
            train_only: true,
            config_hash: "b".into(),
        },
        &base_out,
    )
    .unwrap();
    let entries = vec![
        CompareEntry { name: "originals".into(), manifests: vec![] },
        CompareEntry { name: "generated".into(), manifests: vec![(generated.clone(), gen_out.clone())] },
        CompareEntry {
            name: "baseline & generated".into(),
            manifests: vec![(baseline, base_out), (generated, gen_out)],
        },
    ];
    let scorer = FakeScorer::new("fake");
    let config = ProbeConfig { repeats: 2, ..probe() };
    let a = compare_configs(&ds, &entries, &scorer, &config, &mut FeatureCache::default()).unwrap();
    let b = compare_configs(&ds, &entries, &scorer, &config, &mut FeatureCache::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 3);
    assert!(a.rows.windows(2).all(|w| w[0].mean_top1 >= w[1].mean_top1));
    let n = |name: &str| a.rows.iter().find(|r| r.name == name).unwrap().runs[0].n_augmented;
    assert_eq!(n("baseline & generated"), n("generated") * 2);
    assert!(a.to_text().lines().count() == 4);
    assert!(compare_configs(&ds, &entries[..1], &scorer, &config, &mut FeatureCache::default()).is_err());
}
