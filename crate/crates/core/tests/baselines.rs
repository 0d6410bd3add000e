mod common;

use sgid_core::baselines::{run_baseline, BaselineRun, PerturbationConfig, PerturbationMethod};

fn run(method: PerturbationMethod, dir: &std::path::Path, ds: &sgid_core::dataset::DatasetManifest, name: &str) -> sgid_core::generation::AugmentationManifest {
    let config = PerturbationConfig {
        method,
        ..Default::default()
    };
    let run = BaselineRun {
        config: &config,
        global_seed: 3,
        k_augment: 2,
        train_only: true,
        config_hash: "h".into(),
    };
    let out = dir.join(name);
    let m = run_baseline(ds, &run, &out).unwrap();
    m.verify_checksums(&out).unwrap();
    m
}

#[test]
fn every_method_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::dataset(dir.path(), 4);
    for method in [PerturbationMethod::RandomErasing, PerturbationMethod::CutMix, PerturbationMethod::RandAugment] {
        let a = run(method, dir.path(), &ds, &format!("{}-a", method.as_str()));
        let b = run(method, dir.path(), &ds, &format!("{}-b", method.as_str()));
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 24);
        assert!(a.records.iter().all(|r| r.is_ok()));
        assert_eq!(a.records[0].backend_id, format!("baseline:{}", method.as_str()));
        let soft = a.records.iter().filter(|r| r.soft_label.is_some()).count();
        if method == PerturbationMethod::CutMix {
            assert_eq!(soft, 24);
            for r in &a.records {
                let s: f64 = r.soft_label.as_ref().unwrap().iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        } else {
            assert_eq!(soft, 0);
        }
    }
}

#[test]
fn config_names_parse() {
    for (s, m) in [("re", PerturbationMethod::RandomErasing), ("cutmix", PerturbationMethod::CutMix), ("ra", PerturbationMethod::RandAugment)] {
        assert_eq!(s.parse::<PerturbationMethod>().unwrap(), m);
        let json = format!("{{\"method\":\"{s}\"}}");
        let c: PerturbationConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c.method, m);
    }
}
