#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sgid_core::config::PipelineConfig;
use sgid_core::dataset::DatasetManifest;
use sgid_core::generation::{run_pipeline, RunSummary};
use sgid_core::synthetic::write_synthetic_dataset;

pub const SIZE: u32 = 32;

/// 3 labels x `per_label` synthetic images under `dir/data`.
pub fn dataset(dir: &Path, per_label: usize) -> DatasetManifest {
    write_synthetic_dataset(&dir.join("data"), per_label, SIZE, 11).unwrap()
}

pub fn config(out_dir: PathBuf) -> PipelineConfig {
    PipelineConfig {
        global_seed: 7,
        out_dir,
        ..Default::default()
    }
}

pub fn run(dataset: &DatasetManifest, config: &PipelineConfig) -> RunSummary {
    let registry = config.registry().unwrap();
    run_pipeline(dataset, config, &registry, None).unwrap()
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

/// Mean-threshold keep decision in exact integer arithmetic: every score is
/// written as `mantissa * 2^(exp - e_min)` over a shared minimum exponent,
/// then `score * n >= sum` is compared on big integers.
pub fn exact_keep(group: &[f64], score: f64) -> bool {
    use num::bigint::BigInt;
    use num::Float;
    let decode = |v: f64| {
        let (m, e, s) = v.integer_decode();
        (BigInt::from(m) * BigInt::from(s), e)
    };
    let parts: Vec<(BigInt, i16)> = group.iter().chain([&score]).map(|&v| decode(v)).collect();
    let e_min = parts.iter().map(|p| p.1).min().unwrap();
    let scaled: Vec<BigInt> = parts.iter().map(|(m, e)| m << ((e - e_min) as usize)).collect();
    let (own, rest) = scaled.split_last().unwrap();
    let sum: BigInt = rest.iter().sum();
    own * BigInt::from(group.len()) >= sum
}
