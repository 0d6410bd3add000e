//! Perturbation baselines: random erasing, CutMix and RandAugment, producing
//! the same augmentation manifest as the generative pipeline.

pub mod cutmix;
pub mod erasing;
pub mod randaugment;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cutmix::{cut_box, cutmix, cutmix_with_lambda, CutBox, CutMixOutput, CutMixParams};
pub use erasing::{random_erasing, random_erasing_region, EraseRegion, RandomErasingParams};
pub use randaugment::{apply_op, apply_ops, rand_augment, Op, RandAugmentParams, CATALOG};

use crate::dataset::{DatasetManifest, ImageRecord};
use crate::generation::{
    AugRecord, AugmentationManifest, FilterStatus, ManifestHeader, RecordStatus,
    AUG_FORMAT_VERSION,
};
use crate::imageio;
use crate::seed::{record_seed, rng_from_seed, stage_seed};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("invalid baseline config: {0}")]
    InvalidConfig(String),
    #[error("image has zero width or height")]
    DegenerateImage,
    #[error("image sizes differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("dataset has no training records")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PerturbationMethod {
    #[serde(rename = "re", alias = "random_erasing")]
    RandomErasing,
    #[serde(rename = "cutmix")]
    CutMix,
    #[default]
    #[serde(rename = "ra", alias = "randaugment")]
    RandAugment,
}

impl PerturbationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationMethod::RandomErasing => "re",
            PerturbationMethod::CutMix => "cutmix",
            PerturbationMethod::RandAugment => "ra",
        }
    }
}

impl std::str::FromStr for PerturbationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "re" | "random_erasing" | "random-erasing" => Ok(Self::RandomErasing),
            "cutmix" => Ok(Self::CutMix),
            "ra" | "randaugment" => Ok(Self::RandAugment),
            other => Err(format!("unknown baseline {other:?} (re|cutmix|ra)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PerturbationConfig {
    pub method: PerturbationMethod,
    pub random_erasing: RandomErasingParams,
    pub cutmix: CutMixParams,
    pub randaugment: RandAugmentParams,
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        self.random_erasing.validate()?;
        self.cutmix.validate()?;
        self.randaugment.validate()
    }
}

/// Options for a whole-dataset baseline run.
#[derive(Debug, Clone)]
pub struct BaselineRun<'a> {
    pub config: &'a PerturbationConfig,
    pub global_seed: u64,
    pub k_augment: usize,
    pub train_only: bool,
    pub config_hash: String,
}

fn perturb_one(
    dataset: &DatasetManifest,
    pool: &[&ImageRecord],
    record: &ImageRecord,
    k: usize,
    run: &BaselineRun<'_>,
    out_dir: &Path,
) -> AugRecord {
    let method = run.config.method;
    let seed = stage_seed(record_seed(run.global_seed, &record.record_id), method.as_str(), k as u64);
    let rel = AugRecord::default_output_path(&record.label_raw, &record.record_id, k);
    let mut aug = AugRecord {
        record_id: record.record_id.clone(),
        aug_index: k,
        label_raw: record.label_raw.clone(),
        label_text: record.label_text.clone(),
        source_path: Some(record.source_path.clone()),
        method: method.as_str().to_string(),
        backend_id: format!("baseline:{}", method.as_str()),
        seed,
        request: None,
        caption: None,
        soft_label: None,
        status: RecordStatus::Failed,
        output_path: None,
        checksum: None,
        error: None,
        filter_status: FilterStatus::Pending,
    };
    let result = (|| -> Result<(image::RgbImage, Option<Vec<f64>>), String> {
        let image = dataset.load_image(record).map_err(|e| e.to_string())?;
        let mut rng = rng_from_seed(seed);
        match method {
            PerturbationMethod::RandomErasing => {
                random_erasing(&image, &run.config.random_erasing, &mut rng)
                    .map(|i| (i, None))
                    .map_err(|e| e.to_string())
            }
            PerturbationMethod::RandAugment => rand_augment(&image, &run.config.randaugment, &mut rng)
                .map(|(i, _)| (i, None))
                .map_err(|e| e.to_string()),
            PerturbationMethod::CutMix => {
                let partner = pool[rng.random_range(0..pool.len())];
                let other = dataset.load_image(partner).map_err(|e| e.to_string())?;
                let n = dataset.label_set.len();
                let la = dataset.label_index(&record.label_text).ok_or("label not in label_set")?;
                let lb = dataset.label_index(&partner.label_text).ok_or("label not in label_set")?;
                cutmix(&image, la, &other, lb, n, &run.config.cutmix, &mut rng)
                    .map(|o| (o.image, Some(o.soft_label)))
                    .map_err(|e| e.to_string())
            }
        }
    })();
    let written = result.and_then(|(img, soft)| {
        let png = imageio::encode_png(&img).map_err(|e| e.to_string())?;
        imageio::write_atomic(&out_dir.join(&rel), &png).map_err(|e| e.to_string())?;
        Ok((imageio::png_checksum(&png), soft))
    });
    match written {
        Ok((checksum, soft)) => {
            aug.status = RecordStatus::Ok;
            aug.output_path = Some(rel);
            aug.checksum = Some(checksum);
            aug.soft_label = soft;
        }
        Err(e) => aug.error = Some(e),
    }
    aug
}

/// Perturb every (training) record `k_augment` times, writing images under
/// `out_dir` and returning the manifest (not yet written).
pub fn run_baseline(
    dataset: &DatasetManifest,
    run: &BaselineRun<'_>,
    out_dir: &Path,
) -> Result<AugmentationManifest, BaselineError> {
    run.config.validate()?;
    if run.k_augment == 0 {
        return Err(BaselineError::InvalidConfig("k_augment must be at least 1".into()));
    }
    let pool: Vec<&ImageRecord> = dataset
        .records
        .iter()
        .filter(|r| !run.train_only || r.is_train())
        .collect();
    if pool.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    let jobs: Vec<(&ImageRecord, usize)> = pool
        .iter()
        .flat_map(|r| (0..run.k_augment).map(move |k| (*r, k)))
        .collect();
    let records: Vec<AugRecord> = jobs
        .par_iter()
        .map(|(r, k)| perturb_one(dataset, &pool, r, *k, run, out_dir))
        .collect();
    Ok(AugmentationManifest {
        header: ManifestHeader {
            format_version: AUG_FORMAT_VERSION.into(),
            method: run.config.method.as_str().into(),
            config_hash: run.config_hash.clone(),
            k_augment: run.k_augment,
            dataset_root: dataset.root_path.clone(),
            record_count: pool.len(),
        },
        records,
    })
}
