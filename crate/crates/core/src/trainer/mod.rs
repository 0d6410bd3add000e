//! Linear-probe training harness over scorer features, for relative
//! comparisons between augmentation configs.

pub mod features;
pub mod probe;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use features::{extract_features, FeatureCache, FeatureItem, FeatureTable};
pub use probe::{loss_and_grad, lr_at, softmax_rows, train_probe, LinearProbe, TrainTrace};

use crate::backends::Scorer;
use crate::dataset::DatasetManifest;
use crate::generation::AugmentationManifest;
use crate::imageio::ImageIoError;
use crate::seed::{rng_from_seed, sha256_hex, stage_seed};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("training data has fewer than two classes")]
    SingleClass,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {0:?} is not in the dataset label set")]
    UnknownLabel(String),
    #[error("compare needs at least two entries")]
    TooFewEntries,
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub initial: f64,
    /// Multiplier applied at each milestone (0.1 = divide by 10).
    pub decay_factor: f64,
    /// Epochs (0-based) at which the decay applies; strictly increasing.
    pub milestones: Vec<usize>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 0.1,
            decay_factor: 0.1,
            milestones: vec![20, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Scorer backend id providing image features.
    pub feature_source: String,
    pub epochs: usize,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Seed for the eval split and the first training run.
    pub seed: u64,
    /// Training runs per entry (seeds `seed`, `seed + 1`, ...).
    pub repeats: usize,
    /// Fraction of each label's originals held out for evaluation when the
    /// dataset carries no split column.
    pub eval_fraction: f64,
    pub include_dropped: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            feature_source: "fake".into(),
            epochs: 40,
            lr: LrSchedule::default(),
            batch_size: 16,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            repeats: 1,
            eval_fraction: 0.3,
            include_dropped: false,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1".into());
        }
        if !self.lr.milestones.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("milestones {:?} are not strictly increasing", self.lr.milestones));
        }
        if self.lr.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return bad(format!("milestones {:?} must be below epochs {}", self.lr.milestones, self.epochs));
        }
        if !(self.lr.initial > 0.0 && self.lr.decay_factor > 0.0) {
            return bad("learning rate and decay factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay >= 0".into());
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad("eval_fraction must be in (0, 1)".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub key: String,
    pub record_id: String,
    pub path: PathBuf,
    pub checksum: Option<String>,
    /// Distribution over the dataset label set.
    pub target: Vec<f64>,
    pub label_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingData {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub augmented: usize,
    pub excluded_dropped: usize,
    /// Augmentations of held-out originals, left out to avoid leakage.
    pub excluded_eval_originals: usize,
}

/// Record ids held out for evaluation. Uses the dataset's split column when
/// any record is marked non-train; otherwise a seeded per-label fraction.
pub fn eval_split(dataset: &DatasetManifest, config: &ProbeConfig) -> BTreeSet<String> {
    if dataset.records.iter().any(|r| !r.is_train()) {
        return dataset
            .records
            .iter()
            .filter(|r| !r.is_train())
            .map(|r| r.record_id.clone())
            .collect();
    }
    let mut held = BTreeSet::new();
    for (li, label) in dataset.label_set.iter().enumerate() {
        let mut ids: Vec<&str> = dataset
            .records
            .iter()
            .filter(|r| &r.label_text == label)
            .map(|r| r.record_id.as_str())
            .collect();
        ids.sort_unstable();
        if ids.len() < 2 {
            continue;
        }
        ids.shuffle(&mut rng_from_seed(stage_seed(config.seed, "split", li as u64)));
        let n = ((ids.len() as f64 * config.eval_fraction).ceil() as usize).clamp(1, ids.len() - 1);
        held.extend(ids[..n].iter().map(|s| s.to_string()));
    }
    held
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Originals split into train/eval, plus augmented images of training
/// originals from each manifest.
pub fn assemble(
    dataset: &DatasetManifest,
    manifests: &[(&AugmentationManifest, &Path)],
    config: &ProbeConfig,
) -> Result<TrainingData, TrainError> {
    let held = eval_split(dataset, config);
    let n = dataset.label_set.len();
    let label_index = |label: &str| dataset.label_index(label).ok_or_else(|| TrainError::UnknownLabel(label.to_string()));
    let mut data = TrainingData::default();
    for r in &dataset.records {
        let li = label_index(&r.label_text)?;
        let s = Sample {
            key: format!("orig:{}", r.record_id),
            record_id: r.record_id.clone(),
            path: dataset.resolve(r),
            checksum: None,
            target: one_hot(n, li),
            label_index: li,
        };
        if held.contains(&r.record_id) {
            data.eval.push(s);
        } else {
            data.train.push(s);
        }
    }
    for (mi, (m, base)) in manifests.iter().enumerate() {
        for r in m.records.iter().filter(|r| r.is_ok()) {
            if r.filter_status.is_dropped() && !config.include_dropped {
                data.excluded_dropped += 1;
                continue;
            }
            if held.contains(&r.record_id) {
                data.excluded_eval_originals += 1;
                continue;
            }
            let Some(rel) = r.output_path.as_deref() else { continue };
            let li = label_index(&r.label_text)?;
            let target = match &r.soft_label {
                Some(soft) if soft.len() == n => soft.clone(),
                Some(soft) => {
                    return Err(TrainError::Shape(format!(
                        "soft label of {} has {} entries for {n} labels",
                        r.record_id,
                        soft.len()
                    )))
                }
                None => one_hot(n, li),
            };
            data.train.push(Sample {
                key: format!("aug{mi}:{}:{}", r.record_id, r.aug_index),
                record_id: r.record_id.clone(),
                path: base.join(rel),
                checksum: r.checksum.clone(),
                target,
                label_index: li,
            });
            data.augmented += 1;
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LabelAccuracy {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub config_hash: String,
    pub seed: u64,
    pub top1: f64,
    pub per_label: BTreeMap<String, LabelAccuracy>,
    pub loss_curve: Vec<f64>,
    pub lr_sequence: Vec<f64>,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_augmented: usize,
    pub excluded_dropped: usize,
    pub feature_failures: usize,
}

fn matrix(samples: &[&Sample], table: &FeatureTable, width: usize, pick: impl Fn(&Sample, &FeatureTable) -> Vec<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((samples.len(), width));
    for (i, s) in samples.iter().enumerate() {
        for (j, v) in pick(s, table).into_iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

/// Train on original ∪ augmented images and report accuracy on held-out originals.
pub fn train_and_evaluate(
    dataset: &DatasetManifest,
    manifests: &[(&AugmentationManifest, &Path)],
    scorer: &dyn Scorer,
    config: &ProbeConfig,
    cache: &mut FeatureCache,
    seed: u64,
) -> Result<EvalResult, TrainError> {
    config.validate()?;
    let data = assemble(dataset, manifests, config)?;
    let items: Vec<FeatureItem> = data
        .train
        .iter()
        .chain(&data.eval)
        .map(|s| FeatureItem {
            key: s.key.clone(),
            path: s.path.clone(),
            checksum: s.checksum.clone(),
        })
        .collect();
    let table = extract_features(&items, scorer, cache);
    let train: Vec<&Sample> = data.train.iter().filter(|s| table.features.contains_key(&s.key)).collect();
    let eval: Vec<&Sample> = data.eval.iter().filter(|s| table.features.contains_key(&s.key)).collect();
    if eval.is_empty() {
        return Err(TrainError::EmptySplit("eval"));
    }
    let n_labels = dataset.label_set.len();
    let feat = |s: &Sample, t: &FeatureTable| t.features[&s.key].clone();
    let x = matrix(&train, &table, table.dim, feat);
    let y = matrix(&train, &table, n_labels, |s, _| s.target.clone());
    let (model, trace) = train_probe(&x, &y, config, seed)?;

    let xe = matrix(&eval, &table, table.dim, feat);
    let predicted = model.predict(&xe);
    let mut per_label: BTreeMap<String, LabelAccuracy> = BTreeMap::new();
    let mut correct = 0;
    for (s, &p) in eval.iter().zip(&predicted) {
        let e = per_label.entry(dataset.label_set[s.label_index].clone()).or_default();
        e.total += 1;
        if p == s.label_index {
            e.correct += 1;
            correct += 1;
        }
    }
    let mut hash_input = config.hash();
    for (m, _) in manifests {
        hash_input.push_str(&m.header.config_hash);
    }
    Ok(EvalResult {
        config_hash: sha256_hex(hash_input.as_bytes()),
        seed,
        top1: correct as f64 / eval.len() as f64,
        per_label,
        loss_curve: trace.loss_curve,
        lr_sequence: trace.lr_sequence,
        n_train: train.len(),
        n_eval: eval.len(),
        n_augmented: data.augmented,
        excluded_dropped: data.excluded_dropped,
        feature_failures: table.failures.len(),
    })
}

/// A named training-set recipe: originals plus zero or more manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareEntry {
    pub name: String,
    pub manifests: Vec<(AugmentationManifest, PathBuf)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub name: String,
    pub mean_top1: f64,
    pub sd_top1: f64,
    pub runs: Vec<EvalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>7}\n", "name", "top1", "sd", "n_train");
        for r in &self.rows {
            let n_train = r.runs.first().map_or(0, |e| e.n_train);
            out.push_str(&format!(
                "{:<width$}  {:>8.4}  {:>8.4}  {:>7}\n",
                r.name, r.mean_top1, r.sd_top1, n_train
            ));
        }
        out
    }
}

/// Train every entry with the same split and seeds; rows sorted by mean
/// accuracy, best first (ties by name).
pub fn compare_configs(
    dataset: &DatasetManifest,
    entries: &[CompareEntry],
    scorer: &dyn Scorer,
    config: &ProbeConfig,
    cache: &mut FeatureCache,
) -> Result<CompareTable, TrainError> {
    if entries.len() < 2 {
        return Err(TrainError::TooFewEntries);
    }
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        let manifests: Vec<(&AugmentationManifest, &Path)> =
            e.manifests.iter().map(|(m, p)| (m, p.as_path())).collect();
        let runs = (0..config.repeats as u64)
            .map(|r| train_and_evaluate(dataset, &manifests, scorer, config, cache, config.seed + r))
            .collect::<Result<Vec<_>, _>>()?;
        let accs: Vec<f64> = runs.iter().map(|r| r.top1).collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let sd = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        rows.push(CompareRow {
            name: e.name.clone(),
            mean_top1: mean,
            sd_top1: sd,
            runs,
        });
    }
    rows.sort_by(|a, b| b.mean_top1.total_cmp(&a.mean_top1).then_with(|| a.name.cmp(&b.name)));
    Ok(CompareTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        ProbeConfig::default().validate().unwrap();
        let mut c = ProbeConfig { epochs: 4, ..Default::default() };
        c.lr.milestones = vec![2, 3];
        c.validate().unwrap();
        c.lr.milestones = vec![3, 2];
        assert!(c.validate().is_err());
        c.lr.milestones = vec![2, 4];
        assert!(c.validate().is_err());
        assert!(ProbeConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(ProbeConfig { epochs: 0, ..Default::default() }.validate().is_err());
    }
}
