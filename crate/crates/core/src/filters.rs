//! Post-hoc filters over augmented images.
//!
//! - **Label filter**: zero-shot classify each augmented image against
//!   `a photo of a/an <label>` for every label; keep it only when its own
//!   label is the unique best match.
//! - **Prompt filter**: score each image against the prompt that generated it.
//! - **Original-image filter**: score each image against its original.
//!
//! The two threshold filters use the per-label mean score as the threshold
//! and keep records with `score >= threshold`. The mean is computed exactly
//! (rational arithmetic) and recorded rounded *up* to the nearest `f64`, so
//! comparing a recorded score against the recorded threshold reproduces every
//! decision bit-for-bit.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use image::RgbImage;
use num::{BigRational, ToPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{cosine, BackendError, Scorer};
use crate::dataset::{DatasetError, DatasetManifest};
use crate::generation::{AugRecord, AugmentationManifest, FilterStatus, GenerationError};
use crate::imageio::{self, ImageIoError};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("record {record_id} has label {label:?} outside the label set")]
    UnknownLabel { record_id: String, label: String },
    #[error("no original image for record {0}")]
    MissingOriginal(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Manifest(#[from] GenerationError),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Label,
    Prompt,
    Original,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Label => "label",
            FilterKind::Prompt => "prompt",
            FilterKind::Original => "original",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "label" => Ok(FilterKind::Label),
            "prompt" => Ok(FilterKind::Prompt),
            "original" | "original_image" | "original-image" => Ok(FilterKind::Original),
            other => Err(format!("unknown filter kind {other:?} (label|prompt|original)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub record_id: String,
    pub aug_index: usize,
    pub label: String,
    pub score: f64,
    pub kept: bool,
    pub reason: String,
    /// Label filter only: similarity to every label text, in label-set order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringFailure {
    pub record_id: String,
    pub aug_index: usize,
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelTotals {
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub filter_kind: FilterKind,
    pub scorer_id: String,
    /// Per-label thresholds (threshold filters only).
    pub thresholds: BTreeMap<String, f64>,
    pub decisions: Vec<FilterDecision>,
    pub failures: Vec<ScoringFailure>,
    pub totals: BTreeMap<String, LabelTotals>,
}

impl FilterReport {
    pub fn write(&self, path: &Path) -> Result<(), FilterError> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        imageio::write_atomic(path, json.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FilterError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn kept(&self) -> usize {
        self.decisions.iter().filter(|d| d.kept).count()
    }

    pub fn dropped(&self) -> usize {
        self.decisions.iter().filter(|d| !d.kept).count()
    }
}

/// Exact arithmetic mean of `scores`, rounded up to the nearest `f64`.
/// `None` for an empty slice or non-finite input.
pub fn mean_threshold(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut sum = BigRational::from_integer(0.into());
    for &s in scores {
        sum += BigRational::from_float(s)?;
    }
    let mean = sum / BigRational::from_integer(scores.len().into());
    let nearest = mean.to_f64()?;
    let as_rational = BigRational::from_float(nearest)?;
    Some(if as_rational < mean {
        nearest.next_up()
    } else {
        nearest
    })
}

/// Scored item entering a threshold filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub record_id: String,
    pub aug_index: usize,
    pub label: String,
    pub score: f64,
}

/// Group by label, threshold at the label mean, keep `score >= threshold`.
pub fn threshold_decisions(
    items: &[ScoredItem],
) -> (BTreeMap<String, f64>, Vec<FilterDecision>) {
    let mut by_label: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for it in items {
        by_label.entry(&it.label).or_default().push(it.score);
    }
    let thresholds: BTreeMap<String, f64> = by_label
        .iter()
        .filter_map(|(l, s)| mean_threshold(s).map(|t| (l.to_string(), t)))
        .collect();
    let decisions = apply_thresholds(items, &thresholds);
    (thresholds, decisions)
}

/// Decide against fixed thresholds. Items whose label has no threshold are kept.
pub fn apply_thresholds(
    items: &[ScoredItem],
    thresholds: &BTreeMap<String, f64>,
) -> Vec<FilterDecision> {
    items
        .iter()
        .map(|it| {
            let t = thresholds.get(&it.label).copied();
            let kept = t.is_none_or(|t| it.score >= t);
            let reason = match t {
                Some(t) if kept => format!("score {:.6} >= threshold {t:.6}", it.score),
                Some(t) => format!("score {:.6} < threshold {t:.6}", it.score),
                None => "no threshold".to_string(),
            };
            FilterDecision {
                record_id: it.record_id.clone(),
                aug_index: it.aug_index,
                label: it.label.clone(),
                score: it.score,
                kept,
                reason,
                label_scores: None,
            }
        })
        .collect()
}

/// Keep iff `true_index` is the unique maximum. Returns `(kept, predicted)`
/// where `predicted` is the first index attaining the maximum.
pub fn label_argmax_decision(scores: &[f64], true_index: usize) -> (bool, usize) {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let max = scores[best];
    let winners = scores.iter().filter(|&&s| s == max).count();
    (best == true_index && winners == 1, best)
}

/// `a photo of a <label>`, with `an` before a vowel.
pub fn label_prompt(label: &str) -> String {
    let article = match label.trim().chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    };
    format!("a photo of {article} {}", label.trim())
}

fn load_aug_image(record: &AugRecord, base_dir: &Path) -> Result<RgbImage, String> {
    let rel = record
        .output_path
        .as_deref()
        .ok_or_else(|| "record has no output_path".to_string())?;
    imageio::load_rgb(&base_dir.join(rel)).map_err(|e: ImageIoError| e.to_string())
}

/// Records a filter should look at: generated successfully and not already dropped.
fn candidates(manifest: &AugmentationManifest) -> Vec<&AugRecord> {
    manifest
        .records
        .iter()
        .filter(|r| r.is_ok() && !r.filter_status.is_dropped())
        .collect()
}

fn totals(decisions: &[FilterDecision], failures: &[ScoringFailure]) -> BTreeMap<String, LabelTotals> {
    let mut t: BTreeMap<String, LabelTotals> = BTreeMap::new();
    for d in decisions {
        let e = t.entry(d.label.clone()).or_default();
        e.input += 1;
        if d.kept {
            e.kept += 1;
        } else {
            e.dropped += 1;
        }
    }
    for f in failures {
        t.entry(f.label.clone()).or_default().failed += 1;
    }
    t
}

fn split_results(
    records: &[&AugRecord],
    results: Vec<Result<f64, String>>,
) -> (Vec<ScoredItem>, Vec<ScoringFailure>) {
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(score) => items.push(ScoredItem {
                record_id: r.record_id.clone(),
                aug_index: r.aug_index,
                label: r.label_text.clone(),
                score,
            }),
            Err(error) => failures.push(ScoringFailure {
                record_id: r.record_id.clone(),
                aug_index: r.aug_index,
                label: r.label_text.clone(),
                error,
            }),
        }
    }
    (items, failures)
}

fn be(e: BackendError) -> String {
    e.to_string()
}

pub fn label_filter(
    manifest: &AugmentationManifest,
    base_dir: &Path,
    label_set: &[String],
    scorer: &dyn Scorer,
) -> Result<FilterReport, FilterError> {
    if label_set.is_empty() {
        return Err(FilterError::EmptyLabelSet);
    }
    let records = candidates(manifest);
    for r in &records {
        if !label_set.contains(&r.label_text) {
            return Err(FilterError::UnknownLabel {
                record_id: r.record_id.clone(),
                label: r.label_text.clone(),
            });
        }
    }
    let text_embeddings: Vec<Result<Vec<f64>, String>> = label_set
        .iter()
        .map(|l| scorer.embed_text(&label_prompt(l)).map_err(be))
        .collect();

    let results: Vec<Result<Vec<f64>, String>> = records
        .par_iter()
        .map(|r| {
            let img = load_aug_image(r, base_dir)?;
            let emb = scorer.embed_image(&img).map_err(be)?;
            text_embeddings
                .iter()
                .map(|t| t.as_ref().map(|t| cosine(&emb, t)).map_err(Clone::clone))
                .collect()
        })
        .collect();

    let mut decisions = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(scores) => {
                let true_index = label_set
                    .iter()
                    .position(|l| *l == r.label_text)
                    .expect("checked above");
                let (kept, predicted) = label_argmax_decision(&scores, true_index);
                let reason = if kept {
                    "predicted label matches".to_string()
                } else if predicted == true_index {
                    "tied with another label".to_string()
                } else {
                    format!("predicted {:?}", label_set[predicted])
                };
                decisions.push(FilterDecision {
                    record_id: r.record_id.clone(),
                    aug_index: r.aug_index,
                    label: r.label_text.clone(),
                    score: scores[true_index],
                    kept,
                    reason,
                    label_scores: Some(scores),
                });
            }
            Err(error) => failures.push(ScoringFailure {
                record_id: r.record_id.clone(),
                aug_index: r.aug_index,
                label: r.label_text.clone(),
                error,
            }),
        }
    }
    let totals = totals(&decisions, &failures);
    Ok(FilterReport {
        filter_kind: FilterKind::Label,
        scorer_id: scorer.id().to_string(),
        thresholds: BTreeMap::new(),
        decisions,
        failures,
        totals,
    })
}

pub fn prompt_filter(
    manifest: &AugmentationManifest,
    base_dir: &Path,
    scorer: &dyn Scorer,
) -> Result<FilterReport, FilterError> {
    let records = candidates(manifest);
    let results: Vec<Result<f64, String>> = records
        .par_iter()
        .map(|r| {
            let prompt = r
                .request
                .as_ref()
                .map(|q| q.prompt.rendered_text.as_str())
                .filter(|p| !p.is_empty())
                .ok_or_else(|| "record carries no prompt".to_string())?;
            let img = load_aug_image(r, base_dir)?;
            Ok(cosine(
                &scorer.embed_image(&img).map_err(be)?,
                &scorer.embed_text(prompt).map_err(be)?,
            ))
        })
        .collect();
    Ok(threshold_report(FilterKind::Prompt, scorer, &records, results))
}

pub fn original_image_filter(
    manifest: &AugmentationManifest,
    base_dir: &Path,
    originals: &DatasetManifest,
    scorer: &dyn Scorer,
) -> Result<FilterReport, FilterError> {
    let records = candidates(manifest);
    let mut needed: Vec<&str> = records.iter().map(|r| r.record_id.as_str()).collect();
    needed.sort_unstable();
    needed.dedup();
    let index: HashMap<&str, usize> = originals
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.as_str(), i))
        .collect();
    for id in &needed {
        if !index.contains_key(id) {
            return Err(FilterError::MissingOriginal(id.to_string()));
        }
    }
    let original_embeddings: HashMap<&str, Result<Vec<f64>, String>> = needed
        .par_iter()
        .map(|id| {
            let rec = &originals.records[index[id]];
            let emb = originals
                .load_image(rec)
                .map_err(|e| e.to_string())
                .and_then(|img| scorer.embed_image(&img).map_err(be));
            (*id, emb)
        })
        .collect();

    let results: Vec<Result<f64, String>> = records
        .par_iter()
        .map(|r| {
            let orig = original_embeddings[r.record_id.as_str()].as_ref().map_err(Clone::clone)?;
            let img = load_aug_image(r, base_dir)?;
            Ok(cosine(&scorer.embed_image(&img).map_err(be)?, orig))
        })
        .collect();
    Ok(threshold_report(FilterKind::Original, scorer, &records, results))
}

fn threshold_report(
    kind: FilterKind,
    scorer: &dyn Scorer,
    records: &[&AugRecord],
    results: Vec<Result<f64, String>>,
) -> FilterReport {
    let (items, failures) = split_results(records, results);
    let (thresholds, decisions) = threshold_decisions(&items);
    let totals = totals(&decisions, &failures);
    FilterReport {
        filter_kind: kind,
        scorer_id: scorer.id().to_string(),
        thresholds,
        decisions,
        failures,
        totals,
    }
}

/// Run one filter of the given kind.
pub fn run_filter(
    kind: FilterKind,
    manifest: &AugmentationManifest,
    base_dir: &Path,
    dataset: &DatasetManifest,
    scorer: &dyn Scorer,
) -> Result<FilterReport, FilterError> {
    match kind {
        FilterKind::Label => label_filter(manifest, base_dir, &dataset.label_set, scorer),
        FilterKind::Prompt => prompt_filter(manifest, base_dir, scorer),
        FilterKind::Original => original_image_filter(manifest, base_dir, dataset, scorer),
    }
}

/// Apply filters in order; each sees only records the previous ones kept.
pub fn apply_filter_chain(
    manifest: &AugmentationManifest,
    base_dir: &Path,
    dataset: &DatasetManifest,
    scorer: &dyn Scorer,
    kinds: &[FilterKind],
) -> Result<(AugmentationManifest, Vec<FilterReport>), FilterError> {
    let mut current = manifest.clone();
    let mut reports = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let report = run_filter(kind, &current, base_dir, dataset, scorer)?;
        current = apply_report(&current, &report)?;
        reports.push(report);
    }
    Ok((current, reports))
}

/// Copy of `manifest` with filter statuses set from `report`. Records the
/// report has no decision for keep their status; records kept by an earlier
/// filter are reopened before the new decision applies.
pub fn apply_report(
    manifest: &AugmentationManifest,
    report: &FilterReport,
) -> Result<AugmentationManifest, FilterError> {
    let decisions: HashMap<(&str, usize), &FilterDecision> = report
        .decisions
        .iter()
        .map(|d| ((d.record_id.as_str(), d.aug_index), d))
        .collect();
    let mut out = manifest.clone();
    for r in &mut out.records {
        if let Some(d) = decisions.get(&(r.record_id.as_str(), r.aug_index)) {
            if r.filter_status == FilterStatus::Kept {
                r.filter_status = FilterStatus::Pending;
            }
            let next = if d.kept {
                FilterStatus::Kept
            } else {
                FilterStatus::Dropped {
                    reason: format!("{} filter: {}", report.filter_kind.as_str(), d.reason),
                }
            };
            r.filter_status.transition(next)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(label: &str, scores: &[f64]) -> Vec<ScoredItem> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredItem {
                record_id: format!("{label}{i}"),
                aug_index: 0,
                label: label.into(),
                score: s,
            })
            .collect()
    }

    #[test]
    fn mean_threshold_keeps_the_mean_itself() {
        let (t, d) = threshold_decisions(&items("cat", &[0.2, 0.4, 0.6]));
        assert_eq!(t["cat"], 0.4);
        let kept: Vec<f64> = d.iter().filter(|d| d.kept).map(|d| d.score).collect();
        assert_eq!(kept, vec![0.4, 0.6]);
    }

    #[test]
    fn equal_and_single_scores_are_all_kept() {
        let (_, d) = threshold_decisions(&items("cat", &[0.1, 0.1, 0.1]));
        assert!(d.iter().all(|d| d.kept));
        let (_, d) = threshold_decisions(&items("cat", &[0.37]));
        assert!(d[0].kept);
        assert!(threshold_decisions(&[]).1.is_empty());
    }

    #[test]
    fn threshold_rounds_up() {
        // naive summation gives 0.30000000000000004 / 3 > 0.1
        let t = mean_threshold(&[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(t, 0.1);
        let t = mean_threshold(&[0.0, 1.0, 1.0]).unwrap();
        assert!(t >= 2.0 / 3.0);
        assert!(BigRational::from_float(t).unwrap() >= BigRational::new(2.into(), 3.into()));
        assert!(BigRational::from_float(t.next_down()).unwrap() < BigRational::new(2.into(), 3.into()));
    }

    #[test]
    fn argmax_rule() {
        assert_eq!(label_argmax_decision(&[0.9, 0.1], 0), (true, 0));
        assert_eq!(label_argmax_decision(&[0.9, 0.1], 1), (false, 0));
        assert_eq!(label_argmax_decision(&[0.5, 0.5], 0), (false, 0));
        assert_eq!(label_argmax_decision(&[0.5, 0.5], 1), (false, 0));
        assert_eq!(label_argmax_decision(&[0.2], 0), (true, 0));
    }

    #[test]
    fn label_prompts_use_vowel_rule() {
        assert_eq!(label_prompt("airplane"), "a photo of an airplane");
        assert_eq!(label_prompt("bird"), "a photo of a bird");
        assert_eq!(label_prompt("Egyptian Mau"), "a photo of an Egyptian Mau");
    }

    #[test]
    fn frozen_thresholds_are_idempotent() {
        let all = items("dog", &[0.3, 0.5, 0.9, 0.1, 0.55]);
        let (t, d) = threshold_decisions(&all);
        let kept: Vec<ScoredItem> = all
            .iter()
            .zip(&d)
            .filter(|(_, d)| d.kept)
            .map(|(i, _)| i.clone())
            .collect();
        assert!(apply_thresholds(&kept, &t).iter().all(|d| d.kept));
    }

    proptest::proptest! {
        #[test]
        fn threshold_partition_invariants(scores in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let (t, d) = threshold_decisions(&items("x", &scores));
            let t = t["x"];
            let kept = d.iter().filter(|d| d.kept).count();
            let dropped = d.len() - kept;
            for dec in &d {
                if dec.kept { proptest::prop_assert!(dec.score >= t) } else { proptest::prop_assert!(dec.score < t) }
            }
            let all_equal = scores.iter().all(|s| *s == scores[0]);
            if all_equal {
                proptest::prop_assert_eq!(dropped, 0);
            } else {
                proptest::prop_assert!(dropped > 0 && kept > 0);
            }
        }
    }
}
