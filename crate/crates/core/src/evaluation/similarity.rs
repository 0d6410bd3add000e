use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::backends::{cosine, Scorer};
use crate::dataset::DatasetManifest;
use crate::generation::{AugRecord, AugmentationManifest};
use crate::imageio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSimilarity {
    pub record_id: String,
    pub label: String,
    /// Similarity to each augmented copy, in aug_index order.
    pub values: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSimilarity {
    pub label: String,
    pub value: f64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub method_id: String,
    pub config_hash: String,
    pub scorer_id: String,
    pub k: usize,
    pub record_count: usize,
    pub overall: f64,
    pub per_label: Vec<LabelSimilarity>,
    pub per_record: Vec<RecordSimilarity>,
}

impl SimilarityReport {
    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        imageio::write_atomic(path, json.as_bytes())?;
        Ok(())
    }

    /// `label,value,records` rows.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "value", "records"])?;
        for l in &self.per_label {
            w.write_record([l.label.clone(), l.value.to_string(), l.records.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))?;
        imageio::write_atomic(path, &bytes)?;
        Ok(())
    }
}

/// Mean image-image similarity between each original and its `k` augmented
/// copies, averaged per label and overall (over originals).
pub fn per_label_similarity(
    manifest: &AugmentationManifest,
    base_dir: &Path,
    originals: &DatasetManifest,
    scorer: &dyn Scorer,
    k: usize,
) -> Result<SimilarityReport, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidInput("k must be at least 1".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&AugRecord>> = BTreeMap::new();
    for r in &manifest.records {
        let g = groups.entry(r.record_id.as_str()).or_default();
        if r.is_ok() {
            g.push(r);
        }
    }
    for (id, g) in &mut groups {
        if g.len() != k {
            return Err(EvalError::IncompleteGroup {
                record_id: id.to_string(),
                found: g.len(),
                expected: k,
            });
        }
        g.sort_by_key(|r| r.aug_index);
    }
    let index: HashMap<&str, usize> = originals
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.as_str(), i))
        .collect();
    if let Some(id) = groups.keys().find(|id| !index.contains_key(*id)) {
        return Err(EvalError::MissingOriginal(id.to_string()));
    }

    let group_list: Vec<(&str, &Vec<&AugRecord>)> = groups.iter().map(|(k, v)| (*k, v)).collect();
    let per_record: Vec<RecordSimilarity> = group_list
        .par_iter()
        .map(|(id, recs)| -> Result<RecordSimilarity, EvalError> {
            let orig = &originals.records[index[id]];
            let oe = scorer.embed_image(&originals.load_image(orig)?)?;
            let mut values = Vec::with_capacity(recs.len());
            for r in recs.iter() {
                let rel = r.output_path.as_deref().ok_or_else(|| {
                    EvalError::InvalidInput(format!("{}#{} has no output_path", r.record_id, r.aug_index))
                })?;
                let img = imageio::load_rgb(&base_dir.join(rel))?;
                values.push(cosine(&oe, &scorer.embed_image(&img)?));
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            Ok(RecordSimilarity {
                record_id: id.to_string(),
                label: orig.label_text.clone(),
                values,
                mean,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut by_label: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &per_record {
        by_label.entry(r.label.as_str()).or_default().push(r.mean);
    }
    let per_label = by_label
        .iter()
        .map(|(l, v)| LabelSimilarity {
            label: l.to_string(),
            value: v.iter().sum::<f64>() / v.len() as f64,
            records: v.len(),
        })
        .collect();
    let overall = if per_record.is_empty() {
        return Err(EvalError::InvalidInput("manifest has no records".into()));
    } else {
        per_record.iter().map(|r| r.mean).sum::<f64>() / per_record.len() as f64
    };
    Ok(SimilarityReport {
        method_id: manifest.header.method.clone(),
        config_hash: manifest.header.config_hash.clone(),
        scorer_id: scorer.id().to_string(),
        k,
        record_count: per_record.len(),
        overall,
        per_label,
        per_record,
    })
}
