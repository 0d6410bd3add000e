//! Image features from the scorer backend, cached by (scorer id, file checksum).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::backends::Scorer;
use crate::imageio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheLine {
    scorer_id: String,
    checksum: String,
    feature: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureCache {
    entries: BTreeMap<(String, String), Vec<f64>>,
}

impl FeatureCache {
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let mut cache = Self::default();
        if !path.exists() {
            return Ok(cache);
        }
        for line in std::fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
            let l: CacheLine = serde_json::from_str(line)?;
            cache.entries.insert((l.scorer_id, l.checksum), l.feature);
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut out = String::new();
        for ((scorer_id, checksum), feature) in &self.entries {
            out.push_str(&serde_json::to_string(&CacheLine {
                scorer_id: scorer_id.clone(),
                checksum: checksum.clone(),
                feature: feature.clone(),
            })?);
            out.push('\n');
        }
        imageio::write_atomic(path, out.as_bytes())?;
        Ok(())
    }

    pub fn get(&self, scorer_id: &str, checksum: &str) -> Option<&Vec<f64>> {
        self.entries.get(&(scorer_id.to_string(), checksum.to_string()))
    }

    pub fn insert(&mut self, scorer_id: &str, checksum: &str, feature: Vec<f64>) {
        self.entries.insert((scorer_id.to_string(), checksum.to_string()), feature);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// An image to featurize.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureItem {
    pub key: String,
    pub path: PathBuf,
    /// Known checksum of the file; computed from the bytes when absent.
    pub checksum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub dim: usize,
    pub features: BTreeMap<String, Vec<f64>>,
    /// Items that could not be featurized, with the reason.
    pub failures: BTreeMap<String, String>,
    pub backend_calls: usize,
}

/// Featurize `items`, consulting and filling `cache`. Undecodable images and
/// backend errors become per-item failures.
pub fn extract_features(
    items: &[FeatureItem],
    scorer: &dyn Scorer,
    cache: &mut FeatureCache,
) -> FeatureTable {
    let scorer_id = scorer.id().to_string();
    let checksums: Vec<Result<String, String>> = items
        .par_iter()
        .map(|it| match &it.checksum {
            Some(c) => Ok(c.clone()),
            None => imageio::file_checksum(&it.path).map_err(|e| e.to_string()),
        })
        .collect();

    let misses: Vec<(usize, &String)> = checksums
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.as_ref().ok().map(|c| (i, c)))
        .filter(|(_, c)| cache.get(&scorer_id, c).is_none())
        .collect();
    let computed: Vec<(usize, Result<Vec<f64>, String>)> = misses
        .par_iter()
        .map(|&(i, _)| {
            let feature = imageio::load_rgb(&items[i].path)
                .map_err(|e| e.to_string())
                .and_then(|img| scorer.embed_image(&img).map_err(|e| e.to_string()));
            (i, feature)
        })
        .collect();

    let mut table = FeatureTable {
        dim: scorer.embedding_dim(),
        backend_calls: computed.len(),
        ..Default::default()
    };
    let mut errors: BTreeMap<usize, String> = BTreeMap::new();
    for (i, res) in computed {
        match res {
            Ok(f) if f.len() == table.dim => {
                cache.insert(&scorer_id, checksums[i].as_ref().expect("ok checksum"), f);
            }
            Ok(f) => {
                errors.insert(i, format!("feature has {} dims, expected {}", f.len(), table.dim));
            }
            Err(e) => {
                errors.insert(i, e);
            }
        }
    }
    for (i, item) in items.iter().enumerate() {
        let outcome = match (&checksums[i], errors.remove(&i)) {
            (Err(e), _) => Err(e.clone()),
            (_, Some(e)) => Err(e),
            (Ok(c), None) => cache
                .get(&scorer_id, c)
                .cloned()
                .ok_or_else(|| "feature missing after extraction".to_string()),
        };
        match outcome {
            Ok(f) => {
                table.features.insert(item.key.clone(), f);
            }
            Err(e) => {
                log::warn!("no feature for {}: {e}", item.key);
                table.failures.insert(item.key.clone(), e);
            }
        }
    }
    table
}
