//! Augmentation manifest: a JSONL file with one header line followed by one
//! line per augmented image.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GenerationError;
use crate::backends::DiffusionMode;
use crate::captioning::SelectionStrategy;
use crate::imageio;
use crate::prompting::WeightedPrompt;

pub const AUG_FORMAT_VERSION: &str = "1";

/// Everything sent to the diffusion backend for one augmented image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub record_id: String,
    pub aug_index: usize,
    pub prompt: WeightedPrompt,
    pub g_applied: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_raw: Option<f64>,
    pub noise_rate: f64,
    pub denoising_steps: u32,
    pub seed: u64,
    pub mode: DiffusionMode,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_size: Option<(u32, u32)>,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(GenerationError::InvalidRequest(format!(
                "noise_rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        if self.denoising_steps < 1 {
            return Err(GenerationError::InvalidRequest(
                "denoising_steps must be at least 1".into(),
            ));
        }
        if !self.g_applied.is_finite() {
            return Err(GenerationError::InvalidRequest("guidance is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionProvenance {
    pub c_star: String,
    pub s_star: f64,
    pub strategy: SelectionStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FilterStatus {
    #[default]
    Pending,
    Kept,
    Dropped {
        reason: String,
    },
}

impl FilterStatus {
    pub fn is_dropped(&self) -> bool {
        matches!(self, FilterStatus::Dropped { .. })
    }

    /// Only `pending` may move, and only to `kept` or `dropped`.
    pub fn transition(&mut self, next: FilterStatus) -> Result<(), GenerationError> {
        if *self != FilterStatus::Pending || next == FilterStatus::Pending {
            return Err(GenerationError::InvalidRequest(format!(
                "illegal filter transition {self:?} -> {next:?}"
            )));
        }
        *self = next;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
}

/// One augmented image (or one failed attempt at making it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugRecord {
    pub record_id: String,
    pub aug_index: usize,
    pub label_raw: String,
    pub label_text: String,
    /// Original image, relative to the dataset root. `None` for text-to-image.
    #[serde(default)]
    pub source_path: Option<String>,
    /// Method that produced the image (`sgid`, `text2img`, `cutmix`, ...).
    pub method: String,
    pub backend_id: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<GenerationRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<CaptionProvenance>,
    /// Class distribution over the dataset's label_set, when not one-hot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_label: Option<Vec<f64>>,
    pub status: RecordStatus,
    /// Output image relative to the manifest's directory.
    #[serde(default)]
    pub output_path: Option<String>,
    #[serde(default)]
    pub checksum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub filter_status: FilterStatus,
}

impl AugRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }

    /// Key unique within a manifest.
    pub fn key(&self) -> (String, usize) {
        (self.record_id.clone(), self.aug_index)
    }

    /// Relative output location: `<label_raw>/<record_id>_<k>.png`.
    pub fn default_output_path(label_raw: &str, record_id: &str, aug_index: usize) -> String {
        format!("{label_raw}/{record_id}_{aug_index}.png")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: String,
    pub method: String,
    pub config_hash: String,
    pub k_augment: usize,
    pub dataset_root: String,
    /// Number of originals the run was asked to augment.
    pub record_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ManifestHeader),
    Record(Box<AugRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationManifest {
    pub header: ManifestHeader,
    pub records: Vec<AugRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StatusCounts {
    pub pending: usize,
    pub kept: usize,
    pub dropped: usize,
    pub failed: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.pending + self.kept + self.dropped + self.failed
    }
}

impl AugmentationManifest {
    pub fn to_jsonl(&self) -> Result<String, GenerationError> {
        let mut out = serde_json::to_string(&Line::Header(self.header.clone()))?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(&Line::Record(Box::new(r.clone())))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GenerationError> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(line)? {
                Line::Header(h) if i == 0 => header = Some(h),
                Line::Header(_) => {
                    return Err(GenerationError::InvalidManifest(
                        "header must be the first line".into(),
                    ))
                }
                Line::Record(r) => records.push(*r),
            }
        }
        let header = header
            .ok_or_else(|| GenerationError::InvalidManifest("missing header line".into()))?;
        if header.format_version != AUG_FORMAT_VERSION {
            return Err(GenerationError::InvalidManifest(format!(
                "unsupported format_version {:?}",
                header.format_version
            )));
        }
        Ok(Self { header, records })
    }

    pub fn write(&self, path: &Path) -> Result<(), GenerationError> {
        let text = self.to_jsonl()?;
        imageio::write_atomic(path, text.as_bytes()).map_err(|source| GenerationError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, GenerationError> {
        let text = fs::read_to_string(path).map_err(|source| GenerationError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    /// Directory that `output_path` entries are relative to.
    pub fn base_dir(manifest_path: &Path) -> PathBuf {
        manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for r in &self.records {
            if !r.is_ok() {
                c.failed += 1;
                continue;
            }
            match r.filter_status {
                FilterStatus::Pending => c.pending += 1,
                FilterStatus::Kept => c.kept += 1,
                FilterStatus::Dropped { .. } => c.dropped += 1,
            }
        }
        c
    }

    /// Successful records grouped by original record id, in manifest order.
    pub fn groups(&self) -> BTreeMap<&str, Vec<&AugRecord>> {
        let mut g: BTreeMap<&str, Vec<&AugRecord>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.is_ok()) {
            g.entry(r.record_id.as_str()).or_default().push(r);
        }
        g
    }

    /// Check every successful record's file against its checksum.
    pub fn verify_checksums(&self, base_dir: &Path) -> Result<(), GenerationError> {
        for r in self.records.iter().filter(|r| r.is_ok()) {
            let rel = r.output_path.as_deref().ok_or_else(|| {
                GenerationError::InvalidManifest(format!("{} has no output_path", r.record_id))
            })?;
            let actual = imageio::file_checksum(&base_dir.join(rel))?;
            if Some(&actual) != r.checksum.as_ref() {
                return Err(GenerationError::InvalidManifest(format!(
                    "checksum mismatch for {rel}"
                )));
            }
        }
        Ok(())
    }
}
