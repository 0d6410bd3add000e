//! Labeled image datasets on disk and their JSON manifests.
//!
//! Ingestion layout is `root/<label>/<image-file>`. Each readable image becomes
//! an [`ImageRecord`]; records are ordered by their path relative to the root
//! so re-scanning an unchanged tree produces a byte-identical manifest.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imageio::{self, ImageIoError};

pub const MANIFEST_FORMAT_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset root does not exist: {0}")]
    MissingRoot(PathBuf),
    #[error("no readable images under {0}")]
    EmptyDataset(PathBuf),
    #[error("unsupported manifest format_version {found:?} (expected {MANIFEST_FORMAT_VERSION:?})")]
    SchemaMismatch { found: String },
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] ImageIoError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub record_id: String,
    /// Path relative to the manifest's `root_path`, `/`-separated.
    pub source_path: String,
    pub label_raw: String,
    pub label_text: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl ImageRecord {
    /// Whether this record belongs to the training split. Records without a
    /// split column are treated as training data.
    pub fn is_train(&self) -> bool {
        match self.split.as_deref() {
            None => true,
            Some(s) => s.eq_ignore_ascii_case("train"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    pub root_path: String,
    /// Newest modification time (unix seconds) among the scanned files.
    pub created_at: u64,
    pub label_set: Vec<String>,
    pub records: Vec<ImageRecord>,
}

/// A file that looked like an image but could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnreadableImage {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ScanReport {
    pub manifest: DatasetManifest,
    pub unreadable: Vec<UnreadableImage>,
}

/// Human-readable label: underscores become spaces.
pub fn label_text_from_raw(label_raw: &str) -> String {
    label_raw.replace('_', " ")
}

/// SHA-256 of `label_raw \0 file_name`, first 16 hex characters.
pub fn record_id_for(label_raw: &str, file_name: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(label_raw.as_bytes());
    hasher.update([0u8]);
    hasher.update(file_name.as_bytes());
    let digest = hex::encode(hasher.finalize());
    digest[..16].to_string()
}

fn is_hidden(name: &str) -> bool {
    name.starts_with('.')
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>, DatasetError> {
    let mut entries = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Scan `root/<label>/<file>` into a manifest. Undecodable files are skipped
/// and reported in [`ScanReport::unreadable`].
pub fn scan_dataset(root: &Path) -> Result<ScanReport, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_path_buf()));
    }
    let mut records = Vec::new();
    let mut unreadable = Vec::new();
    let mut labels = BTreeSet::new();
    let mut newest = 0u64;

    for label_entry in sorted_entries(root)? {
        let label_raw = label_entry.file_name().to_string_lossy().into_owned();
        if is_hidden(&label_raw) || !label_entry.path().is_dir() {
            continue;
        }
        for file_entry in sorted_entries(&label_entry.path())? {
            let file_name = file_entry.file_name().to_string_lossy().into_owned();
            let path = file_entry.path();
            if is_hidden(&file_name) || !path.is_file() {
                continue;
            }
            let image = match imageio::load_rgb(&path) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping unreadable image {}: {e}", path.display());
                    unreadable.push(UnreadableImage {
                        path,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            if let Ok(modified) = file_entry.metadata().and_then(|m| m.modified()) {
                if let Ok(d) = modified.duration_since(UNIX_EPOCH) {
                    newest = newest.max(d.as_secs());
                }
            }
            let label_text = label_text_from_raw(&label_raw);
            labels.insert(label_text.clone());
            records.push(ImageRecord {
                record_id: record_id_for(&label_raw, &file_name),
                source_path: format!("{label_raw}/{file_name}"),
                label_raw: label_raw.clone(),
                label_text,
                width: image.width(),
                height: image.height(),
                split: None,
            });
        }
    }

    if records.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    records.sort_by(|a, b| a.source_path.cmp(&b.source_path));

    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION.to_string(),
        root_path: root.display().to_string(),
        created_at: newest,
        label_set: labels.into_iter().collect(),
        records,
    };
    manifest.validate()?;
    Ok(ScanReport {
        manifest,
        unreadable,
    })
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(DatasetError::SchemaMismatch {
                found: self.format_version.clone(),
            });
        }
        let labels: HashSet<&str> = self.label_set.iter().map(String::as_str).collect();
        if labels.len() != self.label_set.len() {
            return Err(DatasetError::Invalid("label_set has duplicates".into()));
        }
        let mut ids = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if !ids.insert(r.record_id.as_str()) {
                return Err(DatasetError::Invalid(format!(
                    "duplicate record_id {}",
                    r.record_id
                )));
            }
            if !labels.contains(r.label_text.as_str()) {
                return Err(DatasetError::Invalid(format!(
                    "record {} has label {:?} outside label_set",
                    r.record_id, r.label_text
                )));
            }
            if r.label_text.contains('_') {
                return Err(DatasetError::Invalid(format!(
                    "record {} label_text contains an underscore",
                    r.record_id
                )));
            }
            if r.width == 0 || r.height == 0 {
                return Err(DatasetError::Invalid(format!(
                    "record {} has zero dimension",
                    r.record_id
                )));
            }
            if i > 0 && self.records[i - 1].source_path > r.source_path {
                return Err(DatasetError::Invalid("records are not sorted by source_path".into()));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        Path::new(&self.root_path).join(&record.source_path)
    }

    pub fn load_image(&self, record: &ImageRecord) -> Result<RgbImage, DatasetError> {
        Ok(imageio::load_rgb(&self.resolve(record))?)
    }

    pub fn label_index(&self, label_text: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label_text)
    }

    pub fn record(&self, record_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    manifest.validate()?;
    let json = manifest.to_json()?;
    imageio::write_atomic(path, json.as_bytes()).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    // Gate on the version before attempting the full schema.
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    if version != MANIFEST_FORMAT_VERSION {
        return Err(DatasetError::SchemaMismatch { found: version });
    }
    let manifest: DatasetManifest = serde_json::from_value(value)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Layout of a CIFAR binary archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarFlavor {
    /// One label byte followed by 3072 pixel bytes.
    Cifar10,
    /// Coarse and fine label bytes followed by 3072 pixel bytes; the fine label is used.
    Cifar100,
}

impl CifarFlavor {
    fn label_bytes(self) -> usize {
        match self {
            CifarFlavor::Cifar10 => 1,
            CifarFlavor::Cifar100 => 2,
        }
    }
}

const CIFAR_SIDE: u32 = 32;
const CIFAR_PIXELS: usize = 32 * 32;

/// Convert CIFAR binary batches into the `root/<label>/<file>.png` layout.
///
/// Files are named `<archive-stem>_<index>.png`. At most `limit_per_label`
/// images per label are written when set. Returns the number written.
pub fn import_cifar_binary(
    archives: &[PathBuf],
    label_names: &[String],
    flavor: CifarFlavor,
    out_root: &Path,
    limit_per_label: Option<usize>,
) -> Result<usize, DatasetError> {
    let record_len = flavor.label_bytes() + 3 * CIFAR_PIXELS;
    let mut per_label = vec![0usize; label_names.len()];
    let mut written = 0;
    for archive in archives {
        let mut bytes = Vec::new();
        fs::File::open(archive)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(archive))?;
        if bytes.len() % record_len != 0 {
            return Err(DatasetError::Invalid(format!(
                "{} is not a whole number of {record_len}-byte records",
                archive.display()
            )));
        }
        let stem = archive
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "batch".into());
        for (index, chunk) in bytes.chunks_exact(record_len).enumerate() {
            let label = chunk[flavor.label_bytes() - 1] as usize;
            let name = label_names.get(label).ok_or_else(|| {
                DatasetError::Invalid(format!("label index {label} has no name"))
            })?;
            if limit_per_label.is_some_and(|lim| per_label[label] >= lim) {
                continue;
            }
            let pixels = &chunk[flavor.label_bytes()..];
            let img = RgbImage::from_fn(CIFAR_SIDE, CIFAR_SIDE, |x, y| {
                let i = (y * CIFAR_SIDE + x) as usize;
                image::Rgb([
                    pixels[i],
                    pixels[CIFAR_PIXELS + i],
                    pixels[2 * CIFAR_PIXELS + i],
                ])
            });
            let path = out_root.join(name).join(format!("{stem}_{index:05}.png"));
            let png = imageio::encode_png(&img)?;
            imageio::write_atomic(&path, &png).map_err(io_err(&path))?;
            per_label[label] += 1;
            written += 1;
        }
    }
    Ok(written)
}
