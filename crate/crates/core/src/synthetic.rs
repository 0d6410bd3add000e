//! Deterministic synthetic image datasets for tests, demos and the
//! acceptance suite. Each label is a fixed spatial pattern; instances vary
//! by tint, a small shift and per-pixel noise.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::dataset::{scan_dataset, DatasetError, DatasetManifest};
use crate::imageio;
use crate::seed::{rng_from_seed, stage_seed};

pub const SYNTHETIC_LABELS: [&str; 3] = ["left_block", "top_block", "center_disk"];

/// Bright-region predicate for a label's pattern on a `size x size` canvas.
fn inside(label_index: usize, x: i64, y: i64, size: i64) -> bool {
    match label_index % 3 {
        0 => x < size / 2,
        1 => y < size / 2,
        _ => {
            let c = size / 2;
            let r = size / 3;
            (x - c).pow(2) + (y - c).pow(2) <= r * r
        }
    }
}

pub fn synthetic_image(label_index: usize, instance: usize, seed: u64, size: u32) -> RgbImage {
    let mut rng = rng_from_seed(stage_seed(seed, "synthetic", (label_index * 100_000 + instance) as u64));
    let tint: [i32; 3] = [rng.random_range(-40..=40), rng.random_range(-40..=40), rng.random_range(-40..=40)];
    let dx = rng.random_range(-2i64..=2);
    let dy = rng.random_range(-2i64..=2);
    let s = i64::from(size);
    RgbImage::from_fn(size, size, |x, y| {
        let on = inside(label_index, i64::from(x) - dx, i64::from(y) - dy, s);
        let base = if on { 200 } else { 40 };
        let mut px = [0u8; 3];
        for (c, v) in px.iter_mut().enumerate() {
            let noise: i32 = rng.random_range(-20..=20);
            *v = (base + tint[c] + noise).clamp(0, 255) as u8;
        }
        Rgb(px)
    })
}

/// Write `per_label` PNGs for each synthetic label under `root/<label>/` and
/// return the scanned manifest.
pub fn write_synthetic_dataset(
    root: &Path,
    per_label: usize,
    size: u32,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    for (li, label) in SYNTHETIC_LABELS.iter().enumerate() {
        for i in 0..per_label {
            let img = synthetic_image(li, i, seed, size);
            let path = root.join(label).join(format!("{label}_{i:03}.png"));
            imageio::write_atomic(&path, &imageio::encode_png(&img)?).map_err(|source| DatasetError::Io {
                path: path.clone(),
                source,
            })?;
        }
    }
    Ok(scan_dataset(root)?.manifest)
}
