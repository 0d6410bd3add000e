use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::Serialize;

use super::font::{draw_text, GLYPH_H};
use super::EvalError;
use crate::dataset::DatasetManifest;
use crate::generation::{AugRecord, AugmentationManifest, FilterStatus};
use crate::imageio;

pub const TILE: u32 = 64;
const PAD: u32 = 2;
const STRIP: u32 = GLYPH_H + 4;
const BACKGROUND: Rgb<u8> = Rgb([240, 240, 240]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);

/// One method column: a name and its manifest with the directory its
/// `output_path`s are relative to.
#[derive(Debug, Clone, Copy)]
pub struct GridColumn<'a> {
    pub name: &'a str,
    pub manifest: &'a AugmentationManifest,
    pub base_dir: &'a Path,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GridLayout {
    pub rows: usize,
    /// Original column included.
    pub cols: usize,
    pub width: u32,
    pub height: u32,
    pub record_ids: Vec<String>,
    pub placeholders: usize,
}

fn placeholder() -> RgbImage {
    RgbImage::from_fn(TILE, TILE, |x, y| {
        if (x + y) % 8 < 2 {
            Rgb([170, 170, 170])
        } else {
            Rgb([215, 215, 215])
        }
    })
}

fn status_text(r: &AugRecord) -> &'static str {
    match r.filter_status {
        FilterStatus::Pending => "pending",
        FilterStatus::Kept => "kept",
        FilterStatus::Dropped { .. } => "dropped",
    }
}

fn tile(img: &RgbImage) -> RgbImage {
    imageops::resize(img, TILE, TILE, FilterType::Nearest)
}

/// Compose originals (first column) and one column per method. Rows are the
/// union of record ids across methods, sorted; cells a method lacks become
/// placeholder tiles.
pub fn render_grid(
    originals: &DatasetManifest,
    columns: &[GridColumn<'_>],
    out_path: &Path,
) -> Result<GridLayout, EvalError> {
    if columns.is_empty() {
        return Err(EvalError::InvalidInput("grid needs at least one method".into()));
    }
    let per_method: Vec<BTreeMap<&str, &AugRecord>> = columns
        .iter()
        .map(|c| {
            let mut m = BTreeMap::new();
            for r in c.manifest.records.iter().filter(|r| r.is_ok()) {
                let e = m.entry(r.record_id.as_str()).or_insert(r);
                if r.aug_index < e.aug_index {
                    *e = r;
                }
            }
            m
        })
        .collect();
    let mut common: BTreeSet<&str> = per_method[0].keys().copied().collect();
    for m in &per_method[1..] {
        common.retain(|id| m.contains_key(id));
    }
    if common.is_empty() {
        return Err(EvalError::NoCommonRecords);
    }
    let rows: Vec<&str> = per_method
        .iter()
        .flat_map(|m| m.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|id| originals.record(id).is_some())
        .collect();

    let cols = columns.len() + 1;
    let cell_w = TILE + PAD;
    let cell_h = TILE + STRIP + PAD;
    let width = PAD + cols as u32 * cell_w;
    let height = STRIP + PAD + rows.len() as u32 * cell_h;
    let mut canvas = RgbImage::from_pixel(width, height, BACKGROUND);

    let headers: Vec<&str> = std::iter::once("original").chain(columns.iter().map(|c| c.name)).collect();
    for (ci, h) in headers.iter().enumerate() {
        draw_text(&mut canvas, PAD + ci as u32 * cell_w, 2, h, INK, TILE);
    }

    let mut placeholders = 0;
    for (ri, id) in rows.iter().enumerate() {
        let y = STRIP + PAD + ri as u32 * cell_h;
        let orig = originals.record(id).expect("filtered above");
        let mut cells: Vec<(Option<RgbImage>, String)> =
            vec![(originals.load_image(orig).ok().map(|i| tile(&i)), orig.label_text.clone())];
        for (c, m) in columns.iter().zip(&per_method) {
            cells.push(match m.get(id) {
                Some(r) => {
                    let img = r
                        .output_path
                        .as_deref()
                        .and_then(|p| imageio::load_rgb(&c.base_dir.join(p)).ok())
                        .map(|i| tile(&i));
                    (img, status_text(r).to_string())
                }
                None => (None, "missing".to_string()),
            });
        }
        for (ci, (img, caption)) in cells.into_iter().enumerate() {
            let x = PAD + ci as u32 * cell_w;
            let img = img.unwrap_or_else(|| {
                placeholders += 1;
                placeholder()
            });
            imageops::replace(&mut canvas, &img, i64::from(x), i64::from(y));
            draw_text(&mut canvas, x, y + TILE + 2, &caption, INK, TILE);
        }
    }
    let png = imageio::encode_png(&canvas)?;
    imageio::write_atomic(out_path, &png)?;
    Ok(GridLayout {
        rows: rows.len(),
        cols,
        width,
        height,
        record_ids: rows.iter().map(|s| s.to_string()).collect(),
        placeholders,
    })
}
