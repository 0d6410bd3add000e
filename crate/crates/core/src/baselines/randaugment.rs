//! RandAugment: apply `n` operations drawn uniformly (with replacement) from a
//! fixed catalog, all at the shared magnitude `m` out of `m_max`.
//!
//! Magnitude table, with `t = m / m_max`:
//!
//! | op            | magnitude                  | signed |
//! |---------------|----------------------------|--------|
//! | identity      | -                          | no     |
//! | auto_contrast | -                          | no     |
//! | equalize      | -                          | no     |
//! | rotate        | 30 t degrees               | yes    |
//! | solarize      | threshold 255 (1 - t)      | no     |
//! | color         | factor 1 ± 0.9 t           | yes    |
//! | posterize     | 8 - round(4 t) bits        | no     |
//! | contrast      | factor 1 ± 0.9 t           | yes    |
//! | brightness    | factor 1 ± 0.9 t           | yes    |
//! | sharpness     | factor 1 ± 0.9 t           | yes    |
//! | shear_x       | 0.3 t                      | yes    |
//! | shear_y       | 0.3 t                      | yes    |
//! | translate_x   | 150/331 · width · t pixels | yes    |
//! | translate_y   | 150/331 · height · t pixels| yes    |
//!
//! Geometric ops use nearest-neighbour sampling and fill uncovered pixels
//! with black.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BaselineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandAugmentParams {
    pub n: usize,
    pub m: u32,
    pub m_max: u32,
}

impl Default for RandAugmentParams {
    fn default() -> Self {
        Self { n: 2, m: 9, m_max: 30 }
    }
}

impl RandAugmentParams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.m_max == 0 || self.m > self.m_max {
            return Err(BaselineError::InvalidConfig(format!(
                "randaugment needs 0 <= m <= m_max and m_max > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Identity,
    AutoContrast,
    Equalize,
    Rotate,
    Solarize,
    Color,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

pub const CATALOG: [Op; 14] = [
    Op::Identity,
    Op::AutoContrast,
    Op::Equalize,
    Op::Rotate,
    Op::Solarize,
    Op::Color,
    Op::Posterize,
    Op::Contrast,
    Op::Brightness,
    Op::Sharpness,
    Op::ShearX,
    Op::ShearY,
    Op::TranslateX,
    Op::TranslateY,
];

impl Op {
    pub fn signed(self) -> bool {
        matches!(
            self,
            Op::Rotate
                | Op::Color
                | Op::Contrast
                | Op::Brightness
                | Op::Sharpness
                | Op::ShearX
                | Op::ShearY
                | Op::TranslateX
                | Op::TranslateY
        )
    }

    /// Unsigned magnitude for `m` of `m_max` on a `width x height` image.
    pub fn magnitude(self, m: u32, m_max: u32, width: u32, height: u32) -> f64 {
        let t = f64::from(m) / f64::from(m_max);
        match self {
            Op::Identity | Op::AutoContrast | Op::Equalize => 0.0,
            Op::Rotate => 30.0 * t,
            Op::Solarize => 255.0 * (1.0 - t),
            Op::Color | Op::Contrast | Op::Brightness | Op::Sharpness => 0.9 * t,
            Op::Posterize => 8.0 - (4.0 * t).round(),
            Op::ShearX | Op::ShearY => 0.3 * t,
            Op::TranslateX => 150.0 / 331.0 * f64::from(width) * t,
            Op::TranslateY => 150.0 / 331.0 * f64::from(height) * t,
        }
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// `degenerate + factor * (image - degenerate)`, per channel.
fn blend(image: &RgbImage, degenerate: &RgbImage, factor: f64) -> RgbImage {
    let mut out = image.clone();
    for (o, d) in out.pixels_mut().zip(degenerate.pixels()) {
        for c in 0..3 {
            let (x, y) = (f64::from(o[c]), f64::from(d[c]));
            o[c] = clamp_u8(y + factor * (x - y));
        }
    }
    out
}

fn luma(p: &Rgb<u8>) -> u8 {
    // integer ITU-R 601-2 transform
    ((u32::from(p[0]) * 299 + u32::from(p[1]) * 587 + u32::from(p[2]) * 114) / 1000) as u8
}

fn grayscale(image: &RgbImage) -> RgbImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        let l = luma(p);
        *p = Rgb([l, l, l]);
    }
    out
}

/// Inverse-mapped resampling: `source(x, y)` gives the source coordinate for
/// output pixel centre `(x + 0.5, y + 0.5)`.
fn remap(image: &RgbImage, source: impl Fn(f64, f64) -> (f64, f64)) -> RgbImage {
    let (w, h) = image.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let (sx, sy) = source(f64::from(x) + 0.5, f64::from(y) + 0.5);
        let (ix, iy) = (sx.floor(), sy.floor());
        if ix >= 0.0 && iy >= 0.0 && ix < f64::from(w) && iy < f64::from(h) {
            *image.get_pixel(ix as u32, iy as u32)
        } else {
            Rgb([0, 0, 0])
        }
    })
}

fn auto_contrast(image: &RgbImage) -> RgbImage {
    let mut out = image.clone();
    for c in 0..3 {
        let lo = image.pixels().map(|p| p[c]).min().unwrap_or(0);
        let hi = image.pixels().map(|p| p[c]).max().unwrap_or(255);
        if hi <= lo {
            continue;
        }
        let scale = 255.0 / f64::from(hi - lo);
        for p in out.pixels_mut() {
            p[c] = clamp_u8(f64::from(p[c] - lo) * scale);
        }
    }
    out
}

fn equalize(image: &RgbImage) -> RgbImage {
    let mut out = image.clone();
    for c in 0..3 {
        let mut hist = [0usize; 256];
        for p in image.pixels() {
            hist[usize::from(p[c])] += 1;
        }
        let last = hist.iter().rposition(|&n| n > 0).map_or(0, |i| hist[i]);
        let step = (hist.iter().sum::<usize>() - last) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (i, slot) in lut.iter_mut().enumerate() {
            *slot = (n / step).min(255) as u8;
            n += hist[i];
        }
        for p in out.pixels_mut() {
            p[c] = lut[usize::from(p[c])];
        }
    }
    out
}

fn smooth(image: &RgbImage) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut out = image.clone();
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = [0u32; 3];
            for dy in 0..3 {
                for dx in 0..3 {
                    let weight = if dx == 1 && dy == 1 { 5 } else { 1 };
                    let p = image.get_pixel(x + dx - 1, y + dy - 1);
                    for c in 0..3 {
                        acc[c] += weight * u32::from(p[c]);
                    }
                }
            }
            out.put_pixel(x, y, Rgb(acc.map(|a| clamp_u8(f64::from(a) / 13.0))));
        }
    }
    out
}

/// Apply one op with a signed magnitude (sign ignored by unsigned ops).
pub fn apply_op(image: &RgbImage, op: Op, magnitude: f64) -> RgbImage {
    let (w, h) = image.dimensions();
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    match op {
        Op::Identity => image.clone(),
        Op::AutoContrast => auto_contrast(image),
        Op::Equalize => equalize(image),
        Op::Rotate => {
            let (s, c) = magnitude.to_radians().sin_cos();
            remap(image, |x, y| {
                let (px, py) = (x - cx, y - cy);
                (c * px - s * py + cx, s * px + c * py + cy)
            })
        }
        Op::Solarize => {
            let mut out = image.clone();
            for p in out.pixels_mut() {
                for v in p.0.iter_mut() {
                    if f64::from(*v) >= magnitude {
                        *v = 255 - *v;
                    }
                }
            }
            out
        }
        Op::Posterize => {
            let bits = magnitude.clamp(0.0, 8.0) as u32;
            let mask = if bits == 0 { 0u8 } else { (0xFFu16 << (8 - bits)) as u8 };
            let mut out = image.clone();
            for p in out.pixels_mut() {
                for v in p.0.iter_mut() {
                    *v &= mask;
                }
            }
            out
        }
        Op::Color => blend(image, &grayscale(image), 1.0 + magnitude),
        Op::Contrast => {
            let n = (w as usize * h as usize).max(1) as f64;
            let mean = image.pixels().map(|p| f64::from(luma(p))).sum::<f64>() / n;
            let m = clamp_u8(mean);
            blend(image, &RgbImage::from_pixel(w, h, Rgb([m, m, m])), 1.0 + magnitude)
        }
        Op::Brightness => blend(image, &RgbImage::new(w, h), 1.0 + magnitude),
        Op::Sharpness => blend(image, &smooth(image), 1.0 + magnitude),
        Op::ShearX => remap(image, |x, y| (x + magnitude * y, y)),
        Op::ShearY => remap(image, |x, y| (x, y + magnitude * x)),
        Op::TranslateX => remap(image, |x, y| (x - magnitude, y)),
        Op::TranslateY => remap(image, |x, y| (x, y - magnitude)),
    }
}

/// Apply a fixed op sequence at magnitude `m` of `m_max`, each signed op
/// taking the given sign.
pub fn apply_ops(image: &RgbImage, ops: &[(Op, bool)], m: u32, m_max: u32) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut out = image.clone();
    for &(op, negative) in ops {
        let mag = op.magnitude(m, m_max, w, h);
        let mag = if op.signed() && negative { -mag } else { mag };
        out = apply_op(&out, op, mag);
    }
    out
}

/// Draw the op sequence RandAugment would apply.
pub fn sample_ops<R: Rng>(n: usize, rng: &mut R) -> Vec<(Op, bool)> {
    (0..n)
        .map(|_| {
            let op = CATALOG[rng.random_range(0..CATALOG.len())];
            (op, rng.random::<bool>())
        })
        .collect()
}

pub fn rand_augment<R: Rng>(
    image: &RgbImage,
    params: &RandAugmentParams,
    rng: &mut R,
) -> Result<(RgbImage, Vec<(Op, bool)>), BaselineError> {
    params.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(BaselineError::DegenerateImage);
    }
    let ops = sample_ops(params.n, rng);
    Ok((apply_ops(image, &ops, params.m, params.m_max), ops))
}
