use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BaselineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomErasingParams {
    /// Probability of erasing at all.
    pub p: f64,
    /// Erased area fraction is drawn from `[s_l, s_h]`.
    pub s_l: f64,
    pub s_h: f64,
    /// Aspect ratio is drawn from `[r1, 1/r1]`.
    pub r1: f64,
}

impl Default for RandomErasingParams {
    fn default() -> Self {
        Self {
            p: 0.5,
            s_l: 0.02,
            s_h: 0.4,
            r1: 0.3,
        }
    }
}

impl RandomErasingParams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let ok = (0.0..=1.0).contains(&self.p)
            && 0.0 < self.s_l
            && self.s_l <= self.s_h
            && self.s_h <= 1.0
            && 0.0 < self.r1
            && self.r1 <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(BaselineError::InvalidConfig(format!(
                "random erasing needs 0<=p<=1, 0<s_l<=s_h<=1, 0<r1<=1, got {self:?}"
            )))
        }
    }
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Erased rectangle: top-left corner and size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Erase one random rectangle with uniform random pixel values, with
/// probability `p`. The rectangle is always at least 1x1 and fits inside.
pub fn random_erasing<R: Rng>(
    image: &RgbImage,
    params: &RandomErasingParams,
    rng: &mut R,
) -> Result<RgbImage, BaselineError> {
    random_erasing_region(image, params, rng).map(|(img, _)| img)
}

/// Like [`random_erasing`], also returning the erased region (if any).
pub fn random_erasing_region<R: Rng>(
    image: &RgbImage,
    params: &RandomErasingParams,
    rng: &mut R,
) -> Result<(RgbImage, Option<EraseRegion>), BaselineError> {
    params.validate()?;
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(BaselineError::DegenerateImage);
    }
    let mut out = image.clone();
    if rng.random::<f64>() >= params.p {
        return Ok((out, None));
    }
    let area = f64::from(w) * f64::from(h);
    let target = uniform(rng, params.s_l, params.s_h) * area;
    let ratio = uniform(rng, params.r1, 1.0 / params.r1);
    let ew = ((target * ratio).sqrt().round() as u32).clamp(1, w);
    let eh = ((target / ratio).sqrt().round() as u32).clamp(1, h);
    let x0 = rng.random_range(0..=w - ew);
    let y0 = rng.random_range(0..=h - eh);
    for y in y0..y0 + eh {
        for x in x0..x0 + ew {
            let mut px = [0u8; 3];
            rng.fill(&mut px);
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
    Ok((
        out,
        Some(EraseRegion {
            x: x0,
            y: y0,
            width: ew,
            height: eh,
        }),
    ))
}
