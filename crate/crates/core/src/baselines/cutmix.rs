use image::RgbImage;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::BaselineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CutMixParams {
    /// λ ~ Beta(alpha, alpha).
    pub alpha: f64,
    /// Probability of mixing at all.
    pub prob: f64,
}

impl Default for CutMixParams {
    fn default() -> Self {
        Self { alpha: 1.0, prob: 0.5 }
    }
}

impl CutMixParams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.alpha > 0.0 && (0.0..=1.0).contains(&self.prob) {
            Ok(())
        } else {
            Err(BaselineError::InvalidConfig(format!(
                "cutmix needs alpha > 0 and prob in [0, 1], got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl CutBox {
    pub fn area(&self) -> u32 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutMixOutput {
    pub image: RgbImage,
    /// Class distribution over `num_classes`.
    pub soft_label: Vec<f64>,
    /// Fraction of image A that survives, after clipping the box.
    pub lambda: f64,
    pub cut: Option<CutBox>,
}

/// Box of side `floor(W*sqrt(1-λ)) x floor(H*sqrt(1-λ))` centred on `center`,
/// clipped to the image.
pub fn cut_box(width: u32, height: u32, lambda: f64, center: (u32, u32)) -> CutBox {
    let ratio = (1.0 - lambda).max(0.0).sqrt();
    let cw = (f64::from(width) * ratio).floor() as i64;
    let ch = (f64::from(height) * ratio).floor() as i64;
    let (cx, cy) = (i64::from(center.0), i64::from(center.1));
    let clip = |v: i64, hi: u32| v.clamp(0, i64::from(hi)) as u32;
    CutBox {
        x1: clip(cx - cw / 2, width),
        y1: clip(cy - ch / 2, height),
        x2: clip(cx - cw / 2 + cw, width),
        y2: clip(cy - ch / 2 + ch, height),
    }
}

fn one_hot(num_classes: usize, class: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[class] = 1.0;
    v
}

/// Paste `b`'s box into `a` with a fixed λ and box centre.
pub fn cutmix_with_lambda(
    a: &RgbImage,
    label_a: usize,
    b: &RgbImage,
    label_b: usize,
    num_classes: usize,
    lambda: f64,
    center: (u32, u32),
) -> Result<CutMixOutput, BaselineError> {
    if a.dimensions() != b.dimensions() {
        return Err(BaselineError::DimensionMismatch {
            a: a.dimensions(),
            b: b.dimensions(),
        });
    }
    if label_a >= num_classes || label_b >= num_classes {
        return Err(BaselineError::InvalidConfig(format!(
            "labels ({label_a}, {label_b}) outside {num_classes} classes"
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(BaselineError::InvalidConfig(format!("lambda {lambda} outside [0, 1]")));
    }
    let (w, h) = a.dimensions();
    if w == 0 || h == 0 {
        return Err(BaselineError::DegenerateImage);
    }
    let cut = cut_box(w, h, lambda, center);
    let mut image = a.clone();
    for y in cut.y1..cut.y2 {
        for x in cut.x1..cut.x2 {
            image.put_pixel(x, y, *b.get_pixel(x, y));
        }
    }
    let adjusted = 1.0 - f64::from(cut.area()) / (f64::from(w) * f64::from(h));
    let mut soft_label = vec![0.0; num_classes];
    soft_label[label_a] += adjusted;
    soft_label[label_b] += 1.0 - adjusted;
    Ok(CutMixOutput {
        image,
        soft_label,
        lambda: adjusted,
        cut: Some(cut),
    })
}

/// With probability `prob`, draw λ ~ Beta(α, α) and a uniform box centre and
/// mix; otherwise return `a` with a one-hot label.
pub fn cutmix<R: Rng>(
    a: &RgbImage,
    label_a: usize,
    b: &RgbImage,
    label_b: usize,
    num_classes: usize,
    params: &CutMixParams,
    rng: &mut R,
) -> Result<CutMixOutput, BaselineError> {
    params.validate()?;
    if a.dimensions() != b.dimensions() {
        return Err(BaselineError::DimensionMismatch {
            a: a.dimensions(),
            b: b.dimensions(),
        });
    }
    if label_a >= num_classes {
        return Err(BaselineError::InvalidConfig(format!(
            "label {label_a} outside {num_classes} classes"
        )));
    }
    let (w, h) = a.dimensions();
    if w == 0 || h == 0 {
        return Err(BaselineError::DegenerateImage);
    }
    if rng.random::<f64>() >= params.prob {
        return Ok(CutMixOutput {
            image: a.clone(),
            soft_label: one_hot(num_classes, label_a),
            lambda: 1.0,
            cut: None,
        });
    }
    let beta = Beta::new(params.alpha, params.alpha)
        .map_err(|e| BaselineError::InvalidConfig(e.to_string()))?;
    let lambda = beta.sample(rng);
    let center = (rng.random_range(0..w), rng.random_range(0..h));
    cutmix_with_lambda(a, label_a, b, label_b, num_classes, lambda, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn solid(v: u8) -> RgbImage {
        RgbImage::from_pixel(32, 32, image::Rgb([v, v, v]))
    }

    #[test]
    fn lambda_064_cuts_19_by_19() {
        let out = cutmix_with_lambda(&solid(0), 0, &solid(255), 1, 2, 0.64, (16, 16)).unwrap();
        let cut = out.cut.unwrap();
        assert_eq!((cut.x2 - cut.x1, cut.y2 - cut.y1), (19, 19));
        let expected = 1.0 - 361.0 / 1024.0;
        assert!((out.lambda - expected).abs() < 1e-12);
        assert!((out.soft_label[0] - expected).abs() < 1e-12);
        let from_b = out.image.pixels().filter(|p| p[0] == 255).count();
        assert_eq!(from_b, 361);
    }

    #[test]
    fn endpoints() {
        let a = solid(10);
        let b = solid(200);
        let full = cutmix_with_lambda(&a, 0, &b, 1, 2, 1.0, (16, 16)).unwrap();
        assert_eq!(full.image, a);
        assert_eq!(full.soft_label, vec![1.0, 0.0]);
        let none = cutmix_with_lambda(&a, 0, &b, 1, 2, 0.0, (16, 16)).unwrap();
        assert_eq!(none.image, b);
        assert_eq!(none.soft_label, vec![0.0, 1.0]);
    }

    #[test]
    fn clipping_at_corner_shrinks_box() {
        let out = cutmix_with_lambda(&solid(0), 0, &solid(255), 1, 2, 0.64, (0, 0)).unwrap();
        let cut = out.cut.unwrap();
        assert_eq!((cut.x1, cut.y1, cut.x2, cut.y2), (0, 0, 10, 10));
        assert!((out.lambda - (1.0 - 100.0 / 1024.0)).abs() < 1e-12);
    }

    #[test]
    fn mismatch_rejected() {
        let b = RgbImage::new(16, 32);
        assert!(matches!(
            cutmix_with_lambda(&solid(0), 0, &b, 1, 2, 0.5, (1, 1)),
            Err(BaselineError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn same_class_mix_stays_one_hot() {
        let out = cutmix_with_lambda(&solid(0), 1, &solid(9), 1, 3, 0.3, (16, 16)).unwrap();
        assert_eq!(out.soft_label, vec![0.0, 1.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn soft_labels_sum_to_one(seed in 0u64..500, la in 0usize..4, lb in 0usize..4) {
            let p = CutMixParams { alpha: 1.0, prob: 1.0 };
            let out = cutmix(&solid(1), la, &solid(2), lb, 4, &p, &mut rng_from_seed(seed)).unwrap();
            let sum: f64 = out.soft_label.iter().sum();
            proptest::prop_assert!((sum - 1.0).abs() < 1e-12);
            let cut = out.cut.unwrap();
            let replaced = out.image.pixels().filter(|px| px[0] == 2).count() as u32;
            proptest::prop_assert_eq!(replaced, cut.area());
        }
    }
}
