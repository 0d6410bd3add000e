//! Multinomial logistic regression trained with momentum SGD.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ProbeConfig, TrainError};
use crate::seed::rng_from_seed;

/// Row-wise softmax, shifted by the row max for stability.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Mean soft-target cross-entropy plus `weight_decay / 2 * ||w||^2`, and its
/// gradients with respect to `w` (D x C) and `b` (C).
pub fn loss_and_grad(
    w: &Array2<f64>,
    b: &Array1<f64>,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    weight_decay: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let logits = x.dot(w) + b;
    let p = softmax_rows(&logits);
    let ce: f64 = p
        .iter()
        .zip(y.iter())
        .map(|(&pi, &yi)| if yi > 0.0 { -yi * pi.max(1e-300).ln() } else { 0.0 })
        .sum::<f64>()
        / n;
    let loss = ce + 0.5 * weight_decay * w.iter().map(|v| v * v).sum::<f64>();
    let delta = (&p - &y) / n;
    let gw = x.t().dot(&delta) + w * weight_decay;
    let gb = delta.sum_axis(Axis(0));
    (loss, gw, gb)
}

/// Learning rate in effect during `epoch` (0-based).
pub fn lr_at(config: &ProbeConfig, epoch: usize) -> f64 {
    let passed = config.lr.milestones.iter().filter(|&&m| m <= epoch).count();
    config.lr.initial * config.lr.decay_factor.powi(passed as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// D x C
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub feature_mean: Array1<f64>,
    pub feature_scale: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean training loss (over the full set) at the end of each epoch.
    pub loss_curve: Vec<f64>,
    pub lr_sequence: Vec<f64>,
}

impl LinearProbe {
    pub fn standardize(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.feature_mean) / &self.feature_scale
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        softmax_rows(&(self.standardize(x).dot(&self.weights) + &self.bias))
    }

    /// Argmax class per row, first index on ties.
    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        self.predict_proba(x)
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Fit a probe on features `x` (N x D) and target distributions `y` (N x C).
pub fn train_probe(
    x: &Array2<f64>,
    y: &Array2<f64>,
    config: &ProbeConfig,
    seed: u64,
) -> Result<(LinearProbe, TrainTrace), TrainError> {
    config.validate()?;
    if x.nrows() == 0 {
        return Err(TrainError::EmptySplit("train"));
    }
    if x.nrows() != y.nrows() {
        return Err(TrainError::Shape(format!("{} feature rows vs {} target rows", x.nrows(), y.nrows())));
    }
    let classes_present = y
        .axis_iter(Axis(1))
        .filter(|col| col.iter().any(|&v| v > 0.0))
        .count();
    if y.ncols() < 2 || classes_present < 2 {
        return Err(TrainError::SingleClass);
    }

    let (d, c) = (x.ncols(), y.ncols());
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let scale = x
        .var_axis(Axis(0), 0.0)
        .mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
    let mut probe = LinearProbe {
        weights: Array2::zeros((d, c)),
        bias: Array1::zeros(c),
        feature_mean: mean,
        feature_scale: scale,
    };
    let xs = probe.standardize(x);
    let mut vw = Array2::<f64>::zeros((d, c));
    let mut vb = Array1::<f64>::zeros(c);
    let mut order: Vec<usize> = (0..xs.nrows()).collect();
    let mut rng = rng_from_seed(seed);
    let mut trace = TrainTrace {
        loss_curve: Vec::with_capacity(config.epochs),
        lr_sequence: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        trace.lr_sequence.push(lr);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = xs.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (_, gw, gb) = loss_and_grad(&probe.weights, &probe.bias, xb.view(), yb.view(), config.weight_decay);
            vw = &vw * config.momentum + &gw;
            vb = &vb * config.momentum + &gb;
            probe.weights.scaled_add(-lr, &vw);
            probe.bias.scaled_add(-lr, &vb);
        }
        let (loss, _, _) = loss_and_grad(&probe.weights, &probe.bias, xs.view(), y.view(), config.weight_decay);
        trace.loss_curve.push(loss);
    }
    Ok((probe, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::LrSchedule;
    use ndarray::array;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = random_matrix(5, 4, 1);
        let w = random_matrix(4, 3, 2);
        let b = array![0.1, -0.2, 0.05];
        let y = array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.3, 0.7, 0.0],
            [0.0, 0.5, 0.5]
        ];
        let wd = 5e-4;
        let (_, gw, gb) = loss_and_grad(&w, &b, x.view(), y.view(), wd);
        let h = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for i in 0..4 {
            for j in 0..3 {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[[i, j]] += h;
                wm[[i, j]] -= h;
                let num = (loss_and_grad(&wp, &b, x.view(), y.view(), wd).0
                    - loss_and_grad(&wm, &b, x.view(), y.view(), wd).0)
                    / (2.0 * h);
                assert!(rel(gw[[i, j]], num) < 1e-4, "w[{i},{j}] {} vs {num}", gw[[i, j]]);
            }
        }
        for j in 0..3 {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[j] += h;
            bm[j] -= h;
            let num = (loss_and_grad(&w, &bp, x.view(), y.view(), wd).0
                - loss_and_grad(&w, &bm, x.view(), y.view(), wd).0)
                / (2.0 * h);
            assert!(rel(gb[j], num) < 1e-4);
        }
    }

    #[test]
    fn lr_schedule_steps_at_milestones() {
        let cfg = ProbeConfig {
            epochs: 4,
            lr: LrSchedule {
                initial: 0.1,
                decay_factor: 0.1,
                milestones: vec![2, 3],
            },
            ..Default::default()
        };
        let seq: Vec<f64> = (0..4).map(|e| lr_at(&cfg, e)).collect();
        let expected = [0.1, 0.1, 0.01, 0.001];
        for (a, b) in seq.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{seq:?}");
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let l = array![[1000.0, 1001.0], [0.0, 0.0]];
        let p = softmax_rows(&l);
        assert!((p[[0, 1]] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(p[[1, 0]], 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let x = random_matrix(4, 2, 3);
        let y = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        assert!(matches!(train_probe(&x, &y, &ProbeConfig::default(), 0), Err(TrainError::SingleClass)));
    }
}
