use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::controller::{Mlp, MlpStep};
use crate::error::{Error, Result};

/// Variance floor inside the pooled standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Toy classifier: per-channel mean and standard deviation over frames,
/// one ReLU hidden layer, linear logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyBackend {
    pub channels: usize,
    pub classes: usize,
    pub mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct BackendTape {
    x: Array2<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    step: MlpStep,
}

impl ToyBackend {
    pub const HIDDEN: usize = 64;

    pub fn zeros(channels: usize, classes: usize, hidden: usize) -> Self {
        Self { channels, classes, mlp: Mlp::zeros(2 * channels, hidden, classes) }
    }

    pub fn init<R: Rng>(channels: usize, classes: usize, hidden: usize, rng: &mut R) -> Self {
        Self { channels, classes, mlp: Mlp::glorot(2 * channels, hidden, classes, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.classes, self.mlp.hidden)
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        self.mlp.blocks()
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        self.mlp.blocks_mut()
    }

    /// Mean and standard deviation per channel, concatenated.
    pub fn pooled(x: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
        let t = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.sum_axis(Axis(0)).iter().map(|s| s / t).collect();
        let std = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(col, m)| (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t + STD_FLOOR).sqrt())
            .collect();
        (mean, std)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Vec<f64>, BackendTape)> {
        if x.ncols() != self.channels {
            return Err(Error::ShapeMismatch { expected: (x.nrows(), self.channels), got: x.dim() });
        }
        let (mean, std) = Self::pooled(x);
        let feats: Vec<f64> = mean.iter().chain(&std).copied().collect();
        let (logits, step) = self.mlp.forward(&feats);
        Ok((logits, BackendTape { x: x.to_owned(), mean, std, step }))
    }

    /// Accumulates weight gradients into `grad`; returns `∂L/∂X`.
    pub fn backward(&self, tape: &BackendTape, g_logits: &[f64], grad: &mut ToyBackend) -> Array2<f64> {
        let g_feat = self.mlp.backward(&tape.step, g_logits, &mut grad.mlp);
        let n = self.channels;
        let t = tape.x.nrows().max(1) as f64;
        let mut g_x = Array2::zeros(tape.x.dim());
        for ((r, i), g) in g_x.indexed_iter_mut() {
            let centered = tape.x[[r, i]] - tape.mean[i];
            *g = g_feat[i] / t + g_feat[n + i] * centered / (t * tape.std[i]);
        }
        g_x
    }
}

/// Softmax probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / sum).collect()
}

/// Negative log softmax probability of `label` and its logit gradient.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    let mut g = p;
    g[label] -= 1.0;
    (loss, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_classes() {
        let (l, g) = cross_entropy(&[0.0; 8], 3);
        assert!((l - 8f64.ln()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        let (l, _) = cross_entropy(&[0.0, 800.0, 0.0], 1);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn softmax_is_a_simplex() {
        let p = softmax(&[1.0, -2.0, 3.5, 1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pooled_statistics() {
        let x = array![[1.0, 0.0], [3.0, 0.0]];
        let (m, s) = ToyBackend::pooled(x.view());
        assert_eq!(m, vec![2.0, 0.0]);
        assert!((s[0] - (1.0 + STD_FLOOR).sqrt()).abs() < 1e-15);
        assert!((s[1] - STD_FLOOR.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn input_gradient_matches_differences() {
        let mut r = crate::rng::stream(1, "test");
        let b = ToyBackend::init(3, 4, 5, &mut r);
        let x = Array2::from_shape_fn((6, 3), |_| r.gen_range(0.0..2.0));
        let w: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let f = |x: &Array2<f64>| b.forward(x.view()).unwrap().0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (_, tape) = b.forward(x.view()).unwrap();
        let mut grad = b.zeros_like();
        let g = b.backward(&tape, &w, &mut grad);
        for idx in [(0, 0), (3, 1), (5, 2)] {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[idx]);
        }
    }
}
