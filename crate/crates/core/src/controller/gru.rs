//! GRU cell with gate order (reset, update, candidate).
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + W_hn (r ⊙ h) + b_hn)
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use rand::Rng;

use super::math::{matvec_acc, matvec_t_acc, outer_acc, sigmoid};

#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights {
    pub input: usize,
    pub hidden: usize,
    /// `3H × input`, row-major, gate blocks stacked r, z, n.
    pub w_ih: Vec<f64>,
    /// `3H × H`.
    pub w_hh: Vec<f64>,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

impl GruWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w_ih: vec![0.0; 3 * hidden * input],
            w_hh: vec![0.0; 3 * hidden * hidden],
            b_ih: vec![0.0; 3 * hidden],
            b_hh: vec![0.0; 3 * hidden],
        }
    }

    pub fn glorot<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(input, hidden);
        let a = (6.0 / (input + 3 * hidden) as f64).sqrt();
        w.w_ih.iter_mut().for_each(|v| *v = rng.gen_range(-a..=a));
        let a = (6.0 / (hidden + 3 * hidden) as f64).sqrt();
        w.w_hh.iter_mut().for_each(|v| *v = rng.gen_range(-a..=a));
        w
    }

    pub fn param_count(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.b_ih.len() + self.b_hh.len()
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }

    /// One step; returns the new hidden state and the values needed to
    /// differentiate it.
    pub fn step(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, GruStep) {
        let hd = self.hidden;
        let mut gi = self.b_ih.clone();
        matvec_acc(&self.w_ih, self.input, x, &mut gi);
        let mut gh = self.b_hh.clone();
        // Only the r and z rows of W_hh act on h directly.
        matvec_acc(&self.w_hh[..2 * hd * hd], hd, h, &mut gh[..2 * hd]);
        let r: Vec<f64> = (0..hd).map(|k| sigmoid(gi[k] + gh[k])).collect();
        let z: Vec<f64> = (0..hd).map(|k| sigmoid(gi[hd + k] + gh[hd + k])).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let mut an = gi[2 * hd..].to_vec();
        for (a, b) in an.iter_mut().zip(&self.b_hh[2 * hd..]) {
            *a += b;
        }
        matvec_acc(&self.w_hh[2 * hd * hd..], hd, &rh, &mut an);
        let n: Vec<f64> = an.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..hd).map(|k| (1.0 - z[k]) * n[k] + z[k] * h[k]).collect();
        (h_new, GruStep { x: x.to_vec(), h: h.to_vec(), r, z, n, rh })
    }

    /// Reverse of [`GruWeights::step`]. Accumulates weight gradients into
    /// `grad` and returns `(∂L/∂x, ∂L/∂h_prev)`.
    pub fn step_backward(&self, s: &GruStep, g_out: &[f64], grad: &mut GruWeights) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut g_h: Vec<f64> = (0..hd).map(|k| g_out[k] * s.z[k]).collect();
        let mut ga = vec![0.0; 3 * hd];
        for k in 0..hd {
            let gn = g_out[k] * (1.0 - s.z[k]);
            let gz = g_out[k] * (s.h[k] - s.n[k]);
            ga[hd + k] = gz * s.z[k] * (1.0 - s.z[k]);
            ga[2 * hd + k] = gn * (1.0 - s.n[k] * s.n[k]);
        }
        let (ga_rz, ga_n) = ga.split_at_mut(2 * hd);
        // Candidate path through r ⊙ h.
        let mut g_rh = vec![0.0; hd];
        matvec_t_acc(&self.w_hh[2 * hd * hd..], hd, ga_n, &mut g_rh);
        outer_acc(&mut grad.w_hh[2 * hd * hd..], ga_n, &s.rh);
        for k in 0..hd {
            ga_rz[k] = g_rh[k] * s.h[k] * s.r[k] * (1.0 - s.r[k]);
            g_h[k] += g_rh[k] * s.r[k];
        }
        outer_acc(&mut grad.w_hh[..2 * hd * hd], ga_rz, &s.h);
        matvec_t_acc(&self.w_hh[..2 * hd * hd], hd, ga_rz, &mut g_h);
        for (k, &g) in ga.iter().enumerate() {
            grad.b_ih[k] += g;
            grad.b_hh[k] += g;
        }
        outer_acc(&mut grad.w_ih, &ga, &s.x);
        let mut g_x = vec![0.0; self.input];
        matvec_t_acc(&self.w_ih, self.input, &ga, &mut g_x);
        (g_x, g_h)
    }
}

/// Saved activations of one GRU step.
#[derive(Clone, Debug)]
pub struct GruStep {
    x: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn loss(w: &GruWeights, xs: &[Vec<f64>], proj: &[f64]) -> f64 {
        let mut h = vec![0.0; w.hidden];
        let mut total = 0.0;
        for x in xs {
            h = w.step(x, &h).0;
            total += h.iter().zip(proj).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }

    #[test]
    fn sequence_gradients_match_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut w = GruWeights::glorot(2, 3, &mut rng);
        w.b_ih.iter_mut().chain(w.b_hh.iter_mut()).for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let xs: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let proj: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut grad = GruWeights::zeros(2, 3);
        let mut h = vec![0.0; 3];
        let mut steps = Vec::new();
        for x in &xs {
            let (hn, s) = w.step(x, &h);
            steps.push(s);
            h = hn;
        }
        let mut g_h = vec![0.0; 3];
        for s in steps.iter().rev() {
            let g_out: Vec<f64> = g_h.iter().zip(&proj).map(|(a, b)| a + b).collect();
            g_h = w.step_backward(s, &g_out, &mut grad).1;
        }

        let h_step = 1e-6;
        for b in 0..4 {
            for k in 0..w.blocks()[b].len() {
                let mut wp = w.clone();
                wp.blocks_mut()[b][k] += h_step;
                let mut wm = w.clone();
                wm.blocks_mut()[b][k] -= h_step;
                let num = (loss(&wp, &xs, &proj) - loss(&wm, &xs, &proj)) / (2.0 * h_step);
                let ana = grad.blocks()[b][k];
                assert!((num - ana).abs() <= 1e-6 * num.abs().max(ana.abs()).max(1e-3), "block {b} idx {k}: {num} vs {ana}");
            }
        }
    }
}
