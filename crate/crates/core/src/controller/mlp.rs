use rand::Rng;

use super::math::{matvec_acc, matvec_t_acc, outer_acc};

/// Two dense layers with a ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MlpStep {
    x: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    pub fn glorot<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input, hidden, output);
        let a = (6.0 / (input + hidden) as f64).sqrt();
        m.w1.iter_mut().for_each(|v| *v = rng.gen_range(-a..=a));
        let a = (6.0 / (hidden + output) as f64).sqrt();
        m.w2.iter_mut().for_each(|v| *v = rng.gen_range(-a..=a));
        m
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpStep) {
        let mut pre = self.b1.clone();
        matvec_acc(&self.w1, self.input, x, &mut pre);
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mut out = self.b2.clone();
        matvec_acc(&self.w2, self.hidden, &act, &mut out);
        (out, MlpStep { x: x.to_vec(), pre, act })
    }

    /// Accumulates weight gradients into `grad`; returns `∂L/∂x`.
    pub fn backward(&self, s: &MlpStep, g_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        for (b, g) in grad.b2.iter_mut().zip(g_out) {
            *b += g;
        }
        outer_acc(&mut grad.w2, g_out, &s.act);
        let mut g_act = vec![0.0; self.hidden];
        matvec_t_acc(&self.w2, self.hidden, g_out, &mut g_act);
        let g_pre: Vec<f64> = g_act.iter().zip(&s.pre).map(|(g, p)| if *p > 0.0 { *g } else { 0.0 }).collect();
        for (b, g) in grad.b1.iter_mut().zip(&g_pre) {
            *b += g;
        }
        outer_acc(&mut grad.w1, &g_pre, &s.x);
        let mut g_x = vec![0.0; self.input];
        matvec_t_acc(&self.w1, self.input, &g_pre, &mut g_x);
        g_x
    }
}
