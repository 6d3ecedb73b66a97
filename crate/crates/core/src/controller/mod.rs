//! Neural adaptive controller: predicts per-frame normalization exponents
//! from the current energies and the previously emitted feature frame.

mod apcen;
mod gru;
mod math;
mod mlp;

use std::path::Path;

use crate::error::{Error, Result};
use crate::norm::{DEFAULT_EPS, S0};
use crate::rng;

pub use apcen::{apcen_backward, apcen_forward_tape, apcen_process, gain_map, ApcenStream, ApcenTape, ParamTrajectory};
pub use gru::{GruStep, GruWeights};
pub use math::sigmoid;
pub use mlp::{Mlp, MlpStep};

/// Axis the recurrent layer runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SequenceAxis {
    /// Bidirectional pass across the channels of each frame; hidden state
    /// restarts at zero every frame.
    Channel,
    /// Unidirectional pass over frames with the hidden state carried forward.
    Time,
}

/// Whether the controller emits one exponent pair per channel or per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMode {
    PerChannel,
    PerFrame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub channels: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub gamma_min: f64,
    pub gamma_range: f64,
    pub axis: SequenceAxis,
    pub output: OutputMode,
    /// Fixed smoothing coefficient of the normalization stage.
    pub smoothing: f64,
    pub eps: f64,
}

impl ControllerConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            hidden: 32,
            mlp_hidden: 32,
            gamma_min: 0.2,
            gamma_range: 0.8,
            axis: SequenceAxis::Channel,
            output: OutputMode::PerChannel,
            smoothing: S0,
            eps: DEFAULT_EPS,
        }
    }

    pub fn with_sizes(mut self, hidden: usize, mlp_hidden: usize) -> Self {
        self.hidden = hidden;
        self.mlp_hidden = mlp_hidden;
        self
    }

    pub fn input_dim(&self) -> usize {
        match self.axis {
            SequenceAxis::Channel => 2,
            SequenceAxis::Time => 2 * self.channels,
        }
    }

    fn mlp_input(&self) -> usize {
        match self.axis {
            SequenceAxis::Channel => 2 * self.hidden,
            SequenceAxis::Time => self.hidden,
        }
    }

    fn mlp_output(&self) -> usize {
        match (self.axis, self.output) {
            (SequenceAxis::Time, OutputMode::PerChannel) => 2 * self.channels,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.channels == 0 || self.hidden == 0 || self.mlp_hidden == 0 {
            return bad("channels, hidden and mlp_hidden must be at least 1".into());
        }
        if !(self.gamma_min > 0.0 && self.gamma_range > 0.0 && self.gamma_min + self.gamma_range <= 1.0) {
            return bad(format!(
                "need gamma_min > 0 and gamma_min + gamma_range <= 1, got {} + {}",
                self.gamma_min, self.gamma_range
            ));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return bad(format!("smoothing {} outside (0, 1]", self.smoothing));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad("eps must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerWeights {
    pub config: ControllerConfig,
    pub forward: GruWeights,
    /// Present only for the channel-axis (bidirectional) layout.
    pub backward: Option<GruWeights>,
    pub mlp: Mlp,
}

impl ControllerWeights {
    /// All-zero weights; the controller then emits `α̂ = 0.5`, `γ̂ = γ̂_min + Δγ̂/2`.
    pub fn zeros(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        let (i, h) = (config.input_dim(), config.hidden);
        let backward = (config.axis == SequenceAxis::Channel).then(|| GruWeights::zeros(i, h));
        Ok(Self {
            forward: GruWeights::zeros(i, h),
            backward,
            mlp: Mlp::zeros(config.mlp_input(), config.mlp_hidden, config.mlp_output()),
            config,
        })
    }

    /// Uniform `±√(6/(fan_in + fan_out))` per matrix, zero biases.
    pub fn init(config: ControllerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "controller.init");
        let (i, h) = (config.input_dim(), config.hidden);
        let forward = GruWeights::glorot(i, h, &mut r);
        let backward = (config.axis == SequenceAxis::Channel).then(|| GruWeights::glorot(i, h, &mut r));
        let mlp = Mlp::glorot(config.mlp_input(), config.mlp_hidden, config.mlp_output(), &mut r);
        Ok(Self { config, forward, backward, mlp })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone()).expect("config already validated")
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Parameter blocks in checkpoint order: forward GRU, backward GRU, MLP.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.forward.blocks().to_vec();
        if let Some(b) = &self.backward {
            out.extend(b.blocks());
        }
        out.extend(self.mlp.blocks());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.forward.blocks_mut().into_iter().collect();
        if let Some(b) = &mut self.backward {
            out.extend(b.blocks_mut());
        }
        out.extend(self.mlp.blocks_mut());
        out
    }

    /// Names matching [`Self::blocks`].
    pub fn block_names(&self) -> Vec<String> {
        let gru = ["w_ih", "w_hh", "b_ih", "b_hh"];
        let mut out: Vec<String> = gru.iter().map(|n| format!("gru_fwd.{n}")).collect();
        if self.backward.is_some() {
            out.extend(gru.iter().map(|n| format!("gru_bwd.{n}")));
        }
        out.extend(["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"].map(String::from));
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `α̂` is kept strictly inside (0, 1) where the f64 sigmoid would round
    /// to an endpoint.
    fn squash(&self, o_alpha: f64, o_gamma: f64) -> (f64, f64, f64) {
        let sg = sigmoid(o_gamma);
        let alpha = sigmoid(o_alpha).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
        (alpha, self.config.gamma_min + self.config.gamma_range * sg, sg)
    }

    /// One frame of the controller. `hidden` is the carried state for the
    /// time-axis layout (ignored, may be empty, for the channel axis).
    pub fn frame_forward(&self, e_t: &[f64], x_prev: &[f64], hidden: &[f64]) -> Result<FrameOutput> {
        let n = self.config.channels;
        for len in [e_t.len(), x_prev.len()] {
            if len != n {
                return Err(Error::ShapeMismatch { expected: (1, n), got: (1, len) });
            }
        }
        let mut alpha = vec![0.0; n];
        let mut gamma = vec![0.0; n];
        let mut sig_gamma = vec![0.0; n];
        let mut tape = FrameTape::default();
        let mut hidden_out = Vec::new();
        match self.config.axis {
            SequenceAxis::Channel => {
                let h = self.config.hidden;
                let bwd = self.backward.as_ref().expect("channel axis has a backward GRU");
                let inputs: Vec<[f64; 2]> = (0..n).map(|i| [e_t[i], x_prev[i]]).collect();
                let mut states = vec![vec![0.0; 2 * h]; n];
                let mut carry = vec![0.0; h];
                for i in 0..n {
                    let (hn, st) = self.forward.step(&inputs[i], &carry);
                    states[i][..h].copy_from_slice(&hn);
                    tape.fwd.push(st);
                    carry = hn;
                }
                let mut carry = vec![0.0; h];
                let mut bsteps = Vec::with_capacity(n);
                for i in (0..n).rev() {
                    let (hn, st) = bwd.step(&inputs[i], &carry);
                    states[i][h..].copy_from_slice(&hn);
                    bsteps.push(st);
                    carry = hn;
                }
                bsteps.reverse();
                tape.bwd = bsteps;
                match self.config.output {
                    OutputMode::PerChannel => {
                        for i in 0..n {
                            let (o, ms) = self.mlp.forward(&states[i]);
                            (alpha[i], gamma[i], sig_gamma[i]) = self.squash(o[0], o[1]);
                            tape.mlp.push(ms);
                        }
                    }
                    OutputMode::PerFrame => {
                        let mut pooled = vec![0.0; 2 * h];
                        for s in &states {
                            pooled.iter_mut().zip(s).for_each(|(p, v)| *p += v / n as f64);
                        }
                        let (o, ms) = self.mlp.forward(&pooled);
                        let (a, g, sg) = self.squash(o[0], o[1]);
                        alpha.fill(a);
                        gamma.fill(g);
                        sig_gamma.fill(sg);
                        tape.mlp.push(ms);
                    }
                }
            }
            SequenceAxis::Time => {
                if hidden.len() != self.config.hidden {
                    return Err(Error::ShapeMismatch { expected: (1, self.config.hidden), got: (1, hidden.len()) });
                }
                let x: Vec<f64> = e_t.iter().chain(x_prev).copied().collect();
                let (hn, st) = self.forward.step(&x, hidden);
                tape.fwd.push(st);
                let (o, ms) = self.mlp.forward(&hn);
                tape.mlp.push(ms);
                for i in 0..n {
                    let (oa, og) = match self.config.output {
                        OutputMode::PerChannel => (o[i], o[n + i]),
                        OutputMode::PerFrame => (o[0], o[1]),
                    };
                    (alpha[i], gamma[i], sig_gamma[i]) = self.squash(oa, og);
                }
                hidden_out = hn;
            }
        }
        tape.alpha = alpha.clone();
        tape.sig_gamma = sig_gamma;
        Ok(FrameOutput { alpha, gamma, hidden: hidden_out, tape })
    }

    /// Reverse of [`ControllerWeights::frame_forward`]. Accumulates into
    /// `grad` and returns gradients for `(e_t, x_prev, hidden)`.
    pub fn frame_backward(
        &self,
        tape: &FrameTape,
        g_alpha: &[f64],
        g_gamma: &[f64],
        g_hidden: &[f64],
        grad: &mut ControllerWeights,
    ) -> FrameGrads {
        let n = self.config.channels;
        let range = self.config.gamma_range;
        let go = |i: usize| {
            let a = tape.alpha[i];
            let sg = tape.sig_gamma[i];
            (g_alpha[i] * a * (1.0 - a), g_gamma[i] * range * sg * (1.0 - sg))
        };
        let mut g_e = vec![0.0; n];
        let mut g_x = vec![0.0; n];
        let mut g_h_prev = Vec::new();
        match self.config.axis {
            SequenceAxis::Channel => {
                let h = self.config.hidden;
                let bwd = self.backward.as_ref().expect("channel axis has a backward GRU");
                let g_states: Vec<Vec<f64>> = match self.config.output {
                    OutputMode::PerChannel => (0..n)
                        .map(|i| {
                            let (a, g) = go(i);
                            self.mlp.backward(&tape.mlp[i], &[a, g], &mut grad.mlp)
                        })
                        .collect(),
                    OutputMode::PerFrame => {
                        let (a, g) = (0..n).map(go).fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
                        let g_pooled = self.mlp.backward(&tape.mlp[0], &[a, g], &mut grad.mlp);
                        let share: Vec<f64> = g_pooled.iter().map(|v| v / n as f64).collect();
                        vec![share; n]
                    }
                };
                let mut carry = vec![0.0; h];
                for i in (0..n).rev() {
                    let g_out: Vec<f64> = g_states[i][..h].iter().zip(&carry).map(|(a, b)| a + b).collect();
                    let (gx, gh) = self.forward.step_backward(&tape.fwd[i], &g_out, &mut grad.forward);
                    g_e[i] += gx[0];
                    g_x[i] += gx[1];
                    carry = gh;
                }
                let gb = grad.backward.as_mut().expect("gradient layout matches weights");
                let mut carry = vec![0.0; h];
                for i in 0..n {
                    let g_out: Vec<f64> = g_states[i][h..].iter().zip(&carry).map(|(a, b)| a + b).collect();
                    let (gx, gh) = bwd.step_backward(&tape.bwd[i], &g_out, gb);
                    g_e[i] += gx[0];
                    g_x[i] += gx[1];
                    carry = gh;
                }
            }
            SequenceAxis::Time => {
                let mut g_o = vec![0.0; self.config.mlp_output()];
                for i in 0..n {
                    let (a, g) = go(i);
                    match self.config.output {
                        OutputMode::PerChannel => {
                            g_o[i] += a;
                            g_o[n + i] += g;
                        }
                        OutputMode::PerFrame => {
                            g_o[0] += a;
                            g_o[1] += g;
                        }
                    }
                }
                let mut g_h = self.mlp.backward(&tape.mlp[0], &g_o, &mut grad.mlp);
                if !g_hidden.is_empty() {
                    g_h.iter_mut().zip(g_hidden).for_each(|(a, b)| *a += b);
                }
                let (gx, gh) = self.forward.step_backward(&tape.fwd[0], &g_h, &mut grad.forward);
                g_e.copy_from_slice(&gx[..n]);
                g_x.copy_from_slice(&gx[n..]);
                g_h_prev = gh;
            }
        }
        FrameGrads { e: g_e, x_prev: g_x, hidden: g_h_prev }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(CONTROLLER_HEADER_LEN + 8 * self.param_count());
        out.extend_from_slice(&CONTROLLER_MAGIC);
        out.extend_from_slice(&CONTROLLER_VERSION.to_le_bytes());
        out.push(match c.axis {
            SequenceAxis::Channel => 0,
            SequenceAxis::Time => 1,
        });
        out.push(match c.output {
            OutputMode::PerChannel => 0,
            OutputMode::PerFrame => 1,
        });
        for v in [c.hidden, c.mlp_hidden, c.input_dim(), c.channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in [c.gamma_min, c.gamma_range, c.smoothing, c.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for b in self.blocks() {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < CONTROLLER_HEADER_LEN {
            return Err(corrupt("controller record shorter than its header"));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != CONTROLLER_MAGIC {
            return Err(Error::BadMagic { expected: CONTROLLER_MAGIC, found: magic });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CONTROLLER_VERSION {
            return Err(Error::UnsupportedFormat(format!("controller checkpoint version {version}")));
        }
        let axis = match bytes[6] {
            0 => SequenceAxis::Channel,
            1 => SequenceAxis::Time,
            _ => return Err(corrupt("unknown sequence axis flag")),
        };
        let output = match bytes[7] {
            0 => OutputMode::PerChannel,
            1 => OutputMode::PerFrame,
            _ => return Err(corrupt("unknown output mode flag")),
        };
        let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let config = ControllerConfig {
            hidden: u(8),
            mlp_hidden: u(12),
            channels: u(20),
            gamma_min: f(24),
            gamma_range: f(32),
            smoothing: f(40),
            eps: f(48),
            axis,
            output,
        };
        if config.input_dim() != u(16) {
            return Err(corrupt("input_dim disagrees with layout"));
        }
        let mut w = Self::zeros(config)?;
        let count = u64::from_le_bytes(bytes[56..64].try_into().unwrap()) as usize;
        if count != w.param_count() || bytes.len() != CONTROLLER_HEADER_LEN + 8 * count {
            return Err(corrupt("parameter count disagrees with header"));
        }
        let mut vals = bytes[CONTROLLER_HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for b in w.blocks_mut() {
            for v in b.iter_mut() {
                *v = vals.next().unwrap();
            }
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub const CONTROLLER_MAGIC: [u8; 4] = *b"APCC";
pub const CONTROLLER_VERSION: u16 = 1;
pub const CONTROLLER_HEADER_LEN: usize = 64;

#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Next carried state (time axis only).
    pub hidden: Vec<f64>,
    pub tape: FrameTape,
}

#[derive(Clone, Debug, Default)]
pub struct FrameTape {
    fwd: Vec<GruStep>,
    bwd: Vec<GruStep>,
    mlp: Vec<MlpStep>,
    alpha: Vec<f64>,
    sig_gamma: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FrameGrads {
    pub e: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Per-stream controller buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    /// Previously emitted feature frame `X[t−1]`.
    pub prev_output: Vec<f64>,
    /// Previous smoothed energy `M[t−1]`; `None` before the first frame.
    pub prev_smoothed: Option<Vec<f64>>,
    /// Carried recurrent state (time axis only).
    pub hidden: Vec<f64>,
}

impl ControllerState {
    pub fn new(config: &ControllerConfig) -> Self {
        let hidden = match config.axis {
            SequenceAxis::Channel => Vec::new(),
            SequenceAxis::Time => vec![0.0; config.hidden],
        };
        Self { prev_output: vec![0.0; config.channels], prev_smoothed: None, hidden }
    }
}

/// Predicted `(α̂_t, γ̂_t)` for one frame given the stream state.
pub fn controller_frame(e_t: &[f64], state: &ControllerState, w: &ControllerWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = w.frame_forward(e_t, &state.prev_output, &state.hidden)?;
    Ok((out.alpha, out.gamma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_for_default_sizes() {
        let w = ControllerWeights::init(ControllerConfig::new(40), 0).unwrap();
        assert_eq!(w.forward.param_count() + w.backward.as_ref().unwrap().param_count(), 6912);
        assert_eq!(w.mlp.param_count(), 2080 + 66);
        assert_eq!(w.param_count(), 9058);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ControllerWeights::init(ControllerConfig::new(8), 3).unwrap();
        let b = ControllerWeights::init(ControllerConfig::new(8), 3).unwrap();
        let c = ControllerWeights::init(ControllerConfig::new(8), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.backward.as_ref().unwrap().b_ih.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_bounds_follow_fan_sizes() {
        let w = ControllerWeights::init(ControllerConfig::new(8), 1).unwrap();
        let bound = (6.0f64 / (2 + 96) as f64).sqrt();
        assert!(w.forward.w_ih.iter().all(|v| v.abs() <= bound));
        let bound = (6.0f64 / (64 + 32) as f64).sqrt();
        assert!(w.mlp.w1.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_weights_emit_midpoint_exponents() {
        for axis in [SequenceAxis::Channel, SequenceAxis::Time] {
            for output in [OutputMode::PerChannel, OutputMode::PerFrame] {
                let cfg = ControllerConfig { axis, output, ..ControllerConfig::new(5) };
                let w = ControllerWeights::zeros(cfg.clone()).unwrap();
                let state = ControllerState::new(&cfg);
                let (a, g) = controller_frame(&[0.3, 1.0, 2.0, 0.0, 5.0], &state, &w).unwrap();
                assert!(a.iter().all(|&v| v == 0.5));
                assert!(g.iter().all(|&v| (v - 0.6).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn channel_order_matters() {
        let cfg = ControllerConfig::new(6).with_sizes(4, 4);
        let w = ControllerWeights::init(cfg.clone(), 9).unwrap();
        let e = [0.1, 0.5, 2.0, 0.01, 0.3, 1.2];
        let rev: Vec<f64> = e.iter().rev().copied().collect();
        let state = ControllerState::new(&cfg);
        let (a, _) = controller_frame(&e, &state, &w).unwrap();
        let (b, _) = controller_frame(&rev, &state, &w).unwrap();
        let b_back: Vec<f64> = b.iter().rev().copied().collect();
        assert_ne!(a, b_back);
    }

    #[test]
    fn wrong_width_is_shape_mismatch() {
        let cfg = ControllerConfig::new(4);
        let w = ControllerWeights::zeros(cfg.clone()).unwrap();
        let state = ControllerState::new(&cfg);
        assert!(matches!(controller_frame(&[1.0; 3], &state, &w), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn invalid_gamma_box_rejected() {
        let cfg = ControllerConfig { gamma_min: 0.5, gamma_range: 0.8, ..ControllerConfig::new(4) };
        assert!(ControllerWeights::zeros(cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        for axis in [SequenceAxis::Channel, SequenceAxis::Time] {
            let cfg = ControllerConfig { axis, output: OutputMode::PerFrame, ..ControllerConfig::new(7) };
            let w = ControllerWeights::init(cfg, 21).unwrap();
            let bytes = w.to_bytes();
            let back = ControllerWeights::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back, w);
        }
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let w = ControllerWeights::init(ControllerConfig::new(3).with_sizes(2, 2), 0).unwrap();
        let mut bytes = w.to_bytes();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(ControllerWeights::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }
}
