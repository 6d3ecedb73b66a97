use ndarray::{Array2, ArrayView2};

use super::{ControllerState, ControllerWeights, FrameTape};
use crate::error::{Error, Result};
use crate::norm::{check_energy, check_shape, FeatureMap, LOG_FLOOR};

/// Predicted exponents, frames × channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTrajectory {
    pub alpha: Array2<f64>,
    pub gamma: Array2<f64>,
}

/// Streaming adaptive normalization for one input stream.
///
/// Frame `t` sees only `E[0..=t]`: the controller reads `E[t]` and the
/// previously emitted frame, and the smoother carries `M[t−1]`.
#[derive(Clone, Debug)]
pub struct ApcenStream<'w> {
    weights: &'w ControllerWeights,
    state: ControllerState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub features: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl<'w> ApcenStream<'w> {
    pub fn new(weights: &'w ControllerWeights) -> Self {
        Self { weights, state: ControllerState::new(&weights.config) }
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn push(&mut self, e_t: &[f64]) -> Result<FrameResult> {
        self.push_taped(e_t).map(|(r, _)| r)
    }

    fn push_taped(&mut self, e_t: &[f64]) -> Result<(FrameResult, FrameTape)> {
        if e_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        if e_t.iter().any(|&v| v < 0.0) {
            return Err(Error::NegativeEnergy);
        }
        let cfg = &self.weights.config;
        let out = self.weights.frame_forward(e_t, &self.state.prev_output, &self.state.hidden)?;
        let s = cfg.smoothing;
        let prev = self.state.prev_smoothed.take().unwrap_or_else(|| e_t.to_vec());
        let smoothed: Vec<f64> = e_t.iter().zip(&prev).map(|(e, m)| s * e + (1.0 - s) * m).collect();
        let features: Vec<f64> = (0..e_t.len())
            .map(|i| {
                if e_t[i] > 0.0 {
                    e_t[i].powf(out.gamma[i]) / (smoothed[i] + cfg.eps).powf(out.alpha[i])
                } else {
                    0.0
                }
            })
            .collect();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        self.state.prev_output.clone_from(&features);
        self.state.prev_smoothed = Some(smoothed.clone());
        self.state.hidden = out.hidden;
        Ok((FrameResult { features, alpha: out.alpha, gamma: out.gamma, smoothed }, out.tape))
    }
}

/// Forward values kept for [`apcen_backward`].
#[derive(Clone, Debug)]
pub struct ApcenTape {
    pub e: Array2<f64>,
    pub m: Array2<f64>,
    pub x: Array2<f64>,
    frames: Vec<FrameTape>,
}

pub fn apcen_process(e: ArrayView2<f64>, w: &ControllerWeights) -> Result<(FeatureMap, ParamTrajectory)> {
    apcen_forward_tape(e, w).map(|(x, traj, _)| (x, traj))
}

pub fn apcen_forward_tape(
    e: ArrayView2<f64>,
    w: &ControllerWeights,
) -> Result<(FeatureMap, ParamTrajectory, ApcenTape)> {
    check_energy(e)?;
    let (frames, channels) = e.dim();
    if channels != w.config.channels {
        return Err(Error::ShapeMismatch { expected: (frames, w.config.channels), got: (frames, channels) });
    }
    let mut x = Array2::zeros((frames, channels));
    let mut m = Array2::zeros((frames, channels));
    let mut alpha = Array2::zeros((frames, channels));
    let mut gamma = Array2::zeros((frames, channels));
    let mut tapes = Vec::with_capacity(frames);
    let mut stream = ApcenStream::new(w);
    for (t, row) in e.rows().into_iter().enumerate() {
        let (r, tape) = stream.push_taped(&row.to_vec())?;
        for i in 0..channels {
            x[[t, i]] = r.features[i];
            m[[t, i]] = r.smoothed[i];
            alpha[[t, i]] = r.alpha[i];
            gamma[[t, i]] = r.gamma[i];
        }
        tapes.push(tape);
    }
    let tape = ApcenTape { e: e.to_owned(), m, x: x.clone(), frames: tapes };
    Ok((x, ParamTrajectory { alpha, gamma }, tape))
}

/// Backpropagation through time to the controller weights.
///
/// `window` truncates the cross-frame gradient (through the fed-back output
/// frame and, on the time axis, the carried hidden state) at frame indices
/// that are multiples of `window`; `None` keeps the full tape.
pub fn apcen_backward(
    tape: &ApcenTape,
    w: &ControllerWeights,
    upstream: ArrayView2<f64>,
    window: Option<usize>,
) -> Result<ControllerWeights> {
    check_shape(tape.x.dim(), upstream.dim())?;
    if window == Some(0) {
        return Err(Error::ConfigInvalid("truncation window must be at least 1".into()));
    }
    let (frames, channels) = tape.x.dim();
    let eps = w.config.eps;
    let mut grad = w.zeros_like();
    let mut g_next = vec![0.0; channels];
    let mut g_hidden: Vec<f64> = Vec::new();
    let mut g_alpha = vec![0.0; channels];
    let mut g_gamma = vec![0.0; channels];
    for t in (0..frames).rev() {
        for i in 0..channels {
            let gx = upstream[[t, i]] + g_next[i];
            let y = tape.x[[t, i]];
            if y == 0.0 || gx == 0.0 {
                g_alpha[i] = 0.0;
                g_gamma[i] = 0.0;
                continue;
            }
            g_gamma[i] = gx * y * tape.e[[t, i]].max(LOG_FLOOR).ln();
            g_alpha[i] = -gx * y * (tape.m[[t, i]] + eps).ln();
        }
        let fg = w.frame_backward(&tape.frames[t], &g_alpha, &g_gamma, &g_hidden, &mut grad);
        let cut = window.is_some_and(|k| t % k == 0);
        if cut {
            g_next.fill(0.0);
            g_hidden.clear();
        } else {
            g_next = fg.x_prev;
            g_hidden = fg.hidden;
        }
    }
    Ok(grad)
}

/// Output-to-input ratio `X / max(E, 1e-12)`.
pub fn gain_map(e: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_shape(e.dim(), x.dim())?;
    let mut g = Array2::zeros(e.dim());
    ndarray::Zip::from(&mut g).and(e).and(x).for_each(|g, &e, &x| *g = x / e.max(LOG_FLOOR));
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ControllerConfig;
    use crate::norm::simp_pcen_elementwise;
    use ndarray::arr2;

    #[test]
    fn silence_gives_zero_features_inside_box() {
        let w = ControllerWeights::init(ControllerConfig::new(4).with_sizes(4, 4), 2).unwrap();
        let (x, traj) = apcen_process(Array2::zeros((6, 4)).view(), &w).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert!(traj.gamma.iter().all(|&g| (0.2..=1.0).contains(&g)));
        assert!(traj.alpha.iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn single_frame_matches_simplified_form() {
        let w = ControllerWeights::init(ControllerConfig::new(3).with_sizes(4, 4), 5).unwrap();
        let e = arr2(&[[0.2, 1.5, 0.7]]);
        let (x, traj) = apcen_process(e.view(), &w).unwrap();
        let direct =
            simp_pcen_elementwise(e.view(), e.view(), traj.alpha.view(), traj.gamma.view(), w.config.eps).unwrap();
        assert_eq!(x, direct);
    }

    #[test]
    fn gain_is_positive_where_energy_is() {
        let w = ControllerWeights::init(ControllerConfig::new(3).with_sizes(4, 4), 5).unwrap();
        let e = arr2(&[[0.2, 0.0, 0.7], [1e-9, 3.0, 0.1]]);
        let (x, _) = apcen_process(e.view(), &w).unwrap();
        let g = gain_map(e.view(), x.view()).unwrap();
        for (&gv, &ev) in g.iter().zip(e.iter()) {
            assert!(gv.is_finite());
            if ev > 0.0 {
                assert!(gv > 0.0);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let w = ControllerWeights::init(ControllerConfig::new(3).with_sizes(4, 4), 5).unwrap();
        let e = arr2(&[[0.2, 1.5, 0.7], [0.4, 0.1, 0.9]]);
        let (_, _, tape) = apcen_forward_tape(e.view(), &w).unwrap();
        let g = apcen_backward(&tape, &w, Array2::zeros((2, 3)).view(), None).unwrap();
        assert!(g.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }
}
