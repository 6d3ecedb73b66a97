use ndarray::{Array2, ArrayView2, Axis};

use super::{
    check_channels, check_energy, check_shape, ema_backward, ema_smooth, first_frame_init, FeatureMap,
    DEFAULT_EPS, LOG_FLOOR, S0, SIMP_ALPHA0, SIMP_GAMMA0,
};
use crate::error::{Error, Result};

/// Two-exponent normalization `E^γ̂ / (M + ε)^α̂` with fixed smoothing.
#[derive(Clone, Debug, PartialEq)]
pub struct SimpPcenParams {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Fixed smoothing coefficient, never trained.
    pub s: f64,
    pub eps: f64,
}

impl SimpPcenParams {
    pub fn init(channels: usize) -> Self {
        Self { alpha: vec![SIMP_ALPHA0; channels], gamma: vec![SIMP_GAMMA0; channels], s: S0, eps: DEFAULT_EPS }
    }

    pub fn channels(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        check_channels(channels, "alpha", self.alpha.len())?;
        check_channels(channels, "gamma", self.gamma.len())?;
        if self.alpha.iter().chain(&self.gamma).any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid("exponents must be finite".into()));
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return Err(Error::ConfigInvalid(format!("smoothing coefficient {} outside (0, 1]", self.s)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::ConfigInvalid("eps must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Keeps `α̂` in (0, 1) and `γ̂` in (0, 1].
    pub fn project(&mut self) {
        self.alpha.iter_mut().for_each(|v| *v = v.clamp(1e-4, 1.0 - 1e-4));
        self.gamma.iter_mut().for_each(|v| *v = v.clamp(1e-4, 1.0));
    }

    /// Broadcasts per-channel exponents over `frames`.
    pub fn exponent_maps(&self, frames: usize) -> (Array2<f64>, Array2<f64>) {
        let n = self.channels();
        let a = Array2::from_shape_fn((frames, n), |(_, i)| self.alpha[i]);
        let g = Array2::from_shape_fn((frames, n), |(_, i)| self.gamma[i]);
        (a, g)
    }
}

/// `E^γ / (M + ε)^α` elementwise with `0^γ := 0`; exponents may vary per element.
pub fn simp_pcen_elementwise(
    e: ArrayView2<f64>,
    m: ArrayView2<f64>,
    alpha: ArrayView2<f64>,
    gamma: ArrayView2<f64>,
    eps: f64,
) -> Result<FeatureMap> {
    for other in [m.dim(), alpha.dim(), gamma.dim()] {
        check_shape(e.dim(), other)?;
    }
    let mut y = Array2::zeros(e.dim());
    for ((idx, out), &ev) in y.indexed_iter_mut().zip(e.iter()) {
        if ev > 0.0 {
            *out = ev.powf(gamma[idx]) / (m[idx] + eps).powf(alpha[idx]);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(y)
}

pub fn simp_pcen_forward(e: ArrayView2<f64>, p: &SimpPcenParams, m: Option<ArrayView2<f64>>) -> Result<FeatureMap> {
    simp_pcen_forward_tape(e, p, m).map(|(y, _)| y)
}

#[derive(Clone, Debug)]
pub struct SimpPcenTape {
    pub e: Array2<f64>,
    pub m: Array2<f64>,
    pub out: Array2<f64>,
    pub alpha: Array2<f64>,
    pub gamma: Array2<f64>,
    pub eps: f64,
    pub s: f64,
    /// True when `m` was computed from `e` (and so carries gradient to it).
    pub m_from_e: bool,
}

impl SimpPcenTape {
    /// Tape for per-element exponents, smoothing computed from `e`.
    pub fn record(
        e: ArrayView2<f64>,
        alpha: Array2<f64>,
        gamma: Array2<f64>,
        s: f64,
        eps: f64,
    ) -> Result<(FeatureMap, Self)> {
        check_energy(e)?;
        let n = e.ncols();
        let m = ema_smooth(e, &vec![s; n], &first_frame_init(e))?;
        let out = simp_pcen_elementwise(e, m.view(), alpha.view(), gamma.view(), eps)?;
        let tape = Self { e: e.to_owned(), m, out: out.clone(), alpha, gamma, eps, s, m_from_e: true };
        Ok((out, tape))
    }
}

pub fn simp_pcen_forward_tape(
    e: ArrayView2<f64>,
    p: &SimpPcenParams,
    m: Option<ArrayView2<f64>>,
) -> Result<(FeatureMap, SimpPcenTape)> {
    check_energy(e)?;
    p.validate(e.ncols())?;
    let (alpha, gamma) = p.exponent_maps(e.nrows());
    match m {
        None => SimpPcenTape::record(e, alpha, gamma, p.s, p.eps),
        Some(m) => {
            check_shape(e.dim(), m.dim())?;
            check_energy(m)?;
            let out = simp_pcen_elementwise(e, m, alpha.view(), gamma.view(), p.eps)?;
            let tape = SimpPcenTape {
                e: e.to_owned(),
                m: m.to_owned(),
                out: out.clone(),
                alpha,
                gamma,
                eps: p.eps,
                s: p.s,
                m_from_e: false,
            };
            Ok((out, tape))
        }
    }
}

/// Per-element gradients; sum over frames (see [`SimpPcenGrads::per_channel`])
/// for channel-shared exponents.
#[derive(Clone, Debug, PartialEq)]
pub struct SimpPcenGrads {
    pub alpha: Array2<f64>,
    pub gamma: Array2<f64>,
    /// Total energy gradient, including the smoothing path when `M` came from `E`.
    pub e: Array2<f64>,
    /// Gradient with respect to `M` as seen by the output formula.
    pub m: Array2<f64>,
}

impl SimpPcenGrads {
    pub fn per_channel(&self) -> (Vec<f64>, Vec<f64>) {
        (self.alpha.sum_axis(Axis(0)).to_vec(), self.gamma.sum_axis(Axis(0)).to_vec())
    }
}

/// Reverse pass: `∂y/∂γ̂ = y·ln E`, `∂y/∂α̂ = −y·ln(M + ε)`, with energies
/// clamped at [`LOG_FLOOR`] inside logarithms and zero terms on silent cells.
pub fn simp_pcen_backward(tape: &SimpPcenTape, upstream: ArrayView2<f64>) -> Result<SimpPcenGrads> {
    check_shape(tape.e.dim(), upstream.dim())?;
    let dim = tape.e.dim();
    let mut g = SimpPcenGrads {
        alpha: Array2::zeros(dim),
        gamma: Array2::zeros(dim),
        e: Array2::zeros(dim),
        m: Array2::zeros(dim),
    };
    for (idx, &up) in upstream.indexed_iter() {
        let y = tape.out[idx];
        if up == 0.0 || y == 0.0 {
            continue;
        }
        let ev = tape.e[idx];
        let denom = tape.m[idx] + tape.eps;
        g.gamma[idx] = up * y * ev.max(LOG_FLOOR).ln();
        g.alpha[idx] = -up * y * denom.ln();
        g.e[idx] = up * tape.gamma[idx] * y / ev;
        g.m[idx] = -up * tape.alpha[idx] * y / denom;
    }
    if tape.m_from_e {
        let n = dim.1;
        let s = vec![tape.s; n];
        let m_init = first_frame_init(tape.e.view());
        let ema = ema_backward(g.m.view(), tape.e.view(), tape.m.view(), &s, &m_init);
        g.e += &ema.e;
        if dim.0 > 0 {
            for i in 0..n {
                g.e[[0, i]] += ema.m_init[i];
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn params(alpha: f64, gamma: f64, eps: f64, n: usize) -> SimpPcenParams {
        SimpPcenParams { alpha: vec![alpha; n], gamma: vec![gamma; n], s: S0, eps }
    }

    #[test]
    fn init_values() {
        let p = SimpPcenParams::init(2);
        assert_eq!(p.gamma, vec![0.5, 0.5]);
        assert!((p.alpha[0] - 0.48).abs() < 1e-15);
    }

    #[test]
    fn scalar_oracle_with_override() {
        let p = params(0.48, 0.5, 0.0, 1);
        let y = simp_pcen_forward(arr2(&[[2.0]]).view(), &p, Some(arr2(&[[1.04]]).view())).unwrap();
        assert!((y[[0, 0]] - 1.38784).abs() < 1e-5);
    }

    #[test]
    fn silent_frame_maps_to_zero() {
        let e = arr2(&[[1.0, 2.0], [0.0, 0.0], [3.0, 1.0]]);
        let y = simp_pcen_forward(e.view(), &SimpPcenParams::init(2), None).unwrap();
        assert_eq!(y.row(1).to_vec(), vec![0.0, 0.0]);
        assert!(y.row(2).iter().all(|&v| v > 0.0));
    }

    #[test]
    fn homogeneity_with_zero_eps() {
        let e = arr2(&[[0.3, 2.0], [1.5, 0.7], [0.9, 4.0]]);
        let p = params(0.48, 0.5, 0.0, 2);
        let base = simp_pcen_forward(e.view(), &p, None).unwrap();
        for c in [0.1, 10.0] {
            let scaled = simp_pcen_forward((&e * c).view(), &p, None).unwrap();
            let k = c.powf(0.5 - 0.48);
            for (a, b) in scaled.iter().zip(base.iter()) {
                assert!((a - k * b).abs() <= 1e-12 * a.abs());
            }
        }
    }

    #[test]
    fn constant_input_compresses_to_power() {
        let c = 1e-3;
        let e = Array2::from_elem((10, 1), c);
        let y = simp_pcen_forward(e.view(), &params(0.48, 0.5, 0.0, 1), None).unwrap();
        assert!(y.iter().all(|&v| (v - c.powf(0.02)).abs() < 1e-12));
    }

    #[test]
    fn unit_energy_has_zero_gamma_gradient() {
        let e = Array2::ones((4, 2));
        let (_, tape) = simp_pcen_forward_tape(e.view(), &SimpPcenParams::init(2), None).unwrap();
        let g = simp_pcen_backward(&tape, Array2::ones((4, 2)).view()).unwrap();
        assert!(g.gamma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let e = arr2(&[[0.5, 2.0], [1.0, 3.0]]);
        let (_, tape) = simp_pcen_forward_tape(e.view(), &SimpPcenParams::init(2), None).unwrap();
        let g = simp_pcen_backward(&tape, Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.alpha.iter().chain(g.gamma.iter()).chain(g.e.iter()).all(|&v| v == 0.0));
    }
}
