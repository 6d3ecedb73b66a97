use ndarray::{Array2, ArrayView2};

use super::{
    check_channels, check_energy, check_shape, ema_backward, ema_smooth, first_frame_init, FeatureMap, ALPHA0,
    DEFAULT_EPS, DELTA0, GAMMA0, S0,
};
use crate::error::{Error, Result};

/// Four-parameter PCEN, one value per channel plus a shared `eps`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcenParams {
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub eps: f64,
}

impl PcenParams {
    pub fn init(channels: usize) -> Self {
        Self {
            s: vec![S0; channels],
            alpha: vec![ALPHA0; channels],
            delta: vec![DELTA0; channels],
            gamma: vec![GAMMA0; channels],
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.s.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (what, v) in [("s", &self.s), ("alpha", &self.alpha), ("delta", &self.delta), ("gamma", &self.gamma)] {
            check_channels(channels, what, v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::ConfigInvalid(format!("{what} is not finite")));
            }
        }
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.s.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return bad("s must lie in (0, 1]");
        }
        if self.gamma.iter().any(|&v| v <= 0.0) {
            return bad("gamma must be positive");
        }
        if self.delta.iter().any(|&v| v < 0.0) {
            return bad("delta must be non-negative");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        Ok(())
    }

    /// Projects parameters back into their valid ranges after an update.
    pub fn project(&mut self) {
        self.s.iter_mut().for_each(|v| *v = v.clamp(1e-4, 1.0));
        self.gamma.iter_mut().for_each(|v| *v = v.max(1e-4));
        self.delta.iter_mut().for_each(|v| *v = v.max(1e-6));
    }
}

/// Forward quantities kept for [`pcen_backward`].
#[derive(Clone, Debug)]
pub struct PcenTape {
    pub e: Array2<f64>,
    pub m: Array2<f64>,
    /// `E / (M + eps)^alpha`.
    pub agc: Array2<f64>,
}

pub fn pcen_forward(e: ArrayView2<f64>, p: &PcenParams) -> Result<FeatureMap> {
    pcen_forward_tape(e, p).map(|(y, _)| y)
}

/// `(E / (M + ε)^α + δ)^γ − δ^γ` with `M` from [`ema_smooth`], `M[−1] = E[0]`.
pub fn pcen_forward_tape(e: ArrayView2<f64>, p: &PcenParams) -> Result<(FeatureMap, PcenTape)> {
    check_energy(e)?;
    p.validate(e.ncols())?;
    let m = ema_smooth(e, &p.s, &first_frame_init(e))?;
    let (y, agc) = apply(e, m.view(), p);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok((y, PcenTape { e: e.to_owned(), m, agc }))
}

/// Elementwise PCEN on a caller-supplied smoothed energy `m`.
pub fn pcen_apply(e: ArrayView2<f64>, m: ArrayView2<f64>, p: &PcenParams) -> Result<FeatureMap> {
    check_energy(e)?;
    check_energy(m)?;
    check_shape(e.dim(), m.dim())?;
    p.validate(e.ncols())?;
    let (y, _) = apply(e, m, p);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(y)
}

fn apply(e: ArrayView2<f64>, m: ArrayView2<f64>, p: &PcenParams) -> (Array2<f64>, Array2<f64>) {
    let mut agc = Array2::zeros(e.dim());
    let mut y = Array2::zeros(e.dim());
    for ((n, i), &ev) in e.indexed_iter() {
        let r = ev / (m[[n, i]] + p.eps).powf(p.alpha[i]);
        agc[[n, i]] = r;
        y[[n, i]] = (r + p.delta[i]).powf(p.gamma[i]) - p.delta[i].powf(p.gamma[i]);
    }
    (y, agc)
}

/// Per-channel parameter gradients plus the energy gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct PcenGrads {
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub e: Array2<f64>,
}

/// Reverse pass of [`pcen_forward_tape`], including backpropagation through
/// the smoothing recursion for the `s` gradient.
///
/// At `δ = 0` the `δ^γ` term contributes nothing to the `δ` and `γ` gradients.
pub fn pcen_backward(tape: &PcenTape, p: &PcenParams, upstream: ArrayView2<f64>) -> Result<PcenGrads> {
    check_shape(tape.e.dim(), upstream.dim())?;
    let (frames, channels) = tape.e.dim();
    p.validate(channels)?;
    let mut g = PcenGrads {
        s: vec![0.0; channels],
        alpha: vec![0.0; channels],
        delta: vec![0.0; channels],
        gamma: vec![0.0; channels],
        e: Array2::zeros((frames, channels)),
    };
    let mut g_m = Array2::zeros((frames, channels));
    for n in 0..frames {
        for i in 0..channels {
            let up = upstream[[n, i]];
            if up == 0.0 {
                continue;
            }
            let (gamma, delta, alpha) = (p.gamma[i], p.delta[i], p.alpha[i]);
            let r = tape.agc[[n, i]];
            let base = r + delta;
            let pow_base = base.powf(gamma);
            let (pow_delta, log_delta, pow_delta_m1) = if delta > 0.0 {
                (delta.powf(gamma), delta.ln(), delta.powf(gamma - 1.0))
            } else {
                (0.0, 0.0, 0.0)
            };
            let dy_dr = gamma * base.powf(gamma - 1.0);
            g.gamma[i] += up * (pow_base * base.ln() - pow_delta * log_delta);
            g.delta[i] += up * gamma * (base.powf(gamma - 1.0) - pow_delta_m1);
            let denom = tape.m[[n, i]] + p.eps;
            g.alpha[i] += up * dy_dr * (-r * denom.ln());
            g.e[[n, i]] += up * dy_dr * denom.powf(-alpha);
            g_m[[n, i]] = up * dy_dr * (-alpha * r / denom);
        }
    }
    let m_init = first_frame_init(tape.e.view());
    let ema = ema_backward(g_m.view(), tape.e.view(), tape.m.view(), &p.s, &m_init);
    g.s = ema.s;
    g.e += &ema.e;
    if frames > 0 {
        for i in 0..channels {
            g.e[[0, i]] += ema.m_init[i];
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn zero_energy_gives_zero_output() {
        let e = Array2::zeros((5, 3));
        let y = pcen_forward(e.view(), &PcenParams::init(3)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_oracle() {
        let y = pcen_apply(arr2(&[[2.0]]).view(), arr2(&[[1.0]]).view(), &PcenParams::init(1)).unwrap();
        assert!((y[[0, 0]] - 0.585786).abs() < 1e-6);
    }

    #[test]
    fn unit_gamma_zero_delta_is_pure_agc() {
        let e = arr2(&[[1.0, 0.5], [2.0, 0.25], [0.5, 4.0]]);
        let mut p = PcenParams::init(2);
        p.gamma = vec![1.0; 2];
        p.delta = vec![0.0; 2];
        let (y, tape) = pcen_forward_tape(e.view(), &p).unwrap();
        for ((n, i), &v) in y.indexed_iter() {
            assert_eq!(v, e[[n, i]] / (tape.m[[n, i]] + p.eps).powf(p.alpha[i]));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let e = arr2(&[[1.0, 0.5], [2.0, 0.25]]);
        let p = PcenParams::init(2);
        let (_, tape) = pcen_forward_tape(e.view(), &p).unwrap();
        let g = pcen_backward(&tape, &p, Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.s.iter().chain(&g.alpha).chain(&g.delta).chain(&g.gamma).all(|&v| v == 0.0));
        assert!(g.e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_gradient_sign_matches_scalar_derivative() {
        // Constant input: M = E, r = E / (E + eps)^alpha.
        let e = Array2::from_elem((4, 1), 3.0);
        let p = PcenParams::init(1);
        let (_, tape) = pcen_forward_tape(e.view(), &p).unwrap();
        let g = pcen_backward(&tape, &p, Array2::ones((4, 1)).view()).unwrap();
        let r = 3.0 / (3.0 + p.eps).powf(p.alpha[0]);
        let (d, gm) = (p.delta[0], p.gamma[0]);
        let scalar = (r + d).powf(gm) * (r + d).ln() - d.powf(gm) * d.ln();
        assert_eq!(g.gamma[0].signum(), scalar.signum());
        assert!((g.gamma[0] - 4.0 * scalar).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_reported() {
        let e = Array2::ones((2, 2));
        let p = PcenParams::init(2);
        let (_, tape) = pcen_forward_tape(e.view(), &p).unwrap();
        let err = pcen_backward(&tape, &p, Array2::zeros((3, 2)).view());
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn rejects_non_finite_input() {
        let e = arr2(&[[f64::NAN]]);
        assert!(matches!(pcen_forward(e.view(), &PcenParams::init(1)), Err(Error::NonFiniteInput)));
    }
}
