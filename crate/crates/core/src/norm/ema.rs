use ndarray::{Array2, ArrayView2};

use super::{check_channels, SmoothedEnergy};
use crate::error::{Error, Result};

/// `M[n] = s·E[n] + (1 − s)·M[n−1]` per channel, with `M[−1] = m_init`.
pub fn ema_smooth(e: ArrayView2<f64>, s: &[f64], m_init: &[f64]) -> Result<SmoothedEnergy> {
    let (frames, channels) = e.dim();
    check_channels(channels, "smoothing coefficients", s.len())?;
    check_channels(channels, "initial state", m_init.len())?;
    if let Some(bad) = s.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::ConfigInvalid(format!("smoothing coefficient {bad} outside (0, 1]")));
    }
    if m_init.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::ConfigInvalid("initial state must be finite and non-negative".into()));
    }
    let mut m = Array2::zeros((frames, channels));
    let mut prev = m_init.to_vec();
    for n in 0..frames {
        for i in 0..channels {
            let v = s[i] * e[[n, i]] + (1.0 - s[i]) * prev[i];
            m[[n, i]] = v;
            prev[i] = v;
        }
    }
    Ok(m)
}

/// First-frame initialization `M[−1] = E[0]`; zeros for an empty map.
pub fn first_frame_init(e: ArrayView2<f64>) -> Vec<f64> {
    if e.nrows() == 0 {
        vec![0.0; e.ncols()]
    } else {
        e.row(0).to_vec()
    }
}

#[derive(Clone, Debug)]
pub struct EmaGrads {
    pub e: Array2<f64>,
    pub s: Vec<f64>,
    pub m_init: Vec<f64>,
}

/// Reverse pass through the EMA recursion. `g_m` holds the gradient of the
/// loss with respect to each `M[n]` from everything except the recursion.
pub fn ema_backward(
    g_m: ArrayView2<f64>,
    e: ArrayView2<f64>,
    m: ArrayView2<f64>,
    s: &[f64],
    m_init: &[f64],
) -> EmaGrads {
    let (frames, channels) = e.dim();
    let mut g_e = Array2::zeros((frames, channels));
    let mut g_s = vec![0.0; channels];
    let mut g_init = vec![0.0; channels];
    for i in 0..channels {
        let mut carry = 0.0;
        for n in (0..frames).rev() {
            let total = g_m[[n, i]] + carry;
            g_e[[n, i]] = s[i] * total;
            let prev = if n == 0 { m_init[i] } else { m[[n - 1, i]] };
            g_s[i] += total * (e[[n, i]] - prev);
            carry = (1.0 - s[i]) * total;
        }
        g_init[i] = carry;
    }
    EmaGrads { e: g_e, s: g_s, m_init: g_init }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn scalar_step() {
        let e = arr2(&[[1.0], [2.0]]);
        let m = ema_smooth(e.view(), &[0.04], &[1.0]).unwrap();
        assert!((m[[1, 0]] - 1.04).abs() < 1e-15);
    }

    #[test]
    fn constant_is_fixed_point() {
        let e = Array2::from_elem((20, 3), 0.7);
        let m = ema_smooth(e.view(), &[0.04; 3], &[0.7; 3]).unwrap();
        assert!(m.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn unit_coefficient_copies_input() {
        let e = arr2(&[[1.0, 5.0], [3.0, 0.0], [2.0, 9.0]]);
        let m = ema_smooth(e.view(), &[1.0, 1.0], &[4.0, 4.0]).unwrap();
        assert_eq!(m, e);
    }

    #[test]
    fn contraction_towards_constant_input() {
        let c = 2.0;
        let e = Array2::from_elem((50, 1), c);
        let s = 0.04;
        let m = ema_smooth(e.view(), &[s], &[10.0]).unwrap();
        for t in 0..50 {
            let bound = (1.0 - s).powi(t as i32 + 1) * (10.0 - c);
            assert!((m[[t, 0]] - c).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn channel_count_checked() {
        let e = Array2::zeros((2, 3));
        assert!(ema_smooth(e.view(), &[0.5; 2], &[0.0; 3]).is_err());
        assert!(ema_smooth(e.view(), &[0.0; 3], &[0.0; 3]).is_err());
    }
}
