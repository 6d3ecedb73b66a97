//! Per-channel energy normalization: the EMA smoother, four-parameter PCEN
//! and the two-exponent simplified form, each with analytic gradients.

mod ema;
mod pcen;
mod simp;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub use ema::{ema_backward, ema_smooth, first_frame_init, EmaGrads};
pub use pcen::{pcen_apply, pcen_backward, pcen_forward, pcen_forward_tape, PcenGrads, PcenParams, PcenTape};
pub use simp::{
    simp_pcen_backward, simp_pcen_elementwise, simp_pcen_forward, simp_pcen_forward_tape, SimpPcenGrads,
    SimpPcenParams, SimpPcenTape,
};

/// Frames × channels output of a normalization stage.
pub type FeatureMap = Array2<f64>;
/// Frames × channels EMA of the energies.
pub type SmoothedEnergy = Array2<f64>;

pub const DEFAULT_EPS: f64 = 1e-6;
/// Initial PCEN values.
pub const S0: f64 = 0.04;
pub const ALPHA0: f64 = 0.96;
pub const DELTA0: f64 = 2.0;
pub const GAMMA0: f64 = 0.5;
/// Simplified-form initial exponents: `γ̂₀ = γ₀`, `α̂₀ = α₀·γ₀`.
pub const SIMP_GAMMA0: f64 = GAMMA0;
pub const SIMP_ALPHA0: f64 = ALPHA0 * GAMMA0;

/// Lower clamp applied to energies inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

pub(crate) fn check_energy(e: ArrayView2<f64>) -> Result<()> {
    for &v in e.iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        if v < 0.0 {
            return Err(Error::NegativeEnergy);
        }
    }
    Ok(())
}

pub(crate) fn check_shape(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn check_channels(n: usize, what: &str, len: usize) -> Result<()> {
    if len != n {
        return Err(Error::ConfigInvalid(format!("{what} has {len} channels, energy map has {n}")));
    }
    Ok(())
}
