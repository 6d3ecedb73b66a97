//! Mono waveforms and deterministic test-signal generation.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// The only sample rate accepted by the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence(n: usize) -> Self {
        Self::new(vec![0.0; n], SAMPLE_RATE)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    pub fn mean_square(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.mean_square().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Samples `[start, start + len)`, zero-padded past the end.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            out[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        Self::new(out, self.sample_rate)
    }

    pub fn require_pipeline_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedFormat(format!("sample_rate {}", self.sample_rate)));
        }
        Ok(())
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64
}

/// Test-signal kinds. `amplitude` is the peak amplitude of the result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthKind {
    Sine { freq: f64, amplitude: f64 },
    /// Carrier under a raised-sine envelope `0.5 + 0.5 sin(2π·am_rate·t)`.
    AmTone { freq: f64, am_rate: f64, amplitude: f64 },
    /// Harmonic series on `freq` with 1/k weights, harmonics kept below Nyquist.
    ToneComplex { freq: f64, amplitude: f64 },
    Silence,
    WhiteNoise { amplitude: f64 },
    /// Uniform noise under a raised-sine envelope; a crude speech stand-in.
    AmNoise { am_rate: f64, amplitude: f64 },
}

const MAX_HARMONICS: usize = 8;

pub fn synth_clip(kind: SynthKind, duration_secs: f64, seed: u64) -> Result<AudioClip> {
    if !(duration_secs > 0.0 && duration_secs.is_finite()) {
        return Err(Error::ConfigInvalid(format!("duration {duration_secs} must be positive")));
    }
    let sr = f64::from(SAMPLE_RATE);
    let nyquist = sr / 2.0;
    let check = |f: f64| {
        if f >= nyquist {
            Err(Error::AliasRisk { freq: f, nyquist })
        } else if f < 0.0 || !f.is_finite() {
            Err(Error::ConfigInvalid(format!("frequency {f}")))
        } else {
            Ok(())
        }
    };
    let n = (duration_secs * sr).round() as usize;
    let t = |i: usize| i as f64 / sr;
    let samples = match kind {
        SynthKind::Sine { freq, amplitude } => {
            check(freq)?;
            (0..n).map(|i| amplitude * (2.0 * PI * freq * t(i)).sin()).collect()
        }
        SynthKind::AmTone { freq, am_rate, amplitude } => {
            check(freq)?;
            check(am_rate)?;
            (0..n)
                .map(|i| {
                    let env = 0.5 + 0.5 * (2.0 * PI * am_rate * t(i)).sin();
                    amplitude * env * (2.0 * PI * freq * t(i)).sin()
                })
                .collect()
        }
        SynthKind::ToneComplex { freq, amplitude } => {
            check(freq)?;
            let harmonics: Vec<f64> = (1..=MAX_HARMONICS)
                .map(|k| k as f64 * freq)
                .take_while(|&f| f < nyquist)
                .collect();
            let raw: Vec<f64> = (0..n)
                .map(|i| {
                    harmonics
                        .iter()
                        .enumerate()
                        .map(|(k, f)| (2.0 * PI * f * t(i)).sin() / (k + 1) as f64)
                        .sum()
                })
                .collect();
            let peak = raw.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            let g = if peak > 0.0 { amplitude / peak } else { 0.0 };
            raw.into_iter().map(|s| s * g).collect()
        }
        SynthKind::Silence => vec![0.0; n],
        SynthKind::WhiteNoise { amplitude } => {
            let mut r = rng::stream(seed, "synth.white_noise");
            (0..n).map(|_| amplitude * r.gen_range(-1.0..=1.0)).collect()
        }
        SynthKind::AmNoise { am_rate, amplitude } => {
            check(am_rate)?;
            let mut r = rng::stream(seed, "synth.am_noise");
            (0..n)
                .map(|i| {
                    let env = 0.5 + 0.5 * (2.0 * PI * am_rate * t(i)).sin();
                    amplitude * env * r.gen_range(-1.0..=1.0)
                })
                .collect()
        }
    };
    Ok(AudioClip::new(samples, SAMPLE_RATE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_rms_matches_amplitude_over_root_two() {
        let c = synth_clip(SynthKind::Sine { freq: 1000.0, amplitude: 0.5 }, 1.0, 0).unwrap();
        assert_eq!(c.len(), 16000);
        assert!((c.rms() - 0.5 / 2f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn silence_is_zero() {
        let c = synth_clip(SynthKind::Silence, 1.0, 0).unwrap();
        assert!(c.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let k = SynthKind::WhiteNoise { amplitude: 0.3 };
        assert_eq!(synth_clip(k, 0.5, 7).unwrap(), synth_clip(k, 0.5, 7).unwrap());
        assert_ne!(synth_clip(k, 0.5, 7).unwrap(), synth_clip(k, 0.5, 8).unwrap());
    }

    #[test]
    fn alias_risk_at_nyquist() {
        let err = synth_clip(SynthKind::Sine { freq: 8000.0, amplitude: 1.0 }, 1.0, 0);
        assert!(matches!(err, Err(Error::AliasRisk { .. })));
    }

    #[test]
    fn tone_complex_peak_is_requested_amplitude() {
        let c = synth_clip(SynthKind::ToneComplex { freq: 220.0, amplitude: 0.4 }, 0.5, 0).unwrap();
        assert!((c.peak() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn window_zero_pads() {
        let c = AudioClip::new(vec![1.0, 2.0, 3.0], SAMPLE_RATE);
        assert_eq!(c.window(2, 3).samples, vec![3.0, 0.0, 0.0]);
        assert_eq!(c.window(5, 2).samples, vec![0.0, 0.0]);
    }
}
