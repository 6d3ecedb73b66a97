//! Fixed spectral decomposition: mel-spaced complex Gabor filters, squared
//! modulus detection and Gaussian low-pass pooling at the frame hop.

use std::f64::consts::{LN_2, PI};

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Frames × channels matrix of non-negative subband energies.
pub type EnergyMap = Array2<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub n_filters: usize,
    /// Gabor kernel length in samples; even values are bumped to the next odd.
    pub kernel_len: usize,
    /// Gaussian pooling kernel length in samples; same odd adjustment.
    pub pool_len: usize,
    pub sample_rate: u32,
    pub hop: usize,
    /// Nominal analysis window (25 ms). Informational only.
    pub window: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            n_filters: 40,
            kernel_len: 150,
            pool_len: 150,
            sample_rate: 16_000,
            hop: 160,
            window: 400,
            f_min: 0.0,
            f_max: 8000.0,
        }
    }
}

fn odd(n: usize) -> usize {
    n | 1
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sample_rate) / 2.0;
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.n_filters == 0 {
            return bad("n_filters must be at least 1".into());
        }
        if self.n_filters > usize::from(u16::MAX) {
            return bad(format!("n_filters {} exceeds {}", self.n_filters, u16::MAX));
        }
        if self.kernel_len == 0 || self.pool_len == 0 {
            return bad("kernel lengths must be positive".into());
        }
        if self.hop == 0 {
            return bad("hop must be at least 1".into());
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return bad(format!("need 0 <= f_min < f_max <= {nyquist}, got {}..{}", self.f_min, self.f_max));
        }
        Ok(())
    }

    pub fn gabor_len(&self) -> usize {
        odd(self.kernel_len)
    }

    pub fn pooling_len(&self) -> usize {
        odd(self.pool_len)
    }

    /// Standard deviation of the pooling Gaussian, in samples.
    pub fn pooling_sigma(&self) -> f64 {
        0.4 * self.pooling_len() as f64 / 2.0
    }

    pub fn frame_rate(&self) -> f64 {
        f64::from(self.sample_rate) / self.hop as f64
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Clone, Debug)]
pub struct GaborFilter {
    pub center_hz: f64,
    /// Envelope standard deviation in samples.
    pub sigma: f64,
    /// Taps for offsets `-(L-1)/2 ..= (L-1)/2`.
    pub kernel: Vec<Complex64>,
}

/// Immutable filterbank; never trained.
#[derive(Clone, Debug)]
pub struct GaborFilterbank {
    pub config: FrontendConfig,
    pub filters: Vec<GaborFilter>,
}

impl GaborFilterbank {
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.filters.iter().map(|f| f.center_hz).collect()
    }
}

/// Places `N` Gabor filters at mel-uniform centers.
///
/// Widths follow the full width at half maximum of the triangular mel filter
/// spanning the two neighbouring breakpoints. The discrete envelope is scaled
/// to unit sum so every channel has unit gain at its own center frequency.
pub fn design_filterbank(config: &FrontendConfig) -> Result<GaborFilterbank> {
    config.validate()?;
    let n = config.n_filters;
    let sr = f64::from(config.sample_rate);
    let (m_lo, m_hi) = (hz_to_mel(config.f_min), hz_to_mel(config.f_max));
    let step = (m_hi - m_lo) / (n + 1) as f64;
    let edges: Vec<f64> = (0..n + 2).map(|k| mel_to_hz(m_lo + step * k as f64)).collect();
    let len = config.gabor_len();
    let half = (len / 2) as isize;
    let filters = (1..=n)
        .map(|i| {
            let center_hz = edges[i];
            let sigma = sr * (2.0 * LN_2).sqrt() / (PI * (edges[i + 1] - edges[i - 1]));
            let envelope: Vec<f64> = (-half..=half)
                .map(|t| {
                    let t = t as f64;
                    (-t * t / (2.0 * sigma * sigma)).exp() / ((2.0 * PI).sqrt() * sigma)
                })
                .collect();
            let norm: f64 = envelope.iter().sum();
            let kernel = (-half..=half)
                .zip(envelope)
                .map(|(t, e)| Complex64::from_polar(e / norm, 2.0 * PI * center_hz * t as f64 / sr))
                .collect();
            GaborFilter { center_hz, sigma, kernel }
        })
        .collect();
    Ok(GaborFilterbank { config: config.clone(), filters })
}

fn check_len(clip: &AudioClip, fb: &GaborFilterbank) -> Result<()> {
    let needed = fb.config.gabor_len();
    if clip.len() < needed {
        return Err(Error::ClipTooShort { len: clip.len(), needed });
    }
    if clip.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Squared modulus of the "same" zero-padded correlation of the clip with
/// every Gabor kernel, via FFT. Returns channels × samples.
pub fn decompose(clip: &AudioClip, fb: &GaborFilterbank) -> Result<Array2<f64>> {
    check_len(clip, fb)?;
    let n = clip.len();
    let len = fb.config.gabor_len();
    let half = len / 2;
    let size = (n + len - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let mut spectrum: Vec<Complex64> = clip.samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    spectrum.resize(size, Complex64::new(0.0, 0.0));
    fwd.process(&mut spectrum);

    let scale = 1.0 / size as f64;
    let mut out = Array2::zeros((fb.len(), n));
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    for (i, filter) in fb.filters.iter().enumerate() {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        // Reversed kernel turns the correlation into a convolution.
        for (m, tap) in filter.kernel.iter().rev().enumerate() {
            buf[m] = *tap;
        }
        fwd.process(&mut buf);
        for (b, x) in buf.iter_mut().zip(&spectrum) {
            *b *= x;
        }
        inv.process(&mut buf);
        for (o, y) in out.row_mut(i).iter_mut().zip(&buf[half..half + n]) {
            *o = (y * scale).norm_sqr();
        }
    }
    Ok(out)
}

/// Direct O(n·L) evaluation of [`decompose`]; the reference path.
pub fn decompose_direct(clip: &AudioClip, fb: &GaborFilterbank) -> Result<Array2<f64>> {
    check_len(clip, fb)?;
    let x = &clip.samples;
    let n = x.len() as isize;
    let half = (fb.config.gabor_len() / 2) as isize;
    let mut out = Array2::zeros((fb.len(), x.len()));
    for (i, filter) in fb.filters.iter().enumerate() {
        for t in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, tap) in filter.kernel.iter().enumerate() {
                let idx = t + k as isize - half;
                if (0..n).contains(&idx) {
                    acc += tap * x[idx as usize];
                }
            }
            out[[i, t as usize]] = acc.norm_sqr();
        }
    }
    Ok(out)
}

/// Unit-sum Gaussian pooling window of length `config.pooling_len()`.
pub fn pooling_kernel(config: &FrontendConfig) -> Vec<f64> {
    let len = config.pooling_len();
    let half = (len / 2) as isize;
    let sigma = config.pooling_sigma();
    let w: Vec<f64> = (-half..=half).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// Gaussian low-pass each channel and sample every `hop` samples from 0.
/// Input is channels × samples; output is frames × channels.
pub fn pool(detection: ArrayView2<f64>, config: &FrontendConfig) -> Result<EnergyMap> {
    config.validate()?;
    if detection.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFiniteInput);
    }
    let (channels, n) = detection.dim();
    let w = pooling_kernel(config);
    let half = (w.len() / 2) as isize;
    let frames = config.n_frames(n);
    let mut out = Array2::zeros((frames, channels));
    for (c, row) in detection.rows().into_iter().enumerate() {
        for f in 0..frames {
            let center = (f * config.hop) as isize;
            let lo = (center - half).max(0);
            let hi = (center + half).min(n as isize - 1);
            let mut acc = 0.0;
            for idx in lo..=hi {
                acc += row[idx as usize] * w[(idx - center + half) as usize];
            }
            out[[f, c]] = acc;
        }
    }
    Ok(out)
}

/// Filterbank plus pooling configuration, ready to map clips to energies.
#[derive(Clone, Debug)]
pub struct Frontend {
    pub filterbank: GaborFilterbank,
}

impl Frontend {
    pub fn new(config: &FrontendConfig) -> Result<Self> {
        Ok(Self { filterbank: design_filterbank(config)? })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.filterbank.config
    }

    pub fn energy(&self, clip: &AudioClip) -> Result<EnergyMap> {
        if clip.sample_rate != self.config().sample_rate {
            return Err(Error::UnsupportedFormat(format!("sample_rate {}", clip.sample_rate)));
        }
        let detection = decompose(clip, &self.filterbank)?;
        pool(detection.view(), self.config())
    }
}
