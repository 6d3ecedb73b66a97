//! RIFF/WAVE ingestion and PCM16 egress.

use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Divisor mapping PCM16 codes to [-1, 1).
pub const PCM16_SCALE: f64 = 32768.0;

/// Reads a 16 kHz mono PCM16 or float32 WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!("channels {}", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!("sample_rate {}", spec.sample_rate)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / PCM16_SCALE))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!("{fmt:?} bits_per_sample {bits}")));
        }
    };
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(AudioClip::new(samples, SAMPLE_RATE))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WavWriteStats {
    /// Samples whose magnitude exceeded 1.0 and were clamped.
    pub clipped: usize,
}

pub fn quantize_pcm16(s: f64) -> i16 {
    (s * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes `clip` as mono PCM16. Out-of-range samples are clamped and counted.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<WavWriteStats> {
    if clip.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    let mut stats = WavWriteStats::default();
    for &s in &clip.samples {
        if s.abs() > 1.0 {
            stats.clipped += 1;
        }
        writer.write_sample(quantize_pcm16(s.clamp(-1.0, 1.0)))?;
    }
    writer.finalize()?;
    if stats.clipped > 0 {
        log::warn!("clipped {} samples while writing wav", stats.clipped);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_clip, SynthKind};

    #[test]
    fn round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let c = synth_clip(SynthKind::Sine { freq: 440.0, amplitude: 0.9 }, 1.0, 0).unwrap();
        write_wav(&c, &p).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), c.len());
        let err = c.samples.iter().zip(&r.samples).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1.0 / PCM16_SCALE);
    }

    #[test]
    fn clamps_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let stats = write_wav(&AudioClip::new(vec![1.5, -0.25, -3.0], SAMPLE_RATE), &p).unwrap();
        assert_eq!(stats.clipped, 2);
        let r = read_wav(&p).unwrap();
        assert!((r.samples[0] - 32767.0 / 32768.0).abs() < 1e-15);
        assert_eq!(r.samples[1], -0.25);
        assert_eq!(r.samples[2], -1.0);
    }

    #[test]
    fn empty_clip_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        write_wav(&AudioClip::new(vec![], SAMPLE_RATE), &p).unwrap();
        assert!(read_wav(&p).unwrap().is_empty());
    }

    #[test]
    fn min_code_maps_to_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![-1.0]);
    }

    #[test]
    fn float32_input_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 32, sample_format: SampleFormat::Float };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.125f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![0.125]);
    }

    #[test]
    fn rejects_other_rates_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        for (ch, sr, needle) in [(1u16, 44100u32, "sample_rate 44100"), (2, 16000, "channels 2")] {
            let p = dir.path().join(format!("{ch}_{sr}.wav"));
            let spec = WavSpec { channels: ch, sample_rate: sr, bits_per_sample: 16, sample_format: SampleFormat::Int };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            for _ in 0..ch {
                w.write_sample(0i16).unwrap();
            }
            w.finalize().unwrap();
            let err = read_wav(&p).unwrap_err();
            assert!(matches!(err, Error::UnsupportedFormat(_)));
            assert!(err.to_string().contains(needle), "{err}");
        }
    }

    #[test]
    fn garbage_is_corrupt_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.wav");
        std::fs::write(&p, b"definitely not a riff file").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::CorruptHeader(_))));
    }
}
