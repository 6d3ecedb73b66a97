//! APCN binary feature files and CSV export.
//!
//! Layout (all little-endian), 28-byte header then payload:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `APCN`                            |
//! | 4      | 2    | version (1)                             |
//! | 6      | 2    | n_channels                              |
//! | 8      | 4    | n_frames                                |
//! | 12     | 2    | map kind (0 energy, 1 feature, 2 gain)  |
//! | 14     | 2    | reserved, zero                          |
//! | 16     | 8    | frame rate in Hz, f64                   |
//! | 24     | 4    | reserved, zero                          |
//! | 28     | 4·N·T| f32 payload, frame-major                |

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"APCN";
pub const FEATURE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Energy,
    Feature,
    Gain,
}

impl MapKind {
    fn code(self) -> u16 {
        match self {
            MapKind::Energy => 0,
            MapKind::Feature => 1,
            MapKind::Gain => 2,
        }
    }

    fn from_code(c: u16) -> Result<Self> {
        match c {
            0 => Ok(MapKind::Energy),
            1 => Ok(MapKind::Feature),
            2 => Ok(MapKind::Gain),
            _ => Err(Error::CorruptHeader(format!("unknown map kind {c}"))),
        }
    }
}

/// A decoded feature file: `values` is frames × channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub kind: MapKind,
    pub frame_rate: f64,
    pub values: Array2<f32>,
}

impl FeatureFile {
    pub fn from_f64(map: ArrayView2<f64>, kind: MapKind, frame_rate: f64) -> Self {
        Self { kind, frame_rate, values: map.mapv(|v| v as f32) }
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let (frames, channels) = self.values.dim();
        let n_channels = u16::try_from(channels)
            .map_err(|_| Error::DimensionOverflow { what: "n_channels", value: channels })?;
        let n_frames =
            u32::try_from(frames).map_err(|_| Error::DimensionOverflow { what: "n_frames", value: frames })?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * frames * channels);
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&n_channels.to_le_bytes());
        out.extend_from_slice(&n_frames.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.frame_rate.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptHeader(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != FEATURE_MAGIC {
            return Err(Error::BadMagic { expected: FEATURE_MAGIC, found: magic });
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let version = u16_at(4);
        if version != FEATURE_VERSION {
            return Err(Error::UnsupportedFormat(format!("feature file version {version}")));
        }
        let channels = usize::from(u16_at(6));
        let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let kind = MapKind::from_code(u16_at(12))?;
        let frame_rate = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let expected = HEADER_LEN + 4 * frames * channels;
        if bytes.len() != expected {
            return Err(Error::CorruptHeader(format!(
                "payload holds {} bytes, header implies {}",
                bytes.len() - HEADER_LEN,
                expected - HEADER_LEN
            )));
        }
        let data: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let values = Array2::from_shape_vec((frames, channels), data)
            .map_err(|e| Error::CorruptHeader(e.to_string()))?;
        Ok(Self { kind, frame_rate, values })
    }
}

pub fn save_features(map: ArrayView2<f64>, kind: MapKind, frame_rate: f64, path: impl AsRef<Path>) -> Result<()> {
    let bytes = FeatureFile::from_f64(map, kind, frame_rate).encode()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureFile> {
    FeatureFile::decode(&fs::read(path)?)
}

/// Formats `v` with `digits` significant digits, `%g` style.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".to_string() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One frame per line, channel-ordered, comma separated, no header.
pub fn write_csv<W: Write>(map: ArrayView2<f64>, mut out: W) -> Result<()> {
    for row in map.rows() {
        let line: Vec<String> = row.iter().map(|&v| format_significant(v, 9)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn save_csv(map: ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(map, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_size_matches_layout() {
        let m = Array2::<f64>::zeros((100, 40));
        let bytes = FeatureFile::from_f64(m.view(), MapKind::Feature, 100.0).encode().unwrap();
        assert_eq!(bytes.len(), 28 + 16000);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = FeatureFile::from_f64(Array2::zeros((2, 2)).view(), MapKind::Energy, 100.0)
            .encode()
            .unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(FeatureFile::decode(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut bytes = FeatureFile::from_f64(Array2::zeros((2, 2)).view(), MapKind::Energy, 100.0)
            .encode()
            .unwrap();
        bytes.pop();
        assert!(matches!(FeatureFile::decode(&bytes), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn too_many_channels_overflow() {
        let f = FeatureFile { kind: MapKind::Feature, frame_rate: 1.0, values: Array2::zeros((1, 70_000)) };
        assert!(matches!(f.encode(), Err(Error::DimensionOverflow { what: "n_channels", .. })));
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(1.0, 9), "1");
        assert_eq!(format_significant(0.1234567891, 9), "0.123456789");
        assert_eq!(format_significant(-2.5, 9), "-2.5");
        assert_eq!(format_significant(123456789.4, 9), "123456789");
        assert_eq!(format_significant(1.5e-9, 9), "1.5e-9");
        assert_eq!(format_significant(0.0, 9), "0");
    }

    #[test]
    fn csv_layout() {
        let m = ndarray::arr2(&[[1.0, 0.5], [0.25, 2.0]]);
        let mut buf = Vec::new();
        write_csv(m.view(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0.5\n0.25,2\n");
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            frames in 0usize..12,
            channels in 1usize..6,
            bits in proptest::collection::vec(any::<u32>(), 72),
        ) {
            let data: Vec<f32> = (0..frames * channels)
                .map(|k| {
                    let v = f32::from_bits(bits[k % bits.len()]);
                    if v.is_finite() { v } else { 0.0 }
                })
                .collect();
            let f = FeatureFile {
                kind: MapKind::Feature,
                frame_rate: 100.0,
                values: Array2::from_shape_vec((frames, channels), data).unwrap(),
            };
            let back = FeatureFile::decode(&f.encode().unwrap()).unwrap();
            let a: Vec<u32> = f.values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.frame_rate, 100.0);
        }
    }
}
