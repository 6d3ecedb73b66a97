use apcen_core::features::{FeatureFile, MapKind};
use apcen_core::{read_wav, synth_clip, write_wav, AudioClip, SynthKind, SAMPLE_RATE};
use ndarray::Array2;
use proptest::prelude::*;

const STEP: f64 = 1.0 / 32768.0;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wav_round_trip_within_one_quantization_step(samples in prop::collection::vec(-1.0f64..1.0, 1..2000)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&AudioClip::new(samples.clone(), SAMPLE_RATE), &path).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() <= STEP, "{} vs {}", a, b);
        }
    }

    #[test]
    fn feature_round_trip_is_bit_exact(
        bits in prop::collection::vec(any::<u32>(), 1..200),
        channels in 1usize..6,
        rate in 1.0f64..1000.0,
    ) {
        let values: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).filter(|v| v.is_finite()).collect();
        let frames = values.len() / channels;
        prop_assume!(frames > 0);
        let values = Array2::from_shape_vec((frames, channels), values[..frames * channels].to_vec()).unwrap();
        let file = FeatureFile { kind: MapKind::Feature, frame_rate: rate, values };
        let back = FeatureFile::decode(&file.encode().unwrap()).unwrap();
        prop_assert_eq!(back.kind, file.kind);
        prop_assert_eq!(back.frame_rate.to_bits(), file.frame_rate.to_bits());
        let same = back.values.iter().zip(file.values.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}

#[test]
fn denormals_and_zeros_survive_the_feature_file() {
    let values = Array2::from_shape_vec((2, 3), vec![0.0, -0.0, f32::MIN_POSITIVE / 4.0, 1e-45, f32::MAX, -1.5]).unwrap();
    let file = FeatureFile { kind: MapKind::Energy, frame_rate: 100.0, values };
    let back = FeatureFile::decode(&file.encode().unwrap()).unwrap();
    for (a, b) in back.values.iter().zip(file.values.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn synth_clip_is_pure() {
    let kinds = [
        SynthKind::Sine { freq: 440.0, amplitude: 0.5 },
        SynthKind::AmTone { freq: 1000.0, am_rate: 4.0, amplitude: 0.3 },
        SynthKind::ToneComplex { freq: 220.0, amplitude: 0.3 },
        SynthKind::WhiteNoise { amplitude: 0.1 },
        SynthKind::AmNoise { am_rate: 5.0, amplitude: 0.2 },
        SynthKind::Silence,
    ];
    for kind in kinds {
        let a = synth_clip(kind, 0.25, 11).unwrap();
        let b = synth_clip(kind, 0.25, 11).unwrap();
        assert_eq!(a, b, "{kind:?}");
        assert_eq!(a.len(), 4000);
    }
}

#[test]
fn truncated_wav_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    write_wav(&AudioClip::silence(1600), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..20]).unwrap();
    assert!(read_wav(&path).is_err());
}
