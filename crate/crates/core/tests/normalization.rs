use apcen_core::controller::{apcen_process, ControllerConfig, ControllerWeights};
use apcen_core::frontend::{design_filterbank, hz_to_mel, mel_to_hz, Frontend, FrontendConfig};
use apcen_core::norm::{ema_smooth, pcen_apply, simp_pcen_forward, PcenParams, SimpPcenParams};
use apcen_core::{synth_clip, AudioClip, SynthKind};
use ndarray::Array2;
use proptest::prelude::*;

fn small_frontend() -> Frontend {
    Frontend::new(&FrontendConfig { n_filters: 8, ..Default::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn energy_scales_by_exactly_c_squared(seed in any::<u64>(), k in -3i32..4) {
        let clip = synth_clip(SynthKind::WhiteNoise { amplitude: 0.2 }, 0.1, seed).unwrap();
        let c = 2f64.powi(k);
        let fe = small_frontend();
        let base = fe.energy(&clip).unwrap();
        let scaled = fe.energy(&clip.scaled(c)).unwrap();
        for (a, b) in base.iter().zip(scaled.iter()) {
            prop_assert!(*a >= 0.0);
            prop_assert_eq!(a * c * c, *b);
        }
    }

    #[test]
    fn ema_contracts_toward_a_constant(c in 0.0f64..10.0, init in 0.0f64..10.0, s in 0.001f64..1.0, t in 1usize..60) {
        let e = Array2::from_elem((t, 1), c);
        let m = ema_smooth(e.view(), &[s], &[init]).unwrap();
        for (n, &v) in m.column(0).iter().enumerate() {
            let bound = (1.0 - s).powi(n as i32 + 1) * (init - c).abs();
            let roundoff = 4.0 * f64::EPSILON * (n + 1) as f64 * c.max(init);
            prop_assert!((v - c).abs() <= bound + roundoff);
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn adaptive_output_is_a_pure_function(seed in 0u64..1000, t in 1usize..20, n in 1usize..6) {
        let w = ControllerWeights::init(ControllerConfig::new(n).with_sizes(3, 3), seed).unwrap();
        let e = Array2::from_shape_fn((t, n), |(i, j)| ((i * 7 + j * 3 + seed as usize) % 11) as f64 * 0.3);
        let a = apcen_process(e.view(), &w).unwrap();
        let b = apcen_process(e.view(), &w).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn constant_input_compresses_to_two_percent_of_its_db_range() {
    let mut p = SimpPcenParams::init(1);
    p.eps = 0.0;
    let levels = [1e-4, 1e-2, 1.0, 1e2];
    let out: Vec<f64> = levels
        .iter()
        .map(|&c| simp_pcen_forward(Array2::from_elem((5, 1), c).view(), &p, None).unwrap()[[4, 0]])
        .collect();
    let db = |v: f64| 10.0 * v.log10();
    let in_range = db(levels[3]) - db(levels[0]);
    let out_range = db(out[3]) - db(out[0]);
    assert!((out_range / in_range - 0.02).abs() < 1e-9, "{out_range} / {in_range}");
}

#[test]
fn pcen_is_zero_where_energy_and_smoother_are_zero() {
    let mut p = PcenParams::init(2);
    p.delta = vec![0.0; 2];
    let e = Array2::zeros((3, 2));
    let out = pcen_apply(e.view(), e.view(), &p).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn sine_at_a_channel_center_peaks_in_that_channel() {
    let cfg = FrontendConfig::default();
    let fe = Frontend::new(&cfg).unwrap();
    let centers = design_filterbank(&cfg).unwrap().centers();
    for i in [5usize, 20, 35] {
        let tone = synth_clip(SynthKind::Sine { freq: centers[i], amplitude: 0.5 }, 0.3, 0).unwrap();
        let e = fe.energy(&tone).unwrap();
        let mean = e.mean_axis(ndarray::Axis(0)).unwrap();
        let best = mean.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert_eq!(best, i);
    }
}

#[test]
fn mel_scale_round_trips() {
    for f in [0.0, 100.0, 1000.0, 7999.0] {
        assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
    }
}

#[test]
fn silence_gives_zero_energy() {
    let e = small_frontend().energy(&AudioClip::silence(1600)).unwrap();
    assert_eq!(e.dim(), (10, 8));
    assert!(e.iter().all(|&v| v == 0.0));
}
