//! Shared inputs for the benchmarks.

use apcen_core::controller::{ControllerConfig, ControllerWeights};
use apcen_core::frontend::{EnergyMap, Frontend, FrontendConfig};
use apcen_core::{synth_clip, AudioClip, SynthKind};

pub fn speechlike_clip(seconds: f64) -> AudioClip {
    synth_clip(SynthKind::AmNoise { am_rate: 4.0, amplitude: 0.3 }, seconds, 0).expect("valid synth parameters")
}

pub fn energy(seconds: f64) -> EnergyMap {
    let fe = Frontend::new(&FrontendConfig::default()).expect("default front-end");
    fe.energy(&speechlike_clip(seconds)).expect("16 kHz clip")
}

pub fn controller(hidden: usize) -> ControllerWeights {
    let cfg = ControllerConfig::new(FrontendConfig::default().n_filters).with_sizes(hidden, hidden);
    ControllerWeights::init(cfg, 0).expect("valid controller config")
}
