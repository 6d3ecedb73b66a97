//! Adaptive per-channel energy normalization front-end.
//!
//! Audio is decomposed by a fixed mel-spaced Gabor filterbank and Gaussian
//! pooling into subband energies, then normalized by PCEN variants. The
//! adaptive variant lets a small recurrent controller pick the two
//! normalization exponents for every frame and channel.

pub mod audio;
pub mod augment;
pub mod config;
pub mod controller;
pub mod error;
pub mod features;
pub mod frontend;
pub mod gradcheck;
pub mod manifest;
pub mod norm;
pub mod rng;
pub mod train;
pub mod wav;

pub use audio::{synth_clip, AudioClip, SynthKind, SAMPLE_RATE};
pub use controller::{
    apcen_backward, apcen_forward_tape, apcen_process, controller_frame, ControllerConfig, ControllerState,
    ControllerWeights, OutputMode, ParamTrajectory, SequenceAxis,
};
pub use error::{Error, Result};
pub use features::{load_features, save_features, FeatureFile, MapKind};
pub use frontend::{design_filterbank, EnergyMap, Frontend, FrontendConfig, GaborFilterbank};
pub use manifest::{Condition, Manifest, ManifestRow, Split};
pub use norm::{FeatureMap, PcenParams, SimpPcenParams};
pub use wav::{read_wav, write_wav};
pub use train::{Model, TrainConfig, Variant};
