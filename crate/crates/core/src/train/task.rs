use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::augment::{build_corpus, AugmentSpec, NoisePool};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestRow, Split};
use crate::rng;
use crate::wav::write_wav;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Clean,
    /// Equal quarters of clean, babble, music and loudness-modulated clips.
    Complex,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clean" => Ok(Profile::Clean),
            "complex" => Ok(Profile::Complex),
            o => Err(Error::ConfigInvalid(format!("unknown profile '{o}'"))),
        }
    }
}

/// Synthetic classification task: AM tones whose class is the pair
/// (carrier, modulation rate).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTask {
    pub carriers_hz: Vec<f64>,
    pub am_rates_hz: Vec<f64>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub profile: Profile,
}

impl Default for SynthTask {
    fn default() -> Self {
        Self {
            carriers_hz: vec![500.0, 1000.0, 2000.0, 4000.0],
            am_rates_hz: vec![4.0, 16.0],
            train_per_class: 40,
            val_per_class: 10,
            test_per_class: 10,
            train_seconds: 1.0,
            test_seconds: 2.0,
            profile: Profile::Clean,
        }
    }
}

impl SynthTask {
    pub fn n_classes(&self) -> usize {
        self.carriers_hz.len() * self.am_rates_hz.len()
    }

    /// Carrier and modulation rate of a class.
    pub fn class_params(&self, label: usize) -> (f64, f64) {
        let r = self.am_rates_hz.len();
        (self.carriers_hz[label / r], self.am_rates_hz[label % r])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes() < 2 {
            return Err(Error::ConfigInvalid("task needs at least two classes".into()));
        }
        if self.train_per_class == 0 || self.val_per_class == 0 {
            return Err(Error::ConfigInvalid("train and val need at least one clip per class".into()));
        }
        if !(self.train_seconds > 0.0 && self.test_seconds > 0.0) {
            return Err(Error::ConfigInvalid("clip durations must be positive".into()));
        }
        if self.carriers_hz.iter().any(|&f| f <= 0.0 || f * 1.05 >= f64::from(SAMPLE_RATE) / 2.0) {
            return Err(Error::ConfigInvalid("carriers must sit below Nyquist".into()));
        }
        Ok(())
    }

    /// One clip of class `label`: jittered carrier and rate, random level,
    /// random phases, a low white-noise floor.
    pub fn synthesize(&self, label: usize, seconds: f64, seed: u64) -> AudioClip {
        let (fc, fm) = self.class_params(label);
        let mut r = rng::stream(seed, "task.clip");
        let fc = fc * r.gen_range(0.97..1.03);
        let fm = fm * r.gen_range(0.9..1.1);
        let amp = 10f64.powf(r.gen_range(-26.0..-6.0) / 20.0);
        let (pc, pm) = (r.gen_range(0.0..2.0 * PI), r.gen_range(0.0..2.0 * PI));
        let floor = 0.002;
        let n = (seconds * f64::from(SAMPLE_RATE)).round() as usize;
        let sr = f64::from(SAMPLE_RATE);
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                let env = 0.5 + 0.5 * (2.0 * PI * fm * t + pm).sin();
                amp * env * (2.0 * PI * fc * t + pc).sin() + floor * r.gen_range(-1.0..1.0)
            })
            .collect();
        AudioClip::new(samples, SAMPLE_RATE)
    }
}

fn write_split(task: &SynthTask, dir: &Path, seed: u64) -> Result<Manifest> {
    let mut rows = Vec::new();
    let mut k = 0u64;
    for (split, per_class, secs) in [
        (Split::Train, task.train_per_class, task.train_seconds),
        (Split::Val, task.val_per_class, task.train_seconds),
        (Split::Test, task.test_per_class, task.test_seconds),
    ] {
        std::fs::create_dir_all(dir.join(split.to_string()))?;
        for label in 0..task.n_classes() {
            for j in 0..per_class {
                let clip = task.synthesize(label, secs, rng::derive_seed(seed, "task.clip", k));
                let rel = PathBuf::from(split.to_string()).join(format!("c{label}_{j:04}.wav"));
                write_wav(&clip, dir.join(&rel))?;
                rows.push(ManifestRow { path: rel, label, split, condition: None });
                k += 1;
            }
        }
    }
    let m = Manifest::new(rows, dir);
    m.save(dir.join("manifest.csv"))?;
    Ok(m)
}

/// Writes the corpus under `out_dir` with `manifest.csv` at its root.
///
/// The complex profile first writes the clean corpus to `out_dir/source` and
/// then perturbs it with `pool` (a synthetic pool when `None`).
pub fn generate_task(task: &SynthTask, out_dir: impl AsRef<Path>, pool: Option<&NoisePool>, seed: u64) -> Result<Manifest> {
    task.validate()?;
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    match task.profile {
        Profile::Clean => write_split(task, out, seed),
        Profile::Complex => {
            let clean = write_split(task, &out.join("source"), seed)?;
            let owned;
            let pool = match pool {
                Some(p) => p,
                None => {
                    owned = NoisePool::synthetic(rng::derive_seed(seed, "task.pool", 0), 6, 3, 3.0)?;
                    &owned
                }
            };
            build_corpus(&clean, pool, out, &AugmentSpec::default(), rng::derive_seed(seed, "task.corpus", 0))
        }
    }
}
