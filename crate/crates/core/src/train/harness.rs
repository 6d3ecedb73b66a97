use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::backend::cross_entropy;
use super::model::{Model, ModelTape, Variant};
use crate::audio::AudioClip;
use crate::config::parse_value;
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::frontend::{EnergyMap, Frontend, FrontendConfig};
use crate::manifest::{Manifest, Split};
use crate::rng;
use crate::wav::read_wav;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_seconds: f64,
    pub variant: Variant,
    pub seed: u64,
    pub controller_hidden: usize,
    pub controller_mlp_hidden: usize,
    pub backend_hidden: usize,
    /// Truncation window for backpropagation through the adaptive loop.
    pub bptt_window: Option<usize>,
}

impl Default for TrainConfig {
    /// Full-scale protocol values.
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 256,
            epochs: 150,
            clip_seconds: 1.0,
            variant: Variant::Apcen,
            seed: 0,
            controller_hidden: 32,
            controller_mlp_hidden: 32,
            backend_hidden: 64,
            bptt_window: None,
        }
    }
}

impl TrainConfig {
    /// Single-CPU scale: smaller batches, fewer epochs, a narrower controller
    /// and a larger step size to compensate for the few updates.
    pub fn desk(variant: Variant, seed: u64) -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 32,
            epochs: 30,
            variant,
            seed,
            controller_hidden: 8,
            controller_mlp_hidden: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1");
        }
        if !(self.clip_seconds > 0.0) {
            return bad("clip_seconds must be positive");
        }
        if self.controller_hidden == 0 || self.controller_mlp_hidden == 0 || self.backend_hidden == 0 {
            return bad("layer widths must be at least 1");
        }
        if self.bptt_window == Some(0) {
            return bad("bptt_window must be at least 1");
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" | "lr" => self.learning_rate = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "clip_seconds" => self.clip_seconds = parse_value(key, value)?,
            "variant" => self.variant = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "controller_hidden" => self.controller_hidden = parse_value(key, value)?,
            "controller_mlp_hidden" => self.controller_mlp_hidden = parse_value(key, value)?,
            "backend_hidden" => self.backend_hidden = parse_value(key, value)?,
            "bptt_window" => {
                self.bptt_window = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            _ => return Err(Error::ConfigInvalid(format!("unknown training key '{key}'"))),
        }
        Ok(())
    }

    /// Applies every known key of `kv`, leaving the others for the caller.
    pub fn merge(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            if Self::KEYS.contains(&k.as_str()) {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 12] = [
        "learning_rate",
        "lr",
        "weight_decay",
        "batch_size",
        "epochs",
        "clip_seconds",
        "variant",
        "seed",
        "controller_hidden",
        "controller_mlp_hidden",
        "backend_hidden",
        "bptt_window",
    ];

    /// Resolved settings as `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let window = self.bptt_window.map_or("none".to_string(), |w| w.to_string());
        for (k, v) in [
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("clip_seconds", self.clip_seconds.to_string()),
            ("variant", self.variant.to_string()),
            ("seed", self.seed.to_string()),
            ("controller_hidden", self.controller_hidden.to_string()),
            ("controller_mlp_hidden", self.controller_mlp_hidden.to_string()),
            ("backend_hidden", self.backend_hidden.to_string()),
            ("bptt_window", window),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn controller_config(&self, channels: usize) -> ControllerConfig {
        ControllerConfig::new(channels).with_sizes(self.controller_hidden, self.controller_mlp_hidden)
    }

    pub fn initial_model(&self, frontend: &FrontendConfig, classes: usize) -> Result<Model> {
        self.validate()?;
        let ctl = (self.variant == Variant::Apcen).then(|| self.controller_config(frontend.n_filters));
        Model::new(frontend.clone(), self.variant, classes, ctl, self.backend_hidden, self.seed)
    }

    fn clip_len(&self, frontend: &FrontendConfig) -> usize {
        (self.clip_seconds * f64::from(frontend.sample_rate)).round() as usize
    }
}

/// Clips of one split with their labels.
#[derive(Clone, Debug)]
pub struct ClipSet {
    pub clips: Vec<AudioClip>,
    pub labels: Vec<usize>,
}

impl ClipSet {
    pub fn load(manifest: &Manifest, split: Split) -> Result<Self> {
        let rows: Vec<_> = manifest.split(split).collect();
        let clips = rows.par_iter().map(|r| read_wav(manifest.resolve(r))).collect::<Result<Vec<_>>>()?;
        Ok(Self { clips, labels: rows.iter().map(|r| r.label).collect() })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// Fixed-length crop (zero-padded when the clip is shorter).
pub fn crop(clip: &AudioClip, len: usize, start: usize) -> AudioClip {
    clip.window(start, len)
}

/// Non-overlapping windows of `len` samples; a clip shorter than one window
/// yields a single zero-padded window.
pub fn windows(clip: &AudioClip, len: usize) -> Vec<AudioClip> {
    let n = clip.len() / len;
    if n == 0 {
        return vec![clip.window(0, len)];
    }
    (0..n).map(|k| clip.window(k * len, len)).collect()
}

/// Mean cross-entropy and logits of a batch of fixed-length clips.
pub fn forward_loss(
    model: &Model,
    frontend: &Frontend,
    clips: &[AudioClip],
    labels: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let energies = clips.par_iter().map(|c| frontend.energy(c)).collect::<Result<Vec<_>>>()?;
    let (loss, logits, _) = forward_batch(model, &energies, labels)?;
    Ok((loss, logits))
}

/// Forward values of a batch plus the logit gradients of its mean loss.
#[derive(Clone, Debug)]
pub struct BatchTape {
    tapes: Vec<ModelTape>,
    g_logits: Vec<Vec<f64>>,
}

pub fn forward_batch(model: &Model, energies: &[EnergyMap], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>, BatchTape)> {
    if energies.len() != labels.len() || energies.is_empty() {
        return Err(Error::ConfigInvalid("batch needs matching, non-empty clips and labels".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= model.classes()) {
        return Err(Error::ConfigInvalid(format!("label {l} outside {} classes", model.classes())));
    }
    let per: Vec<(Vec<f64>, ModelTape)> =
        energies.par_iter().map(|e| model.forward_tape(e.view())).collect::<Result<_>>()?;
    let b = energies.len() as f64;
    let mut loss = 0.0;
    let mut logits = Vec::with_capacity(per.len());
    let mut tapes = Vec::with_capacity(per.len());
    let mut g_logits = Vec::with_capacity(per.len());
    for ((lg, tape), &label) in per.into_iter().zip(labels) {
        let (l, g) = cross_entropy(&lg, label);
        loss += l;
        g_logits.push(g.into_iter().map(|v| v / b).collect());
        logits.push(lg);
        tapes.push(tape);
    }
    Ok((loss / b, logits, BatchTape { tapes, g_logits }))
}

/// Gradient of the batch mean loss, reduced in batch order.
pub fn batch_gradient(model: &Model, tape: &BatchTape, bptt_window: Option<usize>) -> Result<Model> {
    let parts: Vec<Model> = tape
        .tapes
        .par_iter()
        .zip(&tape.g_logits)
        .map(|(t, g)| {
            let mut grad = model.zeros_like();
            model.backward(t, g, &mut grad, bptt_window)?;
            Ok(grad)
        })
        .collect::<Result<_>>()?;
    let mut total = model.zeros_like();
    for p in &parts {
        total.add_assign(p);
    }
    Ok(total)
}

/// Backward pass, one optimizer step on the trainable blocks, projection.
pub fn backward_and_step(model: &mut Model, tape: &BatchTape, opt: &mut Adam, bptt_window: Option<usize>) -> Result<()> {
    let grad = batch_gradient(model, tape, bptt_window)?;
    apply_step(model, &grad, opt);
    Ok(())
}

pub fn apply_step(model: &mut Model, grad: &Model, opt: &mut Adam) {
    opt.step(model.trainable_blocks_mut(), grad.trainable_blocks());
    model.project();
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Weights at the epoch with the lowest validation loss.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub last: Model,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
    }
    s
}

/// Window energies of every clip, computed once.
fn window_energies(frontend: &Frontend, clips: &[AudioClip], len: usize) -> Result<Vec<Vec<EnergyMap>>> {
    clips
        .par_iter()
        .map(|c| windows(c, len).iter().map(|w| frontend.energy(w)).collect::<Result<Vec<_>>>())
        .collect()
}

fn averaged_logits(model: &Model, windows: &[EnergyMap]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.classes()];
    for e in windows {
        let lg = model.logits(e.view())?;
        acc.iter_mut().zip(&lg).for_each(|(a, l)| *a += l);
    }
    let k = windows.len() as f64;
    Ok(acc.into_iter().map(|a| a / k).collect())
}

fn windowed_loss(model: &Model, set: &[Vec<EnergyMap>], labels: &[usize]) -> Result<f64> {
    let losses: Vec<f64> = set
        .par_iter()
        .zip(labels)
        .map(|(w, &l)| averaged_logits(model, w).map(|lg| cross_entropy(&lg, l).0))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Trains on the train split, selects the epoch with the lowest validation
/// loss, and writes `history.csv` and `best.ckpt` into `out_dir` if given.
pub fn train(
    config: &TrainConfig,
    frontend_config: &FrontendConfig,
    manifest: &Manifest,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = ClipSet::load(manifest, Split::Train)?;
    let val_set = ClipSet::load(manifest, Split::Val)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Manifest("train and val splits must both be non-empty".into()));
    }
    train_on(config, frontend_config, manifest.n_classes(), &train_set, &val_set, out_dir)
}

pub fn train_on(
    config: &TrainConfig,
    frontend_config: &FrontendConfig,
    classes: usize,
    train_set: &ClipSet,
    val_set: &ClipSet,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let frontend = Frontend::new(frontend_config)?;
    let mut model = config.initial_model(frontend_config, classes)?;
    let len = config.clip_len(frontend_config);
    // Clips no longer than one crop always yield the same padded crop.
    let fixed: Vec<Option<EnergyMap>> = train_set
        .clips
        .par_iter()
        .map(|c| if c.len() <= len { frontend.energy(&crop(c, len, 0)).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    let val_windows = window_energies(&frontend, &val_set.clips, len)?;
    let mut opt = Adam::new(config.learning_rate, config.weight_decay);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        let mut r = rng::indexed_stream(config.seed, "train.epoch", epoch as u64);
        order.shuffle(&mut r);
        let starts: Vec<usize> =
            order.iter().map(|&i| r.gen_range(0..=train_set.clips[i].len().saturating_sub(len))).collect();
        let mut loss_sum = 0.0;
        for (chunk, chunk_starts) in order.chunks(config.batch_size).zip(starts.chunks(config.batch_size)) {
            let energies: Vec<EnergyMap> = chunk
                .par_iter()
                .zip(chunk_starts)
                .map(|(&i, &s)| match &fixed[i] {
                    Some(e) => Ok(e.clone()),
                    None => frontend.energy(&crop(&train_set.clips[i], len, s)),
                })
                .collect::<Result<_>>()?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, _, tape) = forward_batch(&model, &energies, &labels)?;
            loss_sum += loss * chunk.len() as f64;
            backward_and_step(&mut model, &tape, &mut opt, config.bptt_window)?;
        }
        if !model.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = windowed_loss(&model, &val_windows, &val_set.labels)?;
        log::info!("epoch {epoch}: train_loss={train_loss:.6} val_loss={val_loss:.6}");
        history.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("history.csv"), history_csv(&history))?;
        best.2.save(dir.join("best.ckpt"))?;
    }
    Ok(TrainOutcome { history, best: best.2, best_epoch: best.1, best_val_loss: best.0, last: model })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Smallest and largest predicted (α̂, γ̂) seen, adaptive variant only.
    pub exponent_range: Option<((f64, f64), (f64, f64))>,
}

/// Top-1 accuracy with logits averaged over non-overlapping windows of
/// `window_seconds`.
pub fn evaluate(model: &Model, clips: &ClipSet, window_seconds: f64) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let frontend = Frontend::new(&model.frontend)?;
    let len = (window_seconds * f64::from(model.frontend.sample_rate)).round() as usize;
    type ClipResult = (usize, Option<((f64, f64), (f64, f64))>);
    let per: Vec<ClipResult> = clips
        .clips
        .par_iter()
        .map(|c| {
            let mut acc = vec![0.0; model.classes()];
            let mut range: Option<((f64, f64), (f64, f64))> = None;
            let ws = windows(c, len);
            for w in &ws {
                let e = frontend.energy(w)?;
                let (x, traj) = model.normalize(e.view())?;
                let lg = model.backend.forward(x.view())?.0;
                acc.iter_mut().zip(&lg).for_each(|(a, l)| *a += l);
                if let Some(t) = traj {
                    let mm = |a: &ndarray::Array2<f64>| a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                    let (al, gl) = (mm(&t.alpha), mm(&t.gamma));
                    range = Some(match range {
                        None => (al, gl),
                        Some((a, g)) => ((a.0.min(al.0), a.1.max(al.1)), (g.0.min(gl.0), g.1.max(gl.1))),
                    });
                }
            }
            Ok((argmax(&acc), range))
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<usize> = per.iter().map(|p| p.0).collect();
    let correct = predictions.iter().zip(&clips.labels).filter(|(p, l)| p == l).count();
    let exponent_range = per.iter().filter_map(|p| p.1).reduce(|a, b| {
        ((a.0 .0.min(b.0 .0), a.0 .1.max(b.0 .1)), (a.1 .0.min(b.1 .0), a.1 .1.max(b.1 .1)))
    });
    Ok(EvalReport {
        accuracy: correct as f64 / clips.len() as f64,
        predictions,
        labels: clips.labels.clone(),
        exponent_range,
    })
}

pub fn evaluate_manifest(model: &Model, manifest: &Manifest, split: Split, window_seconds: f64) -> Result<EvalReport> {
    evaluate(model, &ClipSet::load(manifest, split)?, window_seconds)
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windowing_arithmetic() {
        let c = AudioClip::new(vec![1.0; 32000], 16000);
        assert_eq!(windows(&c, 16000).len(), 2);
        let c = AudioClip::new(vec![1.0; 31999], 16000);
        assert_eq!(windows(&c, 16000).len(), 1);
        let short = windows(&AudioClip::new(vec![1.0; 100], 16000), 16000);
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].len(), 16000);
        assert_eq!(short[0].samples[100], 0.0);
    }

    #[test]
    fn config_keys_round_trip() {
        let mut c = TrainConfig::desk(Variant::Pcen, 4);
        let kv = crate::config::parse_kv(&c.to_kv()).unwrap();
        let mut d = TrainConfig::default();
        d.merge(&kv).unwrap();
        assert_eq!(c, d);
        c.set("bptt_window", "5").unwrap();
        assert_eq!(c.bptt_window, Some(5));
        assert!(c.set("nonsense", "1").is_err());
        assert!(c.set("epochs", "x").is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = TrainConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_picks_first_maximum() {
        assert_eq!(argmax(&[0.0, 2.0, 2.0, 1.0]), 1);
    }
}
