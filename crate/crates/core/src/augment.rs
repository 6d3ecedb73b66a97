//! Complex-acoustic-condition generation: babble and music mixing at a
//! random SNR, segment-wise loudness changes, and balanced corpus assembly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::audio::{mean_square, synth_clip, AudioClip, SynthKind, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::manifest::{Condition, Manifest, ManifestRow, Split};
use crate::rng::{self, StreamRng};
use crate::wav::{read_wav, write_wav};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub snr_range_db: (f64, f64),
    pub n_babble_sources: usize,
    pub gain_range_db: (f64, f64),
    pub segment_ms: f64,
    pub spl_bounds_dbfs: (f64, f64),
    pub crossfade_ms: f64,
    /// RMS the summed babble is normalized to before mixing.
    pub babble_rms: f64,
    /// Redraws of an out-of-bounds segment gain before clamping.
    pub max_redraws: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            snr_range_db: (0.0, 15.0),
            n_babble_sources: 3,
            gain_range_db: (-8.0, 8.0),
            segment_ms: 250.0,
            spl_bounds_dbfs: (-40.0, -15.0),
            crossfade_ms: 5.0,
            babble_rms: 0.1,
            max_redraws: 8,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.snr_range_db.0 > self.snr_range_db.1 || self.gain_range_db.0 > self.gain_range_db.1 {
            return bad("ranges must be non-empty");
        }
        if self.segment_ms <= 0.0 {
            return bad("segment_ms must be positive");
        }
        if self.spl_bounds_dbfs.0 >= self.spl_bounds_dbfs.1 {
            return bad("spl lower bound must be below the upper bound");
        }
        if self.crossfade_ms < 0.0 || self.crossfade_ms >= self.segment_ms {
            return bad("crossfade must be shorter than a segment");
        }
        if self.n_babble_sources == 0 {
            return bad("babble needs at least one source");
        }
        Ok(())
    }

    fn segment_len(&self) -> usize {
        ms_to_samples(self.segment_ms).max(1)
    }
}

fn ms_to_samples(ms: f64) -> usize {
    (ms * f64::from(SAMPLE_RATE) / 1000.0).round() as usize
}

fn draw(r: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        r.gen_range(lo..=hi)
    }
}

/// `20·log10(RMS)`.
pub fn measure_rms_dbfs(samples: &[f64]) -> Result<f64> {
    let ms = mean_square(samples);
    if ms == 0.0 {
        return Err(Error::SilentClip);
    }
    Ok(10.0 * ms.log10())
}

/// Loops or crops `noise` to `len` samples starting at a random offset.
pub fn fit_length<R: Rng>(noise: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    if noise.is_empty() {
        return vec![0.0; len];
    }
    if noise.len() >= len {
        let start = rng.gen_range(0..=noise.len() - len);
        noise[start..start + len].to_vec()
    } else {
        let start = rng.gen_range(0..noise.len());
        (0..len).map(|j| noise[(start + j) % noise.len()]).collect()
    }
}

/// Clean signal plus noise at a requested SNR, with its components kept.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub mix: AudioClip,
    /// Clean component after any peak normalization.
    pub clean: Vec<f64>,
    /// Scaled noise component after any peak normalization.
    pub noise: Vec<f64>,
    /// Factor applied to the fitted noise to reach the requested SNR.
    pub noise_scale: f64,
    /// Factor applied to everything to keep peaks within ±1 (1.0 if unused).
    pub peak_factor: f64,
}

impl Mixture {
    /// SNR recomputed from the stored components.
    pub fn achieved_snr_db(&self) -> f64 {
        10.0 * (mean_square(&self.clean) / mean_square(&self.noise)).log10()
    }
}

pub fn mix_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64, seed: u64) -> Result<Mixture> {
    let p_clean = clean.mean_square();
    if p_clean == 0.0 || noise.mean_square() == 0.0 {
        return Err(Error::SilentClip);
    }
    let mut r = rng::stream(seed, "augment.mix.offset");
    let fitted = fit_length(&noise.samples, clean.len(), &mut r);
    let p_noise = mean_square(&fitted);
    if p_noise == 0.0 {
        return Err(Error::SilentClip);
    }
    let noise_scale = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut noise_part: Vec<f64> = fitted.iter().map(|n| n * noise_scale).collect();
    let mut clean_part = clean.samples.clone();
    let mut mix: Vec<f64> = clean_part.iter().zip(&noise_part).map(|(c, n)| c + n).collect();
    let peak = mix.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let mut peak_factor = 1.0;
    if peak > 1.0 {
        peak_factor = 1.0 / peak;
        for v in mix.iter_mut().chain(clean_part.iter_mut()).chain(noise_part.iter_mut()) {
            *v *= peak_factor;
        }
    }
    Ok(Mixture { mix: AudioClip::new(mix, clean.sample_rate), clean: clean_part, noise: noise_part, noise_scale, peak_factor })
}

/// Interference sources, tagged speech or music.
#[derive(Clone, Debug, Default)]
pub struct NoisePool {
    pub speech: Vec<AudioClip>,
    pub music: Vec<AudioClip>,
}

impl NoisePool {
    pub fn new(speech: Vec<AudioClip>, music: Vec<AudioClip>) -> Result<Self> {
        for c in speech.iter().chain(&music) {
            c.require_pipeline_rate()?;
            if c.len() < SAMPLE_RATE as usize {
                return Err(Error::ConfigInvalid(format!("noise source of {} samples is shorter than 1 s", c.len())));
            }
        }
        Ok(Self { speech, music })
    }

    /// Loads `<dir>/speech/*.wav` and `<dir>/music/*.wav`, sorted by name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let load = |sub: &str| -> Result<Vec<AudioClip>> {
            let d = dir.as_ref().join(sub);
            if !d.is_dir() {
                return Ok(Vec::new());
            }
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&d)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            paths.sort();
            paths.iter().map(read_wav).collect()
        };
        Self::new(load("speech")?, load("music")?)
    }

    /// Stand-in pool: amplitude-modulated noise for speech, stepped tone
    /// complexes for music.
    pub fn synthetic(seed: u64, n_speech: usize, n_music: usize, seconds: f64) -> Result<Self> {
        let mut speech = Vec::with_capacity(n_speech);
        for k in 0..n_speech {
            let mut r = rng::indexed_stream(seed, "pool.speech", k as u64);
            let kind = SynthKind::AmNoise { am_rate: r.gen_range(3.0..6.0), amplitude: 0.5 };
            speech.push(synth_clip(kind, seconds, rng::derive_seed(seed, "pool.speech.noise", k as u64))?);
        }
        let mut music = Vec::with_capacity(n_music);
        let note = (0.5 * f64::from(SAMPLE_RATE)) as usize;
        for k in 0..n_music {
            let mut r = rng::indexed_stream(seed, "pool.music", k as u64);
            let total = (seconds * f64::from(SAMPLE_RATE)).round() as usize;
            let mut samples = Vec::with_capacity(total);
            while samples.len() < total {
                let f0 = 110.0 * 2f64.powf(r.gen_range(0..36) as f64 / 12.0);
                let tone = synth_clip(SynthKind::ToneComplex { freq: f0, amplitude: 0.5 }, 0.5, 0)?;
                samples.extend_from_slice(&tone.samples[..note.min(total - samples.len())]);
            }
            music.push(AudioClip::new(samples, SAMPLE_RATE));
        }
        Self::new(speech, music)
    }
}

/// Sum of distinct speech sources at random offsets, RMS-normalized.
pub fn make_babble(pool: &NoisePool, len: usize, spec: &AugmentSpec, seed: u64) -> Result<AudioClip> {
    let need = spec.n_babble_sources;
    if pool.speech.len() < need {
        return Err(Error::PoolTooSmall { kind: "speech", have: pool.speech.len(), need });
    }
    let mut r = rng::stream(seed, "augment.babble");
    let picks = rand::seq::index::sample(&mut r, pool.speech.len(), need);
    let mut sum = vec![0.0; len];
    for idx in picks.iter() {
        let part = fit_length(&pool.speech[idx].samples, len, &mut r);
        sum.iter_mut().zip(part).for_each(|(s, p)| *s += p);
    }
    let rms = mean_square(&sum).sqrt();
    if rms == 0.0 {
        return Err(Error::SilentClip);
    }
    let g = spec.babble_rms / rms;
    Ok(AudioClip::new(sum.into_iter().map(|s| s * g).collect(), SAMPLE_RATE))
}

/// Segment boundaries `[start, end)` for loudness modulation.
pub fn segments(n: usize, spec: &AugmentSpec) -> Vec<(usize, usize)> {
    let len = spec.segment_len();
    (0..n.div_ceil(len)).map(|k| (k * len, ((k + 1) * len).min(n))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Modulated {
    pub clip: AudioClip,
    /// Final flat gain of each segment in dB.
    pub gains_db: Vec<f64>,
}

fn gain_curve(n: usize, segs: &[(usize, usize)], gains_db: &[f64], fade: usize) -> Vec<f64> {
    let amp: Vec<f64> = gains_db.iter().map(|g| 10f64.powf(g / 20.0)).collect();
    let mut curve = vec![0.0; n];
    for (k, &(a, b)) in segs.iter().enumerate() {
        curve[a..b].fill(amp[k]);
    }
    if fade > 0 {
        let half = fade / 2;
        for k in 1..segs.len() {
            let boundary = segs[k].0;
            let lo = boundary.saturating_sub(half);
            let hi = (boundary + (fade - half)).min(n);
            let span = (hi - lo) as f64;
            for (j, c) in curve[lo..hi].iter_mut().enumerate() {
                let w = (j as f64 + 0.5) / span;
                *c = (1.0 - w) * amp[k - 1] + w * amp[k];
            }
        }
    }
    curve
}

/// Distance kept from the SPL bounds so that PCM16 quantization of the
/// output cannot push a segment across them.
pub const SPL_MARGIN_DB: f64 = 1e-3;

/// Random per-segment gains keeping every non-silent segment inside the SPL
/// bounds, joined by short linear crossfades.
pub fn loudness_modulate(clip: &AudioClip, spec: &AugmentSpec, seed: u64) -> Result<Modulated> {
    spec.validate()?;
    let seg_len = spec.segment_len();
    if clip.len() < seg_len {
        return Err(Error::ClipTooShort { len: clip.len(), needed: seg_len });
    }
    if clip.mean_square() == 0.0 {
        return Err(Error::SilentClip);
    }
    let (lo, hi) = spec.spl_bounds_dbfs;
    let x = &clip.samples;
    let segs = segments(x.len(), spec);
    let levels: Vec<Option<f64>> = segs.iter().map(|&(a, b)| measure_rms_dbfs(&x[a..b]).ok()).collect();
    let peaks: Vec<f64> = segs.iter().map(|&(a, b)| x[a..b].iter().fold(0.0f64, |m, s| m.max(s.abs()))).collect();
    let mut r = rng::stream(seed, "augment.loudness");
    let mut gains: Vec<f64> = Vec::with_capacity(segs.len());
    for (k, level) in levels.iter().enumerate() {
        let mut g = draw(&mut r, spec.gain_range_db);
        if let Some(level) = level {
            let ok = |g: f64| (lo..=hi).contains(&(level + g));
            let mut tries = 0;
            while !ok(g) && tries < spec.max_redraws {
                g = draw(&mut r, spec.gain_range_db);
                tries += 1;
            }
            g = g.clamp(lo - level + SPL_MARGIN_DB, hi - level - SPL_MARGIN_DB);
            if peaks[k] > 0.0 {
                g = g.min(-20.0 * peaks[k].log10());
            }
        }
        gains.push(g);
    }
    let fade = ms_to_samples(spec.crossfade_ms);
    // Crossfades leak neighbour gains into a segment; nudge until each
    // non-silent segment sits inside the bounds.
    let margin = SPL_MARGIN_DB;
    let mut curve = gain_curve(x.len(), &segs, &gains, fade);
    for _ in 0..50 {
        let mut adjusted = false;
        for (k, &(a, b)) in segs.iter().enumerate() {
            if levels[k].is_none() {
                continue;
            }
            let seg: Vec<f64> = (a..b).map(|j| x[j] * curve[j]).collect();
            let level = measure_rms_dbfs(&seg)?;
            if level > hi {
                gains[k] -= level - hi + margin;
                adjusted = true;
            } else if level < lo {
                gains[k] += lo - level + margin;
                adjusted = true;
            }
        }
        if !adjusted {
            break;
        }
        curve = gain_curve(x.len(), &segs, &gains, fade);
    }
    let samples = x.iter().zip(&curve).map(|(s, c)| (s * c).clamp(-1.0, 1.0)).collect();
    Ok(Modulated { clip: AudioClip::new(samples, clip.sample_rate), gains_db: gains })
}

/// Applies one acoustic condition to a clip.
pub fn apply_condition(
    clip: &AudioClip,
    condition: Condition,
    pool: &NoisePool,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<AudioClip> {
    let mut r = rng::stream(seed, "augment.condition");
    match condition {
        Condition::Clean => Ok(clip.clone()),
        Condition::Babble => {
            let babble = make_babble(pool, clip.len(), spec, rng::derive_seed(seed, "augment.babble", 0))?;
            let snr = draw(&mut r, spec.snr_range_db);
            Ok(mix_at_snr(clip, &babble, snr, rng::derive_seed(seed, "augment.mix", 0))?.mix)
        }
        Condition::Music => {
            if pool.music.is_empty() {
                return Err(Error::PoolTooSmall { kind: "music", have: 0, need: 1 });
            }
            let src = &pool.music[r.gen_range(0..pool.music.len())];
            let snr = draw(&mut r, spec.snr_range_db);
            Ok(mix_at_snr(clip, src, snr, rng::derive_seed(seed, "augment.mix", 1))?.mix)
        }
        Condition::Loudness => Ok(loudness_modulate(clip, spec, rng::derive_seed(seed, "augment.gain", 0))?.clip),
    }
}

/// Balanced condition assignment: within each (class, split group) clips are
/// shuffled and conditions dealt round-robin from a random start, so counts
/// per class differ by at most one. Train and validation share one group;
/// test clips form their own.
pub fn assign_conditions(manifest: &Manifest, seed: u64) -> Vec<Condition> {
    let mut groups: BTreeMap<(usize, bool), Vec<usize>> = BTreeMap::new();
    let mut order: Vec<(usize, Split, usize)> =
        manifest.rows.iter().enumerate().map(|(i, r)| (r.label, r.split, i)).collect();
    order.sort();
    for (label, split, i) in order {
        groups.entry((label, split == Split::Test)).or_default().push(i);
    }
    let mut out = vec![Condition::Clean; manifest.rows.len()];
    for ((label, test), idx) in groups {
        let mut r = rng::indexed_stream(seed, if test { "corpus.assign.test" } else { "corpus.assign" }, label as u64);
        // Shuffle within each split, keeping train before val.
        let mut by_split: BTreeMap<Split, Vec<usize>> = BTreeMap::new();
        for i in idx {
            by_split.entry(manifest.rows[i].split).or_default().push(i);
        }
        let start = r.gen_range(0..Condition::ALL.len());
        let mut j = start;
        for (_, mut rows) in by_split {
            rows.shuffle(&mut r);
            for i in rows {
                out[i] = Condition::ALL[j % Condition::ALL.len()];
                j += 1;
            }
        }
    }
    out
}

/// Writes a perturbed copy of every clip under `out_dir` and returns (and
/// saves as `manifest.csv`) the manifest with a condition column.
pub fn build_corpus(
    manifest: &Manifest,
    pool: &NoisePool,
    out_dir: impl AsRef<Path>,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    for split in [Split::Train, Split::Val, Split::Test] {
        std::fs::create_dir_all(out_dir.join(split.to_string()))?;
    }
    let conditions = assign_conditions(manifest, seed);
    let rows: Vec<ManifestRow> = manifest
        .rows
        .par_iter()
        .enumerate()
        .map(|(k, row)| {
            let clip = read_wav(manifest.resolve(row))?;
            let cond = conditions[k];
            let out = apply_condition(&clip, cond, pool, spec, rng::derive_seed(seed, "corpus.clip", k as u64))?;
            let rel = PathBuf::from(row.split.to_string()).join(format!("{k:05}_{}_{cond}.wav", row.label));
            write_wav(&out, out_dir.join(&rel))?;
            Ok(ManifestRow { path: rel, label: row.label, split: row.split, condition: Some(cond) })
        })
        .collect::<Result<_>>()?;
    let m = Manifest::new(rows, out_dir);
    m.save(out_dir.join("manifest.csv"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(amp: f64, secs: f64) -> AudioClip {
        synth_clip(SynthKind::Sine { freq: 440.0, amplitude: amp }, secs, 0).unwrap()
    }

    #[test]
    fn dbfs_reference_levels() {
        assert!((measure_rms_dbfs(&[1.0, -1.0, 1.0, -1.0]).unwrap()).abs() < 1e-12);
        let s = tone(1.0, 1.0);
        assert!((measure_rms_dbfs(&s.samples).unwrap() + 3.0103).abs() < 1e-3);
        assert!(matches!(measure_rms_dbfs(&[0.0; 10]), Err(Error::SilentClip)));
    }

    #[test]
    fn equal_power_at_zero_db_keeps_noise_scale() {
        let clean = AudioClip::new(vec![0.1, -0.1, 0.1, -0.1], SAMPLE_RATE);
        let noise = AudioClip::new(vec![-0.1, 0.1, 0.1, -0.1], SAMPLE_RATE);
        let m = mix_at_snr(&clean, &noise, 0.0, 1).unwrap();
        assert!((m.noise_scale - 1.0).abs() < 1e-12);
        let m = mix_at_snr(&clean, &noise, 15.0, 1).unwrap();
        assert!((m.noise_scale - 0.177_827_941).abs() < 1e-8);
        assert!((m.achieved_snr_db() - 15.0).abs() < 1e-9);
    }

    #[test]
    fn peak_normalization_preserves_snr() {
        let clean = tone(0.9, 0.5);
        let noise = synth_clip(SynthKind::WhiteNoise { amplitude: 1.0 }, 0.5, 3).unwrap();
        let m = mix_at_snr(&clean, &noise, 0.0, 4).unwrap();
        assert!(m.peak_factor < 1.0);
        assert!(m.mix.peak() <= 1.0);
        assert!((m.achieved_snr_db()).abs() < 1e-9);
    }

    #[test]
    fn silent_inputs_rejected() {
        let s = AudioClip::silence(100);
        assert!(matches!(mix_at_snr(&s, &tone(0.1, 0.01), 5.0, 0), Err(Error::SilentClip)));
        assert!(matches!(mix_at_snr(&tone(0.1, 0.01), &s, 5.0, 0), Err(Error::SilentClip)));
    }

    #[test]
    fn babble_uses_forced_selection_and_is_normalized() {
        let pool = NoisePool::synthetic(5, 3, 1, 1.5).unwrap();
        let spec = AugmentSpec::default();
        let b = make_babble(&pool, 16000, &spec, 9).unwrap();
        assert!((b.rms() - 0.1).abs() < 1e-6);
        assert_eq!(b, make_babble(&pool, 16000, &spec, 9).unwrap());
        let small = NoisePool::new(pool.speech[..2].to_vec(), vec![]).unwrap();
        assert!(matches!(make_babble(&small, 100, &spec, 0), Err(Error::PoolTooSmall { .. })));
    }

    #[test]
    fn one_second_has_four_segments() {
        let spec = AugmentSpec::default();
        let segs = segments(16000, &spec);
        assert_eq!(segs.len(), 4);
        assert_eq!(segs.len() - 1, 3);
    }

    #[test]
    fn zero_gain_range_is_identity_for_in_bounds_input() {
        let clip = tone(0.05, 1.0); // about -29 dBFS
        let spec = AugmentSpec { gain_range_db: (0.0, 0.0), ..Default::default() };
        let out = loudness_modulate(&clip, &spec, 3).unwrap();
        for (a, b) in out.clip.samples.iter().zip(&clip.samples) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn segments_land_inside_spl_bounds() {
        let spec = AugmentSpec::default();
        for seed in 0..20 {
            let clip = synth_clip(SynthKind::AmNoise { am_rate: 4.0, amplitude: 0.9 }, 1.3, seed).unwrap();
            let out = loudness_modulate(&clip, &spec, seed).unwrap();
            for (a, b) in segments(out.clip.len(), &spec) {
                let l = measure_rms_dbfs(&out.clip.samples[a..b]).unwrap();
                assert!((-40.0..=-15.0).contains(&l), "seed {seed}: {l}");
            }
        }
    }

    #[test]
    fn assignment_is_balanced_per_class() {
        let rows = (0..8)
            .map(|i| ManifestRow { path: format!("{i}.wav").into(), label: i % 2, split: Split::Train, condition: None })
            .collect();
        let m = Manifest::new(rows, "");
        let conds = assign_conditions(&m, 11);
        for label in 0..2 {
            let mut seen: Vec<Condition> =
                (0..8).filter(|i| i % 2 == label).map(|i| conds[i]).collect();
            seen.sort();
            assert_eq!(seen, Condition::ALL.to_vec());
        }
    }
}
