use std::path::{Path, PathBuf};

use apcen_core::augment::{apply_condition, build_corpus, AugmentSpec, NoisePool};
use apcen_core::controller::gain_map;
use apcen_core::features::{save_csv, save_features, MapKind};
use apcen_core::frontend::Frontend;
use apcen_core::gradcheck::{self, Suite};
use apcen_core::train::{self, generate_task, Model, Normalizer, Profile, SynthTask, TrainConfig, Variant};
use apcen_core::{
    read_wav, write_wav, Condition, ControllerWeights, Error, FrontendConfig, Manifest, Split,
};
use clap::ValueEnum;
use ndarray::{concatenate, Axis};

use crate::args::*;
use crate::settings::Settings;

pub enum Failure {
    Usage(String),
    Core(Error),
    Gradients(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::ConfigInvalid(_)) => 2,
            Failure::Core(Error::Io(_)) => 3,
            Failure::Core(_) => 4,
            Failure::Gradients(_) => 5,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Gradients(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

pub type Outcome = std::result::Result<(), Failure>;

fn name_of<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

fn variant_of(v: VariantArg) -> Variant {
    match v {
        VariantArg::Fixed => Variant::Fixed,
        VariantArg::Pcen => Variant::Pcen,
        VariantArg::SimpPcen => Variant::SimpPcen,
        VariantArg::Apcen => Variant::Apcen,
    }
}

fn emit(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        println!("{k}={v}");
    }
}

fn frontend_config(s: &mut Settings, a: &FrontendArgs) -> Result<FrontendConfig, Failure> {
    let d = FrontendConfig::default();
    let cfg = FrontendConfig {
        n_filters: s.pick("n_filters", a.n_filters, d.n_filters)?,
        kernel_len: s.pick("kernel_len", a.kernel_len, d.kernel_len)?,
        hop: s.pick("hop", a.hop, d.hop)?,
        f_min: s.pick("f_min", a.f_min, d.f_min)?,
        f_max: s.pick("f_max", a.f_max, d.f_max)?,
        ..d
    };
    let cfg = FrontendConfig { pool_len: cfg.kernel_len, ..cfg };
    cfg.validate()?;
    Ok(cfg)
}

/// Normalization stage plus the front-end geometry it expects.
struct Pipeline {
    frontend: Frontend,
    norm: Normalizer,
}

fn load_pipeline(
    variant: Variant,
    checkpoint: Option<&Path>,
    fallback: FrontendConfig,
) -> Result<Pipeline, Failure> {
    let Some(path) = checkpoint else {
        if variant.is_trained() {
            return Err(Failure::Usage(format!("--checkpoint is required for --variant {variant}")));
        }
        let norm = Normalizer::initial(Variant::Fixed, fallback.n_filters, None, 0)?;
        return Ok(Pipeline { frontend: Frontend::new(&fallback)?, norm });
    };
    let bytes = std::fs::read(path).map_err(Error::from)?;
    if bytes.starts_with(&apcen_core::controller::CONTROLLER_MAGIC) {
        if variant != Variant::Apcen {
            return Err(Failure::Usage(format!("controller checkpoint given for --variant {variant}")));
        }
        let w = ControllerWeights::from_bytes(&bytes)?;
        let cfg = FrontendConfig { n_filters: w.config.channels, ..fallback };
        return Ok(Pipeline { frontend: Frontend::new(&cfg)?, norm: Normalizer::Apcen(w) });
    }
    let model = Model::from_bytes(&bytes)?;
    if model.variant != variant {
        return Err(Failure::Usage(format!(
            "checkpoint holds variant {} but --variant {variant} was requested",
            model.variant
        )));
    }
    Ok(Pipeline { frontend: Frontend::new(&model.frontend)?, norm: model.norm })
}

fn wav_inputs(input: &Path) -> Result<Vec<PathBuf>, Failure> {
    if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(Error::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        v.sort();
        Ok(v)
    } else if input.exists() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} not found", input.display()))).into())
    }
}

pub fn extract(s: &mut Settings, a: &ExtractArgs) -> Outcome {
    let variant = variant_of(s.pick_enum("variant", a.variant, VariantArg::Fixed)?);
    let format = s.pick_enum("format", a.format, OutFormat::Bin)?;
    let fallback = frontend_config(s, &a.frontend)?;
    if let Some(c) = &a.checkpoint {
        s.note("checkpoint", c.display());
    }
    let pipe = load_pipeline(variant, a.checkpoint.as_deref(), fallback)?;
    eprint!("{}", s.render());
    let inputs = wav_inputs(&a.input)?;
    let to_dir = a.input.is_dir();
    if to_dir {
        std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    }
    let ext = match format {
        OutFormat::Bin => "apcn",
        OutFormat::Csv => "csv",
    };
    let rate = pipe.frontend.config().frame_rate();
    for path in &inputs {
        let clip = read_wav(path)?;
        let e = pipe.frontend.energy(&clip)?;
        let (x, _) = pipe.norm.apply(e.view())?;
        let out = if to_dir {
            a.out.join(path.file_stem().unwrap_or_default()).with_extension(ext)
        } else {
            a.out.clone()
        };
        match format {
            OutFormat::Bin => save_features(x.view(), MapKind::Feature, rate, &out)?,
            OutFormat::Csv => save_csv(x.view(), &out)?,
        }
        emit(&[("file", out.display().to_string()), ("frames", x.nrows().to_string()), ("channels", x.ncols().to_string())]);
    }
    emit(&[("files", inputs.len().to_string())]);
    Ok(())
}

fn augment_spec(s: &mut Settings, a: &AugmentSpecArgs) -> Result<AugmentSpec, Failure> {
    let d = AugmentSpec::default();
    let spec = AugmentSpec {
        snr_range_db: (s.pick("snr_min", a.snr_min, d.snr_range_db.0)?, s.pick("snr_max", a.snr_max, d.snr_range_db.1)?),
        n_babble_sources: s.pick("babble_sources", a.babble_sources, d.n_babble_sources)?,
        gain_range_db: (s.pick("gain_min", a.gain_min, d.gain_range_db.0)?, s.pick("gain_max", a.gain_max, d.gain_range_db.1)?),
        segment_ms: s.pick("segment_ms", a.segment_ms, d.segment_ms)?,
        spl_bounds_dbfs: (s.pick("spl_min", a.spl_min, d.spl_bounds_dbfs.0)?, s.pick("spl_max", a.spl_max, d.spl_bounds_dbfs.1)?),
        crossfade_ms: s.pick("crossfade_ms", a.crossfade_ms, d.crossfade_ms)?,
        ..d
    };
    spec.validate()?;
    Ok(spec)
}

fn noise_pool(pool: Option<&Path>, seed: u64) -> Result<NoisePool, Failure> {
    match pool {
        Some(p) => Ok(NoisePool::from_dir(p)?),
        None => {
            log::warn!("no --pool given; using the synthetic speech/music stand-ins");
            Ok(NoisePool::synthetic(apcen_core::rng::derive_seed(seed, "cli.pool", 0), 6, 3, 3.0)?)
        }
    }
}

pub fn augment(s: &mut Settings, seed: u64, a: &AugmentArgs) -> Outcome {
    let spec = augment_spec(s, &a.spec)?;
    if let Some(p) = &a.pool {
        s.note("pool", p.display());
    }
    eprint!("{}", s.render());
    let pool = noise_pool(a.pool.as_deref(), seed)?;
    match (&a.manifest, &a.input, a.condition) {
        (Some(m), _, _) => {
            let manifest = Manifest::load(m)?;
            let out = build_corpus(&manifest, &pool, &a.out, &spec, seed)?;
            let mut counts = [0usize; 4];
            for r in &out.rows {
                if let Some(c) = r.condition {
                    counts[Condition::ALL.iter().position(|x| *x == c).unwrap()] += 1;
                }
            }
            emit(&[("clips", out.rows.len().to_string()), ("manifest", a.out.join("manifest.csv").display().to_string())]);
            for (c, n) in Condition::ALL.iter().zip(counts) {
                println!("{c}={n}");
            }
            Ok(())
        }
        (None, Some(input), Some(cond)) => {
            let clip = read_wav(input)?;
            let cond: Condition = name_of(&cond).parse()?;
            let out = apply_condition(&clip, cond, &pool, &spec, seed)?;
            let stats = write_wav(&out, &a.out)?;
            emit(&[("file", a.out.display().to_string()), ("condition", cond.to_string()), ("clipped", stats.clipped.to_string())]);
            Ok(())
        }
        _ => Err(Failure::Usage("augment needs --manifest, or --input with --condition".into())),
    }
}

pub fn synth_task(s: &mut Settings, seed: u64, a: &SynthTaskArgs) -> Outcome {
    let d = SynthTask::default();
    let profile: Profile = name_of(&s.pick_enum("profile", a.profile, ProfileArg::Clean)?).parse()?;
    let task = SynthTask {
        train_per_class: s.pick("train_per_class", a.train_per_class, d.train_per_class)?,
        val_per_class: s.pick("val_per_class", a.val_per_class, d.val_per_class)?,
        test_per_class: s.pick("test_per_class", a.test_per_class, d.test_per_class)?,
        train_seconds: s.pick("train_seconds", a.train_seconds, d.train_seconds)?,
        test_seconds: s.pick("test_seconds", a.test_seconds, d.test_seconds)?,
        profile,
        ..d
    };
    task.validate()?;
    eprint!("{}", s.render());
    let pool = match (profile, &a.pool) {
        (Profile::Complex, Some(p)) => Some(NoisePool::from_dir(p)?),
        _ => None,
    };
    let m = generate_task(&task, &a.out, pool.as_ref(), seed)?;
    emit(&[
        ("classes", task.n_classes().to_string()),
        ("clips", m.rows.len().to_string()),
        ("manifest", a.out.join("manifest.csv").display().to_string()),
    ]);
    Ok(())
}

pub fn train(s: &mut Settings, seed: u64, a: &TrainArgs) -> Outcome {
    let variant = variant_of(s.pick_enum("variant", a.variant, VariantArg::Apcen)?);
    let d = TrainConfig::desk(variant, seed);
    let cfg = TrainConfig {
        epochs: s.pick("epochs", a.epochs, d.epochs)?,
        batch_size: s.pick("batch_size", a.batch_size, d.batch_size)?,
        learning_rate: s.pick("learning_rate", a.learning_rate, d.learning_rate)?,
        weight_decay: s.pick("weight_decay", a.weight_decay, d.weight_decay)?,
        clip_seconds: s.pick("clip_seconds", a.clip_seconds, d.clip_seconds)?,
        controller_hidden: s.pick("controller_hidden", a.controller_hidden, d.controller_hidden)?,
        controller_mlp_hidden: s.pick("controller_mlp_hidden", a.controller_mlp_hidden, d.controller_mlp_hidden)?,
        backend_hidden: s.pick("backend_hidden", a.backend_hidden, d.backend_hidden)?,
        bptt_window: s.pick_opt("bptt_window", a.bptt_window)?,
        ..d
    };
    cfg.validate()?;
    let fe = frontend_config(s, &a.frontend)?;
    eprint!("{}", s.render());
    let manifest = Manifest::load(&a.manifest)?;
    let out = train::train(&cfg, &fe, &manifest, Some(&a.out))?;
    let last = out.history.last().expect("at least one epoch");
    emit(&[
        ("epochs", out.history.len().to_string()),
        ("first_train_loss", out.history[0].train_loss.to_string()),
        ("final_train_loss", last.train_loss.to_string()),
        ("best_epoch", out.best_epoch.to_string()),
        ("best_val_loss", out.best_val_loss.to_string()),
        ("checkpoint", a.out.join("best.ckpt").display().to_string()),
        ("history", a.out.join("history.csv").display().to_string()),
    ]);
    Ok(())
}

pub fn eval(s: &mut Settings, a: &EvalArgs) -> Outcome {
    let split: Split = name_of(&s.pick_enum("split", a.split, SplitArg::Test)?).parse()?;
    let window = s.pick("window_seconds", a.window_seconds, 1.0f64)?;
    s.note("checkpoint", a.checkpoint.display());
    eprint!("{}", s.render());
    let model = Model::load(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let rep = train::evaluate_manifest(&model, &manifest, split, window)?;
    emit(&[("variant", model.variant.to_string()), ("clips", rep.labels.len().to_string()), ("accuracy", rep.accuracy.to_string())]);
    if let Some(((alo, ahi), (glo, ghi))) = rep.exponent_range {
        emit(&[("alpha_min", alo.to_string()), ("alpha_max", ahi.to_string()), ("gamma_min", glo.to_string()), ("gamma_max", ghi.to_string())]);
    }
    Ok(())
}

pub fn gradcheck(s: &mut Settings, seed: u64, a: &GradcheckArgs) -> Outcome {
    let module = s.pick_enum("module", a.module, ModuleArg::All)?;
    let d = gradcheck::Options::default();
    let opts = gradcheck::Options {
        seed,
        instances: s.pick("instances", a.instances, d.instances)?,
        step: s.pick("step", a.step, d.step)?,
        inject_fault: a.inject_fault,
        ..d
    };
    if opts.instances == 0 || !(opts.step > 0.0) {
        return Err(Failure::Usage("--instances must be ≥ 1 and --step positive".into()));
    }
    eprint!("{}", s.render());
    let suites: Vec<Suite> = match module {
        ModuleArg::All => Suite::ALL.to_vec(),
        ModuleArg::Pcen => vec![Suite::Pcen],
        ModuleArg::Simp => vec![Suite::Simp],
        ModuleArg::Controller => vec![Suite::Controller],
        ModuleArg::E2e => vec![Suite::E2e],
    };
    let mut failed = Vec::new();
    for suite in suites {
        for g in gradcheck::run(suite, &opts)? {
            println!("{}.max_rel_err={:e}", g.group, g.max_rel_err);
            if g.skipped > 0 {
                eprintln!("{}: {} of {} coordinates skipped at kinks", g.group, g.skipped, g.checked + g.skipped);
            }
            for f in &g.failures {
                eprintln!(
                    "FAIL {} instance {} coord {}: analytic {:e} numeric {:e} rel {:e}",
                    g.group, f.instance, f.coord, f.analytic, f.numeric, f.rel_err
                );
            }
            if !g.passed() {
                failed.push(g.group.clone());
            }
        }
    }
    println!("passed={}", failed.is_empty());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gradients(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn default_trajectory_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "gain".into());
    out.with_file_name(format!("{stem}_trajectory.csv"))
}

pub fn inspect_gain(s: &mut Settings, a: &InspectGainArgs) -> Outcome {
    s.note("checkpoint", a.checkpoint.display());
    let traj_path = a.trajectory_out.clone().unwrap_or_else(|| default_trajectory_path(&a.out));
    eprint!("{}", s.render());
    let pipe = load_pipeline(Variant::Apcen, Some(&a.checkpoint), FrontendConfig::default())?;
    let clip = read_wav(&a.input)?;
    let e = pipe.frontend.energy(&clip)?;
    let (x, traj) = pipe.norm.apply(e.view())?;
    let traj = traj.expect("adaptive normalizer yields a trajectory");
    save_csv(gain_map(e.view(), x.view())?.view(), &a.out)?;
    let both = concatenate(Axis(1), &[traj.alpha.view(), traj.gamma.view()]).expect("equal frame counts");
    save_csv(both.view(), &traj_path)?;
    emit(&[
        ("frames", x.nrows().to_string()),
        ("channels", x.ncols().to_string()),
        ("gain", a.out.display().to_string()),
        ("trajectory", traj_path.display().to_string()),
    ]);
    Ok(())
}

pub fn info(s: &mut Settings, a: &InfoArgs) -> Outcome {
    let mut fe = frontend_config(s, &a.frontend)?;
    eprint!("{}", s.render());
    if let Some(path) = &a.checkpoint {
        let bytes = std::fs::read(path).map_err(Error::from)?;
        if bytes.starts_with(&apcen_core::controller::CONTROLLER_MAGIC) {
            let w = ControllerWeights::from_bytes(&bytes)?;
            let c = &w.config;
            emit(&[
                ("kind", "controller".into()),
                ("channels", c.channels.to_string()),
                ("hidden", c.hidden.to_string()),
                ("mlp_hidden", c.mlp_hidden.to_string()),
                ("params", w.param_count().to_string()),
            ]);
            return Ok(());
        }
        let m = Model::from_bytes(&bytes)?;
        let params: usize = m.trainable_blocks().iter().map(|b| b.len()).sum();
        emit(&[("kind", "model".into()), ("variant", m.variant.to_string()), ("classes", m.classes().to_string()), ("trainable_params", params.to_string())]);
        fe = m.frontend.clone();
    }
    let fb = apcen_core::design_filterbank(&fe)?;
    let ctl = apcen_core::ControllerConfig::new(fe.n_filters);
    let ctl_params = ControllerWeights::zeros(ctl)?.param_count();
    let centers: Vec<String> = fb.centers().iter().map(|c| format!("{c:.3}")).collect();
    emit(&[
        ("n_filters", fe.n_filters.to_string()),
        ("kernel_len", fe.gabor_len().to_string()),
        ("hop", fe.hop.to_string()),
        ("frame_rate", fe.frame_rate().to_string()),
        ("frames_per_second_of_audio", fe.n_frames(fe.sample_rate as usize).to_string()),
        ("controller_params_default", ctl_params.to_string()),
        ("centers_hz", centers.join(",")),
    ]);
    Ok(())
}
