//! Central finite-difference checks of the analytic gradients.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use crate::controller::{apcen_backward, apcen_forward_tape, ControllerConfig, ControllerWeights};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::norm::{pcen_backward, pcen_forward_tape, simp_pcen_backward, simp_pcen_forward_tape, PcenParams, SimpPcenParams};
use crate::rng::{self, StreamRng};
use crate::train::{cross_entropy, Model, Variant};

/// Denominator floor of the relative error, so that near-zero gradients are
/// compared on an absolute scale. Central differences at step 1e-6 carry
/// about 1e-9 of rounding noise on unit-scale losses.
pub const REL_FLOOR: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-6;
/// One-sided differences disagreeing by more than this fraction mark a
/// coordinate whose ±step interval may straddle a ReLU kink.
pub const KINK_TOL: f64 = 1e-3;
/// Largest fraction of kink-skipped coordinates a group may have and pass.
pub const MAX_SKIP_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Pcen,
    Simp,
    Controller,
    E2e,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Pcen, Suite::Simp, Suite::Controller, Suite::E2e];

    pub fn threshold(self) -> f64 {
        match self {
            Suite::E2e => 1e-3,
            _ => 1e-4,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Pcen => "pcen",
            Suite::Simp => "simp",
            Suite::Controller => "controller",
            Suite::E2e => "e2e",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcen" => Ok(Suite::Pcen),
            "simp" => Ok(Suite::Simp),
            "controller" => Ok(Suite::Controller),
            "e2e" => Ok(Suite::E2e),
            o => Err(Error::ConfigInvalid(format!("unknown gradcheck module '{o}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub seed: u64,
    pub instances: usize,
    pub step: f64,
    /// Coordinates sampled per parameter group and instance.
    pub coords: usize,
    /// Scales every analytic gradient by 1.01 (negative control).
    pub inject_fault: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self { seed: 0, instances: 50, step: DEFAULT_STEP, coords: 10, inject_fault: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub instance: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub suite: Suite,
    pub group: String,
    pub checked: usize,
    /// Coordinates left out because the difference interval crosses a kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && (self.skipped as f64) <= MAX_SKIP_FRACTION * (self.checked + self.skipped) as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type LossFn<'a> = Box<dyn Fn(&[Vec<f64>]) -> Result<f64> + 'a>;
type GradFn<'a> = Box<dyn Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>> + 'a>;

/// A scalar loss over named flat parameter groups.
struct Problem<'a> {
    names: Vec<String>,
    params: Vec<Vec<f64>>,
    loss: LossFn<'a>,
    grad: GradFn<'a>,
}

#[derive(Default)]
struct Tally {
    groups: Vec<GroupReport>,
}

impl Tally {
    fn group(&mut self, suite: Suite, name: &str) -> &mut GroupReport {
        let i = match self.groups.iter().position(|g| g.group == name) {
            Some(i) => i,
            None => {
                self.groups.push(GroupReport { suite, group: name.into(), checked: 0, skipped: 0, max_rel_err: 0.0, failures: vec![] });
                self.groups.len() - 1
            }
        };
        &mut self.groups[i]
    }
}

fn check(problem: &Problem, suite: Suite, instance: usize, opts: &Options, r: &mut StreamRng, tally: &mut Tally) -> Result<()> {
    let mut analytic = (problem.grad)(&problem.params)?;
    if opts.inject_fault {
        analytic.iter_mut().flatten().for_each(|g| *g *= 1.01);
    }
    let base = (problem.loss)(&problem.params)?;
    for (gi, name) in problem.names.iter().enumerate() {
        let len = problem.params[gi].len();
        if len == 0 {
            continue;
        }
        let picks = rand::seq::index::sample(r, len, opts.coords.min(len));
        for c in picks.iter() {
            let mut p = problem.params.clone();
            let x0 = p[gi][c];
            p[gi][c] = x0 + opts.step;
            let up = (problem.loss)(&p)?;
            p[gi][c] = x0 - opts.step;
            let down = (problem.loss)(&p)?;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[gi][c];
            let rel = relative_error(a, numeric);
            let g = tally.group(suite, name);
            if rel > suite.threshold() && at_kink(a, (up - base) / opts.step, (base - down) / opts.step, suite.threshold()) {
                g.skipped += 1;
                continue;
            }
            g.checked += 1;
            g.max_rel_err = g.max_rel_err.max(rel);
            if rel > suite.threshold() || !rel.is_finite() {
                g.failures.push(Mismatch { instance, coord: c, analytic: a, numeric, rel_err: rel });
            }
        }
    }
    Ok(())
}

/// True when the one-sided slopes jump (a ReLU switching inside the
/// difference interval) and the analytic value lies between them, i.e. it is
/// one of the one-sided derivatives rather than wrong.
fn at_kink(analytic: f64, fwd: f64, bwd: f64, tol: f64) -> bool {
    let jump = (fwd - bwd).abs() > KINK_TOL * fwd.abs().max(bwd.abs()).max(REL_FLOOR);
    let slack = tol * analytic.abs().max(REL_FLOOR);
    jump && analytic >= fwd.min(bwd) - slack && analytic <= fwd.max(bwd) + slack
}

fn energy(r: &mut StreamRng, frames: usize, channels: usize) -> Array2<f64> {
    Array2::from_shape_fn((frames, channels), |_| r.gen_range(0.05..2.0))
}

fn weighted(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (y * w).sum()
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn unflat(v: &[f64], dim: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(dim, v.to_vec()).expect("flat length matches shape")
}

fn pcen_problem(r: &mut StreamRng) -> Problem<'static> {
    let (t, n) = (5, 3);
    let e = energy(r, t, n);
    let w = Array2::from_shape_fn((t, n), |_| r.gen_range(-1.0..1.0));
    let p = PcenParams {
        s: (0..n).map(|_| r.gen_range(0.02..0.5)).collect(),
        alpha: (0..n).map(|_| r.gen_range(0.5..0.99)).collect(),
        delta: (0..n).map(|_| r.gen_range(0.5..3.0)).collect(),
        gamma: (0..n).map(|_| r.gen_range(0.3..0.9)).collect(),
        eps: 1e-6,
    };
    let build = move |v: &[Vec<f64>]| -> (PcenParams, Array2<f64>) {
        (
            PcenParams { s: v[0].clone(), alpha: v[1].clone(), delta: v[2].clone(), gamma: v[3].clone(), eps: 1e-6 },
            unflat(&v[4], (t, n)),
        )
    };
    let w2 = w.clone();
    Problem {
        names: ["s", "alpha", "delta", "gamma", "energy"].map(|s| format!("pcen.{s}")).into(),
        params: vec![p.s.clone(), p.alpha.clone(), p.delta.clone(), p.gamma.clone(), flat(&e)],
        loss: Box::new(move |v| {
            let (p, e) = build(v);
            Ok(weighted(&pcen_forward_tape(e.view(), &p)?.0, &w))
        }),
        grad: Box::new(move |v| {
            let (p, e) = build(v);
            let (_, tape) = pcen_forward_tape(e.view(), &p)?;
            let g = pcen_backward(&tape, &p, w2.view())?;
            Ok(vec![g.s, g.alpha, g.delta, g.gamma, flat(&g.e)])
        }),
    }
}

fn simp_problem(r: &mut StreamRng) -> Problem<'static> {
    let (t, n) = (8, 3);
    let e = energy(r, t, n);
    let w = Array2::from_shape_fn((t, n), |_| r.gen_range(-1.0..1.0));
    let alpha: Vec<f64> = (0..n).map(|_| r.gen_range(0.2..0.9)).collect();
    let gamma: Vec<f64> = (0..n).map(|_| r.gen_range(0.2..1.0)).collect();
    let build = move |v: &[Vec<f64>]| -> (SimpPcenParams, Array2<f64>) {
        let mut p = SimpPcenParams::init(n);
        p.alpha = v[0].clone();
        p.gamma = v[1].clone();
        (p, unflat(&v[2], (t, n)))
    };
    let w2 = w.clone();
    Problem {
        names: ["alpha", "gamma", "energy"].map(|s| format!("simp.{s}")).into(),
        params: vec![alpha, gamma, flat(&e)],
        loss: Box::new(move |v| {
            let (p, e) = build(v);
            Ok(weighted(&simp_pcen_forward_tape(e.view(), &p, None)?.0, &w))
        }),
        grad: Box::new(move |v| {
            let (p, e) = build(v);
            let (_, tape) = simp_pcen_forward_tape(e.view(), &p, None)?;
            let g = simp_pcen_backward(&tape, w2.view())?;
            let (ga, gg) = g.per_channel();
            Ok(vec![ga, gg, flat(&g.e)])
        }),
    }
}

fn set_blocks(w: &mut ControllerWeights, v: &[Vec<f64>]) {
    for (b, src) in w.blocks_mut().into_iter().zip(v) {
        b.copy_from_slice(src);
    }
}

fn controller_problem(r: &mut StreamRng, seed: u64) -> Result<Problem<'static>> {
    let (t, n) = (4, 3);
    let cfg = ControllerConfig::new(n).with_sizes(4, 4);
    let base = ControllerWeights::init(cfg, seed)?;
    let e = energy(r, t, n);
    let w = Array2::from_shape_fn((t, n), |_| r.gen_range(-1.0..1.0));
    let params: Vec<Vec<f64>> = base.blocks().iter().map(|b| b.to_vec()).collect();
    let names = base.block_names().into_iter().map(|b| format!("controller.{b}")).collect();
    let (b1, b2) = (base.clone(), base);
    let (e2, w2) = (e.clone(), w.clone());
    Ok(Problem {
        names,
        params,
        loss: Box::new(move |v| {
            let mut cw = b1.clone();
            set_blocks(&mut cw, v);
            Ok(weighted(&apcen_forward_tape(e.view(), &cw)?.0, &w))
        }),
        grad: Box::new(move |v| {
            let mut cw = b2.clone();
            set_blocks(&mut cw, v);
            let (_, _, tape) = apcen_forward_tape(e2.view(), &cw)?;
            let g = apcen_backward(&tape, &cw, w2.view(), None)?;
            Ok(g.blocks().iter().map(|b| b.to_vec()).collect())
        }),
    })
}

fn set_model(m: &mut Model, v: &[Vec<f64>]) {
    for (b, src) in m.trainable_blocks_mut().into_iter().zip(v) {
        b.copy_from_slice(src);
    }
}

fn e2e_problem(r: &mut StreamRng, variant: Variant, seed: u64) -> Result<Problem<'static>> {
    let (t, n, classes) = (10, 4, 3);
    let frontend = FrontendConfig { n_filters: n, ..Default::default() };
    let ctl = ControllerConfig::new(n).with_sizes(4, 4);
    let model = Model::new(frontend, variant, classes, Some(ctl), 6, seed)?;
    let e = energy(r, t, n);
    let label = r.gen_range(0..classes);
    let params: Vec<Vec<f64>> = model.trainable_blocks().iter().map(|b| b.to_vec()).collect();
    let names = model.trainable_block_names().into_iter().map(|b| format!("{variant}:{b}")).collect();
    let (m1, m2) = (model.clone(), model);
    let e2 = e.clone();
    Ok(Problem {
        names,
        params,
        loss: Box::new(move |v| {
            let mut m = m1.clone();
            set_model(&mut m, v);
            Ok(cross_entropy(&m.logits(e.view())?, label).0)
        }),
        grad: Box::new(move |v| {
            let mut m = m2.clone();
            set_model(&mut m, v);
            let (lg, tape) = m.forward_tape(e2.view())?;
            let (_, g) = cross_entropy(&lg, label);
            let mut grad = m.zeros_like();
            m.backward(&tape, &g, &mut grad, None)?;
            Ok(grad.trainable_blocks().iter().map(|b| b.to_vec()).collect())
        }),
    })
}

/// Runs one suite over `opts.instances` random instances.
pub fn run(suite: Suite, opts: &Options) -> Result<Vec<GroupReport>> {
    let mut tally = Tally::default();
    for k in 0..opts.instances {
        let inst_seed = rng::derive_seed(opts.seed, &format!("gradcheck.{suite}"), k as u64);
        let mut r = rng::stream(inst_seed, "instance");
        let problems = match suite {
            Suite::Pcen => vec![pcen_problem(&mut r)],
            Suite::Simp => vec![simp_problem(&mut r)],
            Suite::Controller => vec![controller_problem(&mut r, inst_seed)?],
            Suite::E2e => [Variant::Fixed, Variant::Pcen, Variant::SimpPcen, Variant::Apcen]
                .into_iter()
                .map(|v| e2e_problem(&mut r, v, inst_seed))
                .collect::<Result<_>>()?,
        };
        for p in &problems {
            check(p, suite, k, opts, &mut r, &mut tally)?;
        }
    }
    Ok(tally.groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(inject_fault: bool) -> Options {
        Options { instances: 3, inject_fault, ..Default::default() }
    }

    #[test]
    fn all_suites_pass_on_few_instances() {
        for s in Suite::ALL {
            for g in run(s, &quick(false)).unwrap() {
                assert!(g.passed(), "{s} {}: {:?}", g.group, g.failures.first());
            }
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let groups = run(Suite::Simp, &quick(true)).unwrap();
        assert!(groups.iter().any(|g| !g.passed()));
    }

    #[test]
    fn kink_test_needs_a_jump_bracketing_the_analytic_value() {
        assert!(at_kink(-1.6e-2, -2.3e-2, -1.6e-2, 1e-3));
        assert!(!at_kink(-1.0e-2, -2.3e-2, -1.6e-2, 1e-3));
        assert!(!at_kink(1.0, 1.0 + 1e-9, 1.0 - 1e-9, 1e-4));
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-9, 0.0) < 1e-4);
    }
}
