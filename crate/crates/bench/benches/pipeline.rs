use apcen_bench::{controller, energy, speechlike_clip};
use apcen_core::controller::{apcen_backward, apcen_forward_tape, apcen_process};
use apcen_core::frontend::{decompose, decompose_direct, design_filterbank, Frontend, FrontendConfig};
use apcen_core::norm::{pcen_forward, simp_pcen_forward, PcenParams, SimpPcenParams};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

fn frontend(c: &mut Criterion) {
    let cfg = FrontendConfig::default();
    let fb = design_filterbank(&cfg).unwrap();
    let mut g = c.benchmark_group("gabor_decompose");
    g.sample_size(10);
    for secs in [0.1, 1.0] {
        let clip = speechlike_clip(secs);
        g.bench_with_input(BenchmarkId::new("fft", secs), &clip, |b, clip| b.iter(|| decompose(black_box(clip), &fb)));
        g.bench_with_input(BenchmarkId::new("direct", secs), &clip, |b, clip| {
            b.iter(|| decompose_direct(black_box(clip), &fb))
        });
    }
    g.finish();

    let fe = Frontend::new(&cfg).unwrap();
    let clip = speechlike_clip(1.0);
    c.bench_function("energy_1s", |b| b.iter(|| fe.energy(black_box(&clip))));
}

fn normalization(c: &mut Criterion) {
    let e = energy(1.0);
    let n = e.ncols();
    let pcen = PcenParams::init(n);
    let simp = SimpPcenParams::init(n);
    c.bench_function("pcen_1s", |b| b.iter(|| pcen_forward(black_box(e.view()), &pcen)));
    c.bench_function("simp_pcen_1s", |b| b.iter(|| simp_pcen_forward(black_box(e.view()), &simp, None)));
}

fn adaptive(c: &mut Criterion) {
    let e = energy(1.0);
    let mut g = c.benchmark_group("apcen_1s");
    g.sample_size(10);
    for hidden in [8, 32] {
        let w = controller(hidden);
        g.bench_with_input(BenchmarkId::new("forward", hidden), &w, |b, w| b.iter(|| apcen_process(black_box(e.view()), w)));
        let (x, _, tape) = apcen_forward_tape(e.view(), &w).unwrap();
        let upstream = Array2::from_elem(x.dim(), 1.0 / x.len() as f64);
        g.bench_with_input(BenchmarkId::new("backward", hidden), &w, |b, w| {
            b.iter(|| apcen_backward(black_box(&tape), w, upstream.view(), None))
        });
    }
    g.finish();
}

criterion_group!(benches, frontend, normalization, adaptive);
criterion_main!(benches);
