use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};

use scalewave_core::duhamel::{linear_grid, DuhamelStencil, StencilOptions};
use scalewave_core::kernel::{default_options, eval_kj};
use scalewave_core::propagator::{data_family, v0};
use scalewave_core::*;

fn params() -> ModelParams {
    ModelParams::new(4, 2.0, 1.72, 0.6, 1e-3).expect("admissible")
}

fn kernels(c: &mut Criterion) {
    let ks = build_hj(3, 2).expect("kernel");
    c.bench_function("kernel_eval_kj", |b| {
        b.iter(|| eval_kj(&ks, black_box(2.5), black_box(2.0), black_box(1.5), &default_options()))
    });
}

fn propagator(c: &mut Criterion) {
    let p = params();
    let fam = data_family(&p, p.kappa);
    let prop = Arc::new(Propagator::new(4).expect("propagator"));
    let sol = v0(Arc::new(fam.f), Arc::new(fam.g), prop);
    c.bench_function("linear_solution_value", |b| b.iter(|| sol.value(black_box(3.0), black_box(1.2))));
}

fn stencil(c: &mut Criterion) {
    let p = params();
    let spec = Arc::new(
        GridSpec::new(GridConfig {
            nt: 8,
            nr: 8,
            ..GridConfig::default()
        })
        .expect("grid"),
    );
    let st = DuhamelStencil::build(&p, spec.clone(), StencilOptions::default()).expect("stencil");
    let v = linear_grid(&p, p.kappa, spec.clone()).expect("linear grid");
    c.bench_function("stencil_apply_8x8", |b| b.iter(|| st.apply(black_box(&v))));
    let mut g = c.benchmark_group("stencil_build");
    g.sample_size(10);
    g.bench_function("8x8", |b| b.iter(|| DuhamelStencil::build(&p, spec.clone(), StencilOptions::default())));
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let cfg = FdConfig::free_wave(4, 8.0, 1.0 / 64.0, 2.0);
    let f = BumpProfile::new(2.0, 3.0, 1.0);
    let mut g = c.benchmark_group("fd_solve");
    g.sample_size(10);
    g.bench_function("free_wave_h64", |b| b.iter(|| fd_solve(&cfg, &f, &ZeroProfile)));
    g.finish();
}

criterion_group!(benches, kernels, propagator, stencil, oracle);
criterion_main!(benches);
