//! Sequential versus data-parallel execution of the hot paths. Built without
//! the `parallel` feature, both arms run sequentially.

use std::hint::black_box;

use aniso_surf::mfbs::CommonSampler;
use aniso_surf::regularity::{evaluation_grid, stencil_points};
use aniso_surf::{estimate_batch, generate_dataset_with, DesignLaw, Domain, Exec, FieldSpec, RegParams, SimConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn field() -> FieldSpec {
    let mut f = FieldSpec::isotropic(0.3, DesignLaw::grid(2, 2));
    f.eta2 = aniso_surf::ScalarField::constant(0.7);
    f
}

fn sheets(c: &mut Criterion) {
    let domain = Domain::unit_square_at_one();
    let pts = stencil_points(&evaluation_grid(&domain, 7, 0.05), 0.05);
    let sampler = CommonSampler::new(&field(), pts, 1e-10).unwrap();
    let mut g = c.benchmark_group("common_sampler_500_sheets");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| black_box(sampler.sheets(1, 0..500, exec))));
    }
    g.finish();
}

fn estimation(c: &mut Criterion) {
    let mut f = field();
    f.design = DesignLaw::grid(60, 60);
    let cfg = SimConfig { field: f, domain: Domain::unit_square_at_one(), n_sheets: 200, seed: 3, jitter: 1e-10 };
    let ds = generate_dataset_with(&cfg, Exec::default()).unwrap();
    let params = RegParams::new(0.05).with_tau(0.1);
    let targets = evaluation_grid(&cfg.domain, 7, params.delta);
    let mut g = c.benchmark_group("estimate_batch_49_points");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| black_box(estimate_batch(&ds, &targets, &params, exec).unwrap())));
    }
    g.finish();
}

fn independent(c: &mut Criterion) {
    let mut f = field();
    f.design = DesignLaw::independent(aniso_surf::DesignKind::IndependentUniform);
    let mut g = c.benchmark_group("independent_design_dataset");
    g.sample_size(10);
    for m in [50.0, 150.0] {
        f.mean_points_m = m;
        let cfg =
            SimConfig { field: f.clone(), domain: Domain::unit_square_at_one(), n_sheets: 64, seed: 0, jitter: 1e-10 };
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, m), &cfg, |b, cfg| {
                b.iter(|| black_box(generate_dataset_with(cfg, exec).unwrap()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, sheets, estimation, independent);
criterion_main!(benches);
