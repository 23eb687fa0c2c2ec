//! Kinetic steps on the worker pool against a single thread.
//!
//! With `--no-default-features` both arms run the sequential code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fhnlab::harness::RunConfig;

fn bench_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("kinetic_step");
    group.sample_size(10);
    for n in [64usize, 128] {
        let mut config = RunConfig::default();
        config.grid.n_v = n;
        config.grid.n_w = n;
        let setup = config.setup().unwrap();
        let model = setup.model;
        let start = model.initialize_well_prepared(&setup.v0, &setup.w0, config.initial.sigma_w).unwrap();
        let dt = config.schedule.dt;

        group.bench_with_input(BenchmarkId::new("pool", n), &n, |b, _| {
            let mut s = start.clone();
            b.iter(|| model.step(&mut s, dt).unwrap());
        });

        #[cfg(feature = "parallel")]
        {
            let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            group.bench_with_input(BenchmarkId::new("one_thread", n), &n, |b, _| {
                let mut s = start.clone();
                single.install(|| b.iter(|| model.step(&mut s, dt).unwrap()));
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_steps);
criterion_main!(benches);
