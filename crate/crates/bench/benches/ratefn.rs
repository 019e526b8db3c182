use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maxweight_ld::ratefn::{exact_i2, it_exact, it_grid, GridSettings};
use maxweight_ld::{Method, Policy};
use maxweight_ld_bench::two_queues;

fn branch_convex(c: &mut Criterion) {
    let (model, region) = two_queues(0.3);
    let mut group = c.benchmark_group("branch_convex");
    for t in [2usize, 4, 6] {
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |bench, &t| {
            bench.iter(|| it_exact(&model, &region, &[3.0, 1.0], t, Method::BranchConvex).unwrap().value)
        });
    }
    group.finish();
}

fn closed_form_i2(c: &mut Criterion) {
    let (model, region) = two_queues(0.3);
    c.bench_function("closed_form_i2", |bench| bench.iter(|| exact_i2(&model, &region, &[4.0, 2.0]).unwrap().value));
}

fn grid_dp(c: &mut Criterion) {
    let (model, region) = two_queues(0.3);
    let settings = GridSettings { delta: 0.1, ..GridSettings::default() };
    let policy = Policy::work_conserving();
    let mut group = c.benchmark_group("grid_dp");
    group.sample_size(10);
    group.bench_function("t3_delta0.1", |bench| {
        bench.iter(|| it_grid(&model, &region, &policy, &[3.0, 1.0], 3, &settings).unwrap().value)
    });
    group.finish();
}

criterion_group!(benches, branch_convex, closed_form_i2, grid_dp);
criterion_main!(benches);
