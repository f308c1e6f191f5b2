//! Parallel versus sequential throughput of the hot paths.

use std::hint::black_box;

use conspinn::evaluation::project_prediction;
use conspinn::mlp::{backprop_points, default_layer_sizes, eval_points, InputScaling, LaneOrders, MlpParams, Network};
use conspinn::par;
use conspinn::pde::Grid;
use conspinn::projection::Projector;
use conspinn::projection::{ConservedKind, ConservedSeries, ConservedSet, ProjectionKind};
use conspinn::sampling::lhs_seeded;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn kernel(c: &mut Criterion) {
    let grid = Grid::standard_1d();
    let net = Network::new(default_layer_sizes(2), InputScaling::unit_box(&grid.bounds()));
    let params = MlpParams::init(net.layer_sizes(), 0).values;
    let points: Vec<[f64; 3]> = lhs_seeded(2048, &grid.bounds(), 1)
        .unwrap()
        .into_iter()
        .map(|p| [p[0], p[1], 0.0])
        .collect();
    let orders = LaneOrders::value_only().with(0, 3).with(1, 1);
    let mut group = c.benchmark_group("kernel");
    group.sample_size(10);
    for (name, seq) in modes() {
        par::set_sequential(seq);
        group.bench_function(BenchmarkId::new("eval_value", name), |b| {
            b.iter(|| eval_points(&net, &params, black_box(&points), LaneOrders::value_only()))
        });
        group.bench_function(BenchmarkId::new("eval_kdv_lanes", name), |b| {
            b.iter(|| eval_points(&net, &params, black_box(&points), orders))
        });
        group.bench_function(BenchmarkId::new("backprop_kdv_lanes", name), |b| {
            let mut g = vec![0.0; params.len()];
            b.iter(|| {
                backprop_points(&net, &params, black_box(&points), orders, |_, j| *j, &mut g);
            })
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn projection(c: &mut Criterion) {
    let grid = Grid::standard_1d();
    let values: Vec<f64> = (0..grid.n_total()).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
    let series = ConservedSet::new([
        ConservedSeries::constant(ConservedKind::Linear, 0.5).unwrap(),
        ConservedSeries::constant(ConservedKind::Quadratic, 1.0).unwrap(),
    ]);
    let mut group = c.benchmark_group("projection");
    for (name, seq) in modes() {
        par::set_sequential(seq);
        group.bench_function(BenchmarkId::new("field_both", name), |b| {
            b.iter(|| {
                project_prediction(
                    black_box(&values),
                    &grid,
                    ProjectionKind::Both,
                    &series,
                    Projector::default(),
                )
                .unwrap()
            })
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, kernel, projection);
criterion_main!(benches);
