//! Reference solve, training, checkpointing and evaluation on a small problem.

use conspinn::evaluation::{evaluate_model, Precision};
use conspinn::mlp::{read_checkpoint, write_checkpoint, InputScaling, Network};
use conspinn::pde::{conserved_series, read_dataset, solve_reference, write_dataset, Dataset, PdeKind, PdeSpec};
use conspinn::projection::{ConservedKind, ConservedSet};
use conspinn::sampling::{make_training_set, DataSource};
use conspinn::training::{train, ModelVariant, StopReason, TrainConfig};

fn setup(kind: PdeKind) -> (Dataset, ConservedSet) {
    let spec = PdeSpec::benchmark(kind);
    let mut grid = spec.default_grid().coarsened(8);
    grid.nt = 20;
    let field = solve_reference(&spec, &grid).unwrap();
    let series = ConservedSet::new(
        [ConservedKind::Linear, ConservedKind::Quadratic]
            .map(|k| conserved_series(&field, k, spec.series_mode()).unwrap()),
    );
    let data = Dataset {
        spec,
        field,
        solver: "test".into(),
    };
    (data, series)
}

#[test]
fn projected_models_conserve_after_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [PdeKind::Advection1d, PdeKind::ReactionDiffusion] {
        let (data, series) = setup(kind);
        let path = dir.path().join("data.bin");
        write_dataset(&path, &data).unwrap();
        let data = read_dataset(&path).unwrap();
        let grid = data.field.grid;
        let net = Network::new(vec![2, 12, 12, 1], InputScaling::unit_box(&grid.bounds()));
        let set = make_training_set(&data.field, 50, 200, 1, DataSource::FullGrid).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.lbfgs.max_epochs = 60;
        for variant in [
            ModelVariant::pinn(),
            ModelVariant::soft(conspinn::projection::ProjectionKind::Both, 10.0),
            ModelVariant::projected(conspinn::projection::ProjectionKind::Both),
        ] {
            let (params, record) = train(&net, variant, &data.spec, &grid, &set, &series, 0, &cfg).unwrap();
            assert_eq!(record.trace.len(), record.epochs);
            assert!(record.epochs <= 60);
            if record.stop == StopReason::MaxEpochs {
                assert_eq!(record.epochs, 60);
            }
            let first = record.trace.first().unwrap().total();
            assert!(record.final_loss < first, "{}: loss did not decrease", variant.label());

            let ckpt = dir.path().join("model.bin");
            write_checkpoint(&ckpt, &net, &params).unwrap();
            let (net2, params2) = read_checkpoint(&ckpt).unwrap();
            assert_eq!(params2.values, params.values);

            let m = evaluate_model(
                &net2,
                &params2.values,
                &data.field,
                &series,
                variant.kind,
                Precision::F64,
            )
            .unwrap();
            assert!(m.error_u.is_finite());
            if variant == ModelVariant::projected(conspinn::projection::ProjectionKind::Both) {
                assert!(m.error_c_linear.unwrap() < 1e-12, "{kind:?}: {m:?}");
                assert!(m.error_c_quadratic.unwrap() < 1e-12, "{kind:?}: {m:?}");
            }
        }
    }
}
