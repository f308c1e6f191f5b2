//! Metrics on the full-grid test set, trajectories and result tables.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{compensated_sum, Real};
use crate::mlp::{eval_points, LaneOrders, Network, MAX_INPUTS};
use crate::par;
use crate::pde::{Field, Grid};
use crate::projection::{ConservedKind, ConservedSeries, ConservedSet, ProjectionKind, ProjectionSpec, Projector};
use crate::Error;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaluationError {
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("nothing to aggregate")]
    NoTrials,
}

/// Errors of one trained model. Conservation errors are `None` for
/// quantities that were not evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub error_u: f64,
    /// Time mean of `|c_L(t) − ĉ_L(t)|`.
    pub error_c_linear: Option<f64>,
    pub error_c_quadratic: Option<f64>,
    /// Time sum of the same.
    pub error_c_linear_sum: Option<f64>,
    pub error_c_quadratic_sum: Option<f64>,
    pub epochs: f64,
    pub wall_seconds: f64,
}

impl Metrics {
    pub fn error_c(&self, kind: ConservedKind) -> Option<f64> {
        match kind {
            ConservedKind::Linear => self.error_c_linear,
            ConservedKind::Quadratic => self.error_c_quadratic,
        }
    }

    pub fn set_error_c(&mut self, kind: ConservedKind, e: ErrorC) {
        match kind {
            ConservedKind::Linear => {
                self.error_c_linear = Some(e.mean);
                self.error_c_linear_sum = Some(e.sum);
            }
            ConservedKind::Quadratic => {
                self.error_c_quadratic = Some(e.mean);
                self.error_c_quadratic_sum = Some(e.sum);
            }
        }
    }
}

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn error_u<T: Real>(pred: &[T], truth: &[f64]) -> Result<f64, EvaluationError> {
    if pred.len() != truth.len() {
        return Err(EvaluationError::LengthMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let den = compensated_sum(truth.iter().map(|v| v * v));
    if den == 0.0 {
        return Err(EvaluationError::ZeroReference);
    }
    let num = compensated_sum(pred.iter().zip(truth).map(|(p, t)| {
        let d = to_f64(*p) - t;
        d * d
    }));
    Ok((num / den).sqrt())
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.value()
}

/// L1 conservation error over the grid times: mean and plain sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorC {
    pub mean: f64,
    pub sum: f64,
}

/// `ĉ(t_k) = Δ·Σ u^p` for each time slice of `values` (time-major on `grid`).
pub fn c_trajectory<T: Real>(values: &[T], grid: &Grid, kind: ConservedKind) -> Vec<f64> {
    let n = grid.n_space();
    values
        .chunks(n)
        .map(|s| {
            let sum = match kind {
                ConservedKind::Linear => compensated_sum(s.iter().map(|&v| to_f64(v))),
                ConservedKind::Quadratic => compensated_sum(s.iter().map(|&v| to_f64(v) * to_f64(v))),
            };
            sum * grid.cell_volume()
        })
        .collect()
}

/// Compares `ĉ(t_k)` of the prediction with `c(t_k)` from `series`.
pub fn error_c<T: Real>(values: &[T], grid: &Grid, series: &ConservedSeries) -> Result<ErrorC, Error> {
    if values.len() != grid.n_total() {
        return Err(EvaluationError::LengthMismatch {
            expected: grid.n_total(),
            got: values.len(),
        }
        .into());
    }
    let chat = c_trajectory(values, grid, series.kind());
    let errs = chat
        .iter()
        .enumerate()
        .map(|(k, c)| Ok((series.c_at(grid.t(k))? - c).abs()))
        .collect::<Result<Vec<f64>, Error>>()?;
    let sum = compensated_sum(errs.iter().copied());
    Ok(ErrorC {
        mean: sum / grid.nt as f64,
        sum,
    })
}

/// Arithmetic mean of every field; a conservation error is kept only if all
/// trials report it.
pub fn aggregate(trials: &[Metrics]) -> Result<Metrics, EvaluationError> {
    if trials.is_empty() {
        return Err(EvaluationError::NoTrials);
    }
    let n = trials.len() as f64;
    let mean = |f: &dyn Fn(&Metrics) -> f64| trials.iter().map(f).sum::<f64>() / n;
    let opt = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        trials
            .iter()
            .map(f)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n)
    };
    Ok(Metrics {
        error_u: mean(&|m| m.error_u),
        error_c_linear: opt(&|m| m.error_c_linear),
        error_c_quadratic: opt(&|m| m.error_c_quadratic),
        error_c_linear_sum: opt(&|m| m.error_c_linear_sum),
        error_c_quadratic_sum: opt(&|m| m.error_c_quadratic_sum),
        epochs: mean(&|m| m.epochs),
        wall_seconds: mean(&|m| m.wall_seconds),
    })
}

/// Arithmetic precision of inference, projection and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Network output on every grid point, time-major.
pub fn predict(net: &Network, params: &[f64], grid: &Grid) -> Vec<f64> {
    eval_points(net, params, &grid.all_points(), LaneOrders::value_only())
        .into_iter()
        .map(|j| j.value)
        .collect()
}

/// Single-precision network output on every grid point.
pub fn predict_f32(net: &Network, params: &[f64], grid: &Grid) -> Vec<f32> {
    let weights: Vec<f32> = params.iter().map(|&w| w as f32).collect();
    let n_in = net.n_inputs();
    par::map_chunks(&grid.all_points(), 256, |_, chunk: &[[f64; MAX_INPUTS]]| {
        chunk
            .iter()
            .map(|p| {
                let x: Vec<f32> = p[..n_in].iter().map(|&v| v as f32).collect();
                net.forward_generic(&weights, &x)
            })
            .collect::<Vec<f32>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Projects every time slice of `values` with `c(t_k)` from `series`.
pub fn project_prediction<T: Real>(
    values: &[T],
    grid: &Grid,
    kind: ProjectionKind,
    series: &ConservedSet,
    projector: Projector,
) -> Result<Vec<T>, Error> {
    if kind == ProjectionKind::None {
        return Ok(values.to_vec());
    }
    let spec = ProjectionSpec::new(kind, grid.cell_volume(), grid.n_space())?;
    let slices = values.chunks(grid.n_space()).enumerate().collect::<Vec<_>>();
    let out = par::map_indexed(slices.len(), |i| {
        let (k, s) = slices[i];
        projector.project_field(s, &spec, series, grid.t(k))
    });
    let mut all = Vec::with_capacity(values.len());
    for s in out {
        all.extend(s?);
    }
    Ok(all)
}

/// Errors of a trained model against the reference field. The projection
/// `kind` is applied at inference (`None` for unprojected models); every
/// quantity present in `series` is evaluated.
pub fn evaluate_model(
    net: &Network,
    params: &[f64],
    truth: &Field,
    series: &ConservedSet,
    kind: ProjectionKind,
    precision: Precision,
) -> Result<Metrics, Error> {
    let grid = &truth.grid;
    fn finish<T: Real>(values: Vec<T>, truth: &Field, series: &ConservedSet) -> Result<Metrics, Error> {
        let mut m = Metrics {
            error_u: error_u(&values, &truth.values)?,
            ..Default::default()
        };
        for k in [ConservedKind::Linear, ConservedKind::Quadratic] {
            if let Some(s) = series.get(k) {
                m.set_error_c(k, error_c(&values, &truth.grid, s)?);
            }
        }
        Ok(m)
    }
    match precision {
        Precision::F64 => {
            let v = project_prediction(&predict(net, params, grid), grid, kind, series, Projector::default())?;
            finish(v, truth, series)
        }
        Precision::F32 => {
            let v = project_prediction(
                &predict_f32(net, params, grid),
                grid,
                kind,
                series,
                Projector::default(),
            )?;
            finish(v, truth, series)
        }
    }
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pde: String,
    pub variant: String,
    /// Conserved quantities of the variant: `L`, `Q`, `LQ` or `-`.
    pub quantity: String,
    pub metrics: Metrics,
    pub trials: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

pub const RESULTS_HEADER: &str =
    "pde,variant,quantity,error_u,error_cL,error_cQ,epochs,seconds,trials,error_cL_sum,error_cQ_sum";

/// Writes the results table. Wall-clock seconds are written only when
/// `timing` is set so that the file is otherwise reproducible byte for byte.
pub fn write_results_csv(path: &Path, rows: &[ResultRow], config_hash: &str, timing: bool) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# config_hash={config_hash}")?;
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in rows {
        let m = &r.metrics;
        let seconds = if timing {
            format!("{:.3}", m.wall_seconds)
        } else {
            "-".to_string()
        };
        writeln!(
            w,
            "{},{},{},{:.6e},{},{},{:.1},{},{},{},{}",
            r.pde,
            r.variant,
            r.quantity,
            m.error_u,
            fmt_opt(m.error_c_linear),
            fmt_opt(m.error_c_quadratic),
            m.epochs,
            seconds,
            r.trials,
            fmt_opt(m.error_c_linear_sum),
            fmt_opt(m.error_c_quadratic_sum),
        )?;
    }
    w.flush()
}

/// Writes `t,<name>…` columns, one row per time.
pub fn write_trajectory_csv(
    path: &Path,
    times: &[f64],
    columns: &[(String, Vec<f64>)],
    config_hash: &str,
) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# config_hash={config_hash}")?;
    let names: Vec<&str> = columns.iter().map(|(n, _)| n.as_str()).collect();
    writeln!(w, "t,{}", names.join(","))?;
    for (k, t) in times.iter().enumerate() {
        write!(w, "{t}")?;
        for (_, c) in columns {
            write!(w, ",{:.12e}", c[k])?;
        }
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{InputScaling, MlpParams};
    use crate::pde::{conserved_series, solve_reference, PdeKind, PdeSpec};
    use crate::projection::SeriesMode;

    #[test]
    fn relative_l2_by_hand() {
        assert_eq!(error_u(&[3.0, 9.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(error_u(&[6.0, 8.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(error_u(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(error_u(&[1.0], &[0.0]), Err(EvaluationError::ZeroReference));
        assert!(error_u(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn scale_free() {
        let t = [0.3, -1.2, 2.5, 0.7];
        let p = [0.1, -1.0, 2.0, 1.0];
        let e = error_u(&p, &t).unwrap();
        for a in [-3.0, 0.01, 7.0] {
            let pa: Vec<f64> = p.iter().map(|v| a * v).collect();
            let ta: Vec<f64> = t.iter().map(|v| a * v).collect();
            assert!((error_u(&pa, &ta).unwrap() - e).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_offset_error() {
        let grid = Grid::new_1d(64, 1.0 / 32.0, 10, 0.1);
        let truth: Vec<f64> = (0..grid.n_total()).map(|i| ((i % 64) as f64 * 0.1).sin()).collect();
        let field = Field::new(grid, truth.clone()).unwrap();
        let series = conserved_series(&field, ConservedKind::Linear, SeriesMode::Constant).unwrap();
        let delta = 0.03;
        let shifted: Vec<f64> = truth.iter().map(|v| v + delta).collect();
        let e = error_c(&shifted, &grid, &series).unwrap();
        let drift = error_c(&truth, &grid, &series).unwrap().mean;
        assert!((e.mean - delta * 64.0 / 32.0).abs() <= drift + 1e-12);
        assert!((e.sum - 10.0 * e.mean).abs() < 1e-12);
    }

    #[test]
    fn aggregation() {
        let a = Metrics {
            error_u: 0.0,
            error_c_linear: Some(0.0),
            epochs: 10.0,
            ..Default::default()
        };
        let b = Metrics {
            error_u: 2.0,
            error_c_linear: Some(2.0),
            error_c_quadratic: Some(1.0),
            epochs: 20.0,
            ..Default::default()
        };
        let m = aggregate(&[a, b]).unwrap();
        assert_eq!(
            (m.error_u, m.error_c_linear, m.error_c_quadratic, m.epochs),
            (1.0, Some(1.0), None, 15.0)
        );
        assert_eq!(aggregate(&[b]).unwrap(), b);
        assert_eq!(aggregate(&[]), Err(EvaluationError::NoTrials));
    }

    fn model() -> (Network, Vec<f64>, Field, ConservedSet) {
        let pde = PdeSpec::benchmark(PdeKind::Kdv);
        let mut grid = pde.default_grid().coarsened(4);
        grid.nt = 20;
        grid.dt = 0.05;
        let field = solve_reference(&pde, &grid).unwrap();
        let series = ConservedSet::new(
            [ConservedKind::Linear, ConservedKind::Quadratic]
                .map(|k| conserved_series(&field, k, SeriesMode::Constant).unwrap()),
        );
        let net = Network::new(vec![2, 10, 10, 1], InputScaling::unit_box(&grid.bounds()));
        let params = MlpParams::init(net.layer_sizes(), 4).values;
        (net, params, field, series)
    }

    #[test]
    fn projected_predictions_are_exact() {
        let (net, params, field, series) = model();
        for kind in [ProjectionKind::Linear, ProjectionKind::Quadratic, ProjectionKind::Both] {
            let m = evaluate_model(&net, &params, &field, &series, kind, Precision::F64).unwrap();
            for q in kind.conserved() {
                let e = m.error_c(q).unwrap();
                assert!(e <= 1e-12, "{kind:?} {q:?}: {e:e}");
            }
            let m32 = evaluate_model(&net, &params, &field, &series, kind, Precision::F32).unwrap();
            for q in kind.conserved() {
                let c = series.get(q).unwrap().values()[0].abs();
                assert!(m32.error_c(q).unwrap() <= 1e-5 * c.max(1.0));
            }
        }
        let raw = evaluate_model(&net, &params, &field, &series, ProjectionKind::None, Precision::F64).unwrap();
        assert!(raw.error_c_linear.unwrap() > 1e-3);
    }

    #[test]
    fn single_precision_prediction_tracks_double() {
        let (net, params, field, _) = model();
        let a = predict(&net, &params, &field.grid);
        let b = predict_f32(&net, &params, &field.grid);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - *y as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn trajectory_of_truth_matches_integrals() {
        let (_, _, field, _) = model();
        assert_eq!(
            c_trajectory(&field.values, &field.grid, ConservedKind::Quadratic),
            field.integral_series(ConservedKind::Quadratic)
        );
    }

    #[test]
    fn results_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let row = ResultRow {
            pde: "kdv".into(),
            variant: "pinn".into(),
            quantity: "-".into(),
            metrics: Metrics {
                error_u: 0.5,
                error_c_linear: Some(1e-3),
                wall_seconds: 3.0,
                ..Default::default()
            },
            trials: 3,
        };
        write_results_csv(&p, std::slice::from_ref(&row), "abc", false).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_hash=abc");
        assert_eq!(lines[1], RESULTS_HEADER);
        assert_eq!(lines[2], "kdv,pinn,-,5.000000e-1,1.000000e-3,-,0.0,-,3,-,-");
        write_results_csv(&p, &[row], "abc", true).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains(",3.000,3,"));
    }
}
