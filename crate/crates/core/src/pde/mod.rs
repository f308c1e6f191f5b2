//! The five benchmark equations: coefficients, initial conditions, PINN
//! residuals, space–time grids and reference solutions.

mod dataset;
mod solvers;

pub use dataset::{read_dataset, read_dataset_csv, write_dataset, write_dataset_csv, Dataset};
pub use solvers::{solve_reference, solve_reference_with, BandedLu, SolverOptions};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{compensated_sum, Scalar};
use crate::mlp::{eval_points, LaneOrders, Network, PointJets};
use crate::projection::{ConservedKind, ConservedSeries, ProjectionError, SeriesMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PdeError {
    #[error("reference solver produced non-finite values at step {step}")]
    SolverBlowUp { step: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("unknown PDE `{0}`")]
    UnknownPde(String),
    #[error(transparent)]
    Series(#[from] ProjectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdeKind {
    Advection1d,
    Advection2d,
    Wave,
    Kdv,
    ReactionDiffusion,
}

impl PdeKind {
    pub const ALL: [PdeKind; 5] = [
        PdeKind::Advection1d,
        PdeKind::Advection2d,
        PdeKind::Wave,
        PdeKind::Kdv,
        PdeKind::ReactionDiffusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PdeKind::Advection1d => "advection1d",
            PdeKind::Advection2d => "advection2d",
            PdeKind::Wave => "wave",
            PdeKind::Kdv => "kdv",
            PdeKind::ReactionDiffusion => "reaction-diffusion",
        }
    }

    pub fn spatial_dims(self) -> usize {
        if self == PdeKind::Advection2d {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for PdeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PdeKind {
    type Err = PdeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "-");
        PdeKind::ALL
            .into_iter()
            .find(|k| k.name() == key || (key == "rd" && *k == PdeKind::ReactionDiffusion))
            .ok_or_else(|| PdeError::UnknownPde(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Coefficients {
    /// `u_t + c·∇u·1 = 0`
    Advection { c: f64 },
    /// `u_tt = c²·u_xx`
    Wave { c: f64 },
    /// `u_t + a·u·u_x + b·u_xxx = 0`
    Kdv { a: f64, b: f64 },
    /// `u_t = D·u_xx + k·u`
    ReactionDiffusion { d: f64, k: f64 },
}

/// Equation, coefficients and initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeSpec {
    pub kind: PdeKind,
    pub coefficients: Coefficients,
}

impl PdeSpec {
    /// Benchmark coefficients.
    pub fn benchmark(kind: PdeKind) -> Self {
        let coefficients = match kind {
            PdeKind::Advection1d | PdeKind::Advection2d => Coefficients::Advection { c: 0.25 },
            PdeKind::Wave => Coefficients::Wave { c: 0.25 },
            PdeKind::Kdv => Coefficients::Kdv { a: 1.0, b: 0.0025 },
            PdeKind::ReactionDiffusion => Coefficients::ReactionDiffusion { d: 0.1, k: 0.5 },
        };
        PdeSpec { kind, coefficients }
    }

    pub fn default_grid(&self) -> Grid {
        if self.kind.spatial_dims() == 2 {
            Grid::standard_2d()
        } else {
            Grid::standard_1d()
        }
    }

    /// Every system except reaction–diffusion conserves its integrals.
    pub fn is_conserved(&self) -> bool {
        self.kind != PdeKind::ReactionDiffusion
    }

    pub fn series_mode(&self) -> SeriesMode {
        if self.is_conserved() {
            SeriesMode::Constant
        } else {
            SeriesMode::TimeVarying
        }
    }

    /// `u(x[, y], 0)`.
    pub fn initial_condition(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            PdeKind::Advection1d => (-(x - 1.0).powi(2) / 0.0625).exp(),
            PdeKind::Advection2d => (-((x - 1.0).powi(2) + (y - 1.0).powi(2))).exp(),
            PdeKind::Wave | PdeKind::Kdv => (-(x - 1.0).powi(2)).exp(),
            PdeKind::ReactionDiffusion => (-(x - 1.0).powi(2) / 0.25).exp(),
        }
    }

    /// `u_t(x, 0)` for the wave equation; the pulse starts at rest.
    pub fn initial_velocity(&self, _x: f64) -> f64 {
        0.0
    }

    pub fn n_inputs(&self) -> usize {
        self.kind.spatial_dims() + 1
    }

    /// Index of `t` among the network inputs.
    pub fn time_axis(&self) -> usize {
        self.kind.spatial_dims()
    }

    /// Derivative orders the residual needs along each input.
    pub fn lane_orders(&self) -> LaneOrders {
        let t = self.time_axis();
        let o = LaneOrders::value_only();
        match self.kind {
            PdeKind::Advection1d => o.with(0, 1).with(t, 1),
            PdeKind::Advection2d => o.with(0, 1).with(1, 1).with(t, 1),
            PdeKind::Wave => o.with(0, 2).with(t, 2),
            PdeKind::Kdv => o.with(0, 3).with(t, 1),
            PdeKind::ReactionDiffusion => o.with(0, 2).with(t, 1),
        }
    }

    /// Whether the residual reads `u` itself rather than only its derivatives.
    pub fn residual_uses_value(&self) -> bool {
        matches!(self.kind, PdeKind::Kdv | PdeKind::ReactionDiffusion)
    }

    /// Residual `f` from derivative lanes; `d(axis, k)` is `∂ᵏu/∂(axis)ᵏ`.
    pub fn residual_with<S: Scalar>(&self, d: impl Fn(usize, usize) -> S) -> S {
        let t = self.time_axis();
        match self.coefficients {
            Coefficients::Advection { c } => {
                let mut r = d(t, 1);
                for axis in 0..t {
                    r = r + d(axis, 1).scale(c);
                }
                r
            }
            Coefficients::Wave { c } => d(t, 2) - d(0, 2).scale(c * c),
            Coefficients::Kdv { a, b } => d(t, 1) + (d(0, 0) * d(0, 1)).scale(a) + d(0, 3).scale(b),
            Coefficients::ReactionDiffusion { d: diff, k } => d(t, 1) - d(0, 2).scale(diff) - d(0, 0).scale(k),
        }
    }

    pub fn residual_of(&self, jets: &PointJets) -> f64 {
        self.residual_with(|axis, k| jets.deriv(axis, k))
    }
}

/// Residual of the network at one point.
pub fn residual(spec: &PdeSpec, network: &Network, params: &[f64], point: &[f64]) -> f64 {
    let mut p = [0.0; 3];
    p[..point.len()].copy_from_slice(point);
    let jets = eval_points(network, params, &[p], spec.lane_orders());
    spec.residual_of(&jets[0])
}

/// Uniform cell-centred space–time grid on `[0, nx·dx] (× [0, ny·dy])`,
/// with times `0, dt, …, (nt − 1)·dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: usize,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
}

impl Grid {
    pub fn new_1d(nx: usize, dx: f64, nt: usize, dt: f64) -> Self {
        Grid {
            dims: 1,
            nx,
            ny: 1,
            nt,
            dx,
            dy: 1.0,
            dt,
        }
    }

    pub fn new_2d(nx: usize, ny: usize, dx: f64, dy: f64, nt: usize, dt: f64) -> Self {
        Grid {
            dims: 2,
            nx,
            ny,
            nt,
            dx,
            dy,
            dt,
        }
    }

    /// 256 cells of width 1/128 on [0, 2], 100 times with step 0.01.
    pub fn standard_1d() -> Self {
        Grid::new_1d(256, 1.0 / 128.0, 100, 0.01)
    }

    /// 32 × 32 cells of width 1/16 on [0, 2]², 100 times with step 0.01.
    pub fn standard_2d() -> Self {
        Grid::new_2d(32, 32, 1.0 / 16.0, 1.0 / 16.0, 100, 0.01)
    }

    /// Same extents with `nx` (and `ny`) divided by `factor`.
    pub fn coarsened(&self, factor: usize) -> Self {
        let mut g = *self;
        g.nx /= factor;
        g.dx *= factor as f64;
        if g.dims == 2 {
            g.ny /= factor;
            g.dy *= factor as f64;
        }
        g
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        let ok = (self.dims == 1 || self.dims == 2)
            && self.nx >= 3
            && (self.dims == 1 || self.ny >= 3)
            && self.nt >= 1
            && self.dx > 0.0
            && self.dy > 0.0
            && self.dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PdeError::GridMismatch(format!("invalid grid {self:?}")))
        }
    }

    pub fn n_space(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_total(&self) -> usize {
        self.n_space() * self.nt
    }

    /// `Δx` in 1D, `Δx·Δy` in 2D.
    pub fn cell_volume(&self) -> f64 {
        if self.dims == 2 {
            self.dx * self.dy
        } else {
            self.dx
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dy
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nt).map(|k| self.t(k)).collect()
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.nt - 1)
    }

    /// Domain box per network input: space axes then time.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(0.0, self.nx as f64 * self.dx)];
        if self.dims == 2 {
            b.push((0.0, self.ny as f64 * self.dy));
        }
        b.push((0.0, self.t_end().max(self.dt)));
        b
    }

    pub fn n_inputs(&self) -> usize {
        self.dims + 1
    }

    /// Spatial coordinates of flattened index `s = ix·ny + iy`.
    pub fn space_coords(&self, s: usize) -> (f64, f64) {
        (
            self.x(s / self.ny),
            if self.dims == 2 { self.y(s % self.ny) } else { 0.0 },
        )
    }

    /// Network input for spatial index `s` at time `t`.
    pub fn point_at(&self, s: usize, t: f64) -> [f64; 3] {
        let (x, y) = self.space_coords(s);
        if self.dims == 2 {
            [x, y, t]
        } else {
            [x, t, 0.0]
        }
    }

    pub fn slice_points(&self, t: f64) -> Vec<[f64; 3]> {
        (0..self.n_space()).map(|s| self.point_at(s, t)).collect()
    }

    /// Every grid point, time-major.
    pub fn all_points(&self) -> Vec<[f64; 3]> {
        (0..self.nt).flat_map(|k| self.slice_points(self.t(k))).collect()
    }
}

/// Values on a grid, time-major `[nt][n_space]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// `u_t` for the wave equation.
    pub companion: Option<Vec<f64>>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, PdeError> {
        if values.len() != grid.n_total() {
            return Err(PdeError::InvalidField(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.n_total()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PdeError::InvalidField(format!("non-finite value at index {i}")));
        }
        Ok(Field {
            grid,
            values,
            companion: None,
        })
    }

    pub fn with_companion(mut self, companion: Vec<f64>) -> Result<Self, PdeError> {
        if companion.len() != self.values.len() {
            return Err(PdeError::InvalidField("companion shape".into()));
        }
        self.companion = Some(companion);
        Ok(self)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Field {
            grid,
            values: vec![value; grid.n_total()],
            companion: None,
        }
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.n_space();
        &self.values[k * n..(k + 1) * n]
    }

    /// `Δ·Σ u^p` per time slice.
    pub fn integral_series(&self, kind: ConservedKind) -> Vec<f64> {
        (0..self.grid.nt)
            .map(|k| {
                let s = self.slice(k);
                let sum = match kind {
                    ConservedKind::Linear => compensated_sum(s.iter().copied()),
                    ConservedKind::Quadratic => compensated_sum(s.iter().map(|v| v * v)),
                };
                sum * self.grid.cell_volume()
            })
            .collect()
    }
}

/// `c(t)` of a field: the time mean for [`SeriesMode::Constant`], the full
/// series otherwise.
pub fn conserved_series(field: &Field, kind: ConservedKind, mode: SeriesMode) -> Result<ConservedSeries, PdeError> {
    let c = field.integral_series(kind);
    Ok(match mode {
        SeriesMode::Constant => ConservedSeries::mean_of(kind, &c)?,
        SeriesMode::TimeVarying => ConservedSeries::time_varying(kind, field.grid.times(), c)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{InputScaling, MlpParams};

    fn net_for(spec: &PdeSpec, seed: u64) -> (Network, Vec<f64>) {
        let g = spec.default_grid();
        let mut sizes = vec![spec.n_inputs(), 6, 5, 1];
        sizes[0] = spec.n_inputs();
        let net = Network::new(sizes, InputScaling::unit_box(&g.bounds()));
        let p = MlpParams::init(net.layer_sizes(), seed).values;
        (net, p)
    }

    #[test]
    fn parse_names() {
        for k in PdeKind::ALL {
            assert_eq!(k.name().parse::<PdeKind>().unwrap(), k);
        }
        assert_eq!("RD".parse::<PdeKind>().unwrap(), PdeKind::ReactionDiffusion);
        assert!("heat".parse::<PdeKind>().is_err());
    }

    #[test]
    fn constant_network_residuals() {
        for kind in PdeKind::ALL {
            let spec = PdeSpec::benchmark(kind);
            let (net, mut p) = net_for(&spec, 1);
            p.iter_mut().for_each(|w| *w = 0.0);
            let last = p.len() - 1;
            p[last] = 0.8;
            let pt = [0.3, 0.4, 0.5];
            let r = residual(&spec, &net, &p, &pt[..spec.n_inputs()]);
            let want = if kind == PdeKind::ReactionDiffusion {
                -0.5 * 0.8
            } else {
                0.0
            };
            assert!((r - want).abs() < 1e-15, "{kind}: {r}");
        }
    }

    #[test]
    fn linear_in_x_advection() {
        // u = x through the lane interface
        let spec = PdeSpec::benchmark(PdeKind::Advection1d);
        let r = spec.residual_with(|axis, k| match (axis, k) {
            (0, 0) => 0.3,
            (0, 1) => 1.0,
            _ => 0.0,
        });
        assert_eq!(r, 0.25);
    }

    #[test]
    fn residual_matches_finite_differences() {
        for kind in PdeKind::ALL {
            let spec = PdeSpec::benchmark(kind);
            let (net, p) = net_for(&spec, 9);
            let n_in = spec.n_inputs();
            let f = |q: &[f64]| net.forward(&p, q);
            for i in 0..100 {
                let mut pt = vec![0.0; n_in];
                for (d, v) in pt.iter_mut().enumerate() {
                    *v = 0.2 + 0.6 * (((i * 31 + d * 17) % 97) as f64 / 97.0);
                }
                let fd = |axis: usize, k: usize| -> f64 {
                    let h = 1e-2;
                    let at = |s: f64| {
                        let mut q = pt.clone();
                        q[axis] += s * h;
                        f(&q)
                    };
                    match k {
                        0 => f(&pt),
                        1 => (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h),
                        2 => (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0) + 16.0 * at(-1.0) - at(-2.0)) / (12.0 * h * h),
                        _ => {
                            (-at(3.0) + 8.0 * at(2.0) - 13.0 * at(1.0) + 13.0 * at(-1.0) - 8.0 * at(-2.0) + at(-3.0))
                                / (8.0 * h * h * h)
                        }
                    }
                };
                let want = spec.residual_with(fd);
                let got = residual(&spec, &net, &p, &pt);
                assert!(
                    (got - want).abs() <= 1e-4 * want.abs().max(1e-2),
                    "{kind}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::standard_1d();
        assert_eq!(g.n_total(), 25_600);
        assert_eq!(g.x(0), 1.0 / 256.0);
        assert!((g.t_end() - 0.99).abs() < 1e-15);
        let g2 = Grid::standard_2d();
        assert_eq!(g2.n_total(), 102_400);
        assert_eq!(g2.cell_volume(), 1.0 / 256.0);
        assert_eq!(g2.point_at(33, 0.5), [g2.x(1), g2.y(1), 0.5]);
    }

    #[test]
    fn constant_field_series() {
        let g = Grid::standard_1d();
        let one = Field::constant(g, 1.0);
        let c = conserved_series(&one, ConservedKind::Linear, SeriesMode::Constant).unwrap();
        assert_eq!(c.c_at(0.3).unwrap(), 2.0);
        let two = Field::constant(g, 2.0);
        let q = conserved_series(&two, ConservedKind::Quadratic, SeriesMode::TimeVarying).unwrap();
        assert!(q.values().iter().all(|&v| v == 8.0));
    }
}
