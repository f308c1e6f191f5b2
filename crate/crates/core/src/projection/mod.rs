//! Closed-form Euclidean projections of a spatial slice onto the set where
//! its discrete linear integral `Δ·Σy`, quadratic integral `Δ·Σy²`, or both
//! equal prescribed values.
//!
//! Every projection is an affine map of the slice, `y = α·u + β`, whose
//! coefficients depend only on the slice mean and centered second moment.
//! [`affine_map`] computes them for any [`Scalar`], which is how the same
//! formulas run on plain floats, on tape variables during training, and on
//! jets when derivatives in `t` are propagated through the projection.

mod series;

pub use series::{c_gradient, ConservedKind, ConservedSeries, ConservedSet, SeriesMode};

use serde::{Deserialize, Serialize};

use crate::autodiff::{compensated_sum, Real, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjectionError {
    #[error("degenerate projection: slice energy {energy:e} is at or below {eps:e}")]
    DegenerateProjection { energy: f64, eps: f64 },
    #[error("infeasible constraints: sphere radius² {radicand:e} is not positive")]
    InfeasibleConstraints { radicand: f64 },
    #[error("invalid projection spec: {0}")]
    InvalidSpec(String),
    #[error("invalid conserved series: {0}")]
    InvalidSeries(String),
    #[error("a time-varying series needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("t = {t} is outside the interpolation range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("no {0:?} series configured")]
    MissingSeries(ConservedKind),
    #[error("slice length {got} does not match spec length {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ProjectionKind {
    #[default]
    None,
    Linear,
    Quadratic,
    Both,
}

impl ProjectionKind {
    pub fn uses(self, kind: ConservedKind) -> bool {
        matches!(
            (self, kind),
            (ProjectionKind::Both, _)
                | (ProjectionKind::Linear, ConservedKind::Linear)
                | (ProjectionKind::Quadratic, ConservedKind::Quadratic)
        )
    }

    pub fn conserved(self) -> Vec<ConservedKind> {
        [ConservedKind::Linear, ConservedKind::Quadratic]
            .into_iter()
            .filter(|&k| self.uses(k))
            .collect()
    }
}

/// Kind of projection, cell volume (`Δx` or `Δx·Δy`) and slice length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub kind: ProjectionKind,
    pub cell_volume: f64,
    pub n: usize,
}

impl ProjectionSpec {
    pub fn new(kind: ProjectionKind, cell_volume: f64, n: usize) -> Result<Self, ProjectionError> {
        if !(cell_volume > 0.0 && cell_volume.is_finite()) {
            return Err(ProjectionError::InvalidSpec(format!(
                "cell volume must be positive, got {cell_volume}"
            )));
        }
        let min_n = if kind == ProjectionKind::Both { 2 } else { 1 };
        if n < min_n {
            return Err(ProjectionError::InvalidSpec(format!(
                "{kind:?} projection needs at least {min_n} points, got {n}"
            )));
        }
        Ok(ProjectionSpec { kind, cell_volume, n })
    }
}

/// Mean and centered second moment `Σ(uᵢ − m)²` of a slice.
#[derive(Debug, Clone, Copy)]
pub struct SliceStats<S> {
    pub n: usize,
    pub mean: S,
    pub centered_sq: S,
}

impl<T: Real> SliceStats<T> {
    pub fn of(u: &[T]) -> Self {
        Self::centered(u).0
    }

    /// Statistics together with the deviations `uᵢ − m`, using a corrected
    /// two-pass mean so the deviations sum to zero to rounding.
    pub fn centered(u: &[T]) -> (Self, Vec<T>) {
        let n = u.len();
        let count = T::from_f64(n as f64);
        let m0 = compensated_sum(u.iter().copied()) / count;
        let correction = compensated_sum(u.iter().map(|&x| x - m0)) / count;
        let dev: Vec<T> = u.iter().map(|&x| (x - m0) - correction).collect();
        let centered_sq = compensated_sum(dev.iter().map(|&d| d * d));
        let stats = SliceStats {
            n,
            mean: m0 + correction,
            centered_sq,
        };
        (stats, dev)
    }
}

/// Prescribed integral values; fields not used by the projection kind are ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Targets<S> {
    pub linear: S,
    pub quadratic: S,
}

/// Coefficients `(α, β)` of the projection `y = α·u + β`.
///
/// * Linear: `α = 1`, `β = c/(nΔ) − m`.
/// * Quadratic: `α = √(c / (Δ·Σu²))`, `β = 0`, with `Σu² = Q + n·m²`.
/// * Both: `α = √(R / Q)`, `β = c_L/(nΔ) − α·m`, `R = c_Q/Δ − c_L²/(nΔ²)`.
pub fn affine_map<S: Scalar>(
    kind: ProjectionKind,
    stats: &SliceStats<S>,
    targets: &Targets<S>,
    cell_volume: f64,
    eps: f64,
) -> Result<(S, S), ProjectionError> {
    let one = stats.mean.lift(1.0);
    let zero = stats.mean.lift(0.0);
    let n = stats.n as f64;
    let dv = cell_volume;
    match kind {
        ProjectionKind::None => Ok((one, zero)),
        ProjectionKind::Linear => Ok((one, targets.linear.scale(1.0 / (n * dv)) - stats.mean)),
        ProjectionKind::Quadratic => {
            let energy = stats.centered_sq + stats.mean.square().scale(n);
            if !(energy.value() > eps) {
                return Err(ProjectionError::DegenerateProjection {
                    energy: energy.value(),
                    eps,
                });
            }
            if targets.quadratic.value() == 0.0 {
                return Ok((zero, zero));
            }
            let alpha = (targets.quadratic / energy.scale(dv)).sqrt();
            Ok((alpha, zero))
        }
        ProjectionKind::Both => {
            let radicand = targets.quadratic.scale(1.0 / dv) - targets.linear.square().scale(1.0 / (n * dv * dv));
            if !(radicand.value() > 0.0) {
                return Err(ProjectionError::InfeasibleConstraints {
                    radicand: radicand.value(),
                });
            }
            if !(stats.centered_sq.value() > eps) {
                return Err(ProjectionError::DegenerateProjection {
                    energy: stats.centered_sq.value(),
                    eps,
                });
            }
            let alpha = (radicand / stats.centered_sq).sqrt();
            Ok((alpha, targets.linear.scale(1.0 / (n * dv)) - alpha * stats.mean))
        }
    }
}

/// Projection entry points with a configurable degeneracy threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Projector {
    /// Threshold below which a slice energy counts as zero; `None` picks the
    /// precision default.
    pub eps: Option<f64>,
}

impl Projector {
    pub fn with_eps(eps: f64) -> Self {
        Projector { eps: Some(eps) }
    }

    fn eps<T: Real>(&self) -> f64 {
        self.eps.unwrap_or(T::DEGENERACY_EPS)
    }

    pub fn project<T: Real>(
        &self,
        kind: ProjectionKind,
        u: &[T],
        targets: Targets<f64>,
        cell_volume: f64,
    ) -> Result<Vec<T>, ProjectionError> {
        if kind == ProjectionKind::None {
            return Ok(u.to_vec());
        }
        ProjectionSpec::new(kind, cell_volume, u.len())?;
        let (stats, dev) = SliceStats::centered(u);
        let t = Targets {
            linear: T::from_f64(targets.linear),
            quadratic: T::from_f64(targets.quadratic),
        };
        let (alpha, _) = affine_map(kind, &stats, &t, cell_volume, self.eps::<T>())?;
        if kind == ProjectionKind::Quadratic {
            return Ok(u.iter().map(|&x| alpha * x).collect());
        }
        // α·(u − m) + c_L/(nΔ)
        let level = T::from_f64(targets.linear / (u.len() as f64 * cell_volume));
        Ok(dev.iter().map(|&d| alpha * d + level).collect())
    }

    /// Projects one time slice at time `t` using `c(t)` from `series`.
    pub fn project_field<T: Real>(
        &self,
        slice: &[T],
        spec: &ProjectionSpec,
        series: &ConservedSet,
        t: f64,
    ) -> Result<Vec<T>, ProjectionError> {
        if slice.len() != spec.n {
            return Err(ProjectionError::LengthMismatch {
                expected: spec.n,
                got: slice.len(),
            });
        }
        let targets = targets_at(spec.kind, series, t)?;
        self.project(spec.kind, slice, targets, spec.cell_volume)
    }
}

/// Targets at time `t` for the quantities used by `kind`.
pub fn targets_at(kind: ProjectionKind, series: &ConservedSet, t: f64) -> Result<Targets<f64>, ProjectionError> {
    Ok(targets_and_slopes(kind, series, t)?.0)
}

/// Targets and their time derivatives at `t`.
pub fn targets_and_slopes(
    kind: ProjectionKind,
    series: &ConservedSet,
    t: f64,
) -> Result<(Targets<f64>, Targets<f64>), ProjectionError> {
    let mut c = Targets::default();
    let mut dc = Targets::default();
    if kind.uses(ConservedKind::Linear) {
        (c.linear, dc.linear) = series.require(ConservedKind::Linear)?.value_and_slope(t)?;
    }
    if kind.uses(ConservedKind::Quadratic) {
        (c.quadratic, dc.quadratic) = series.require(ConservedKind::Quadratic)?.value_and_slope(t)?;
    }
    Ok((c, dc))
}

/// `u + c/(nΔ) − mean(u)`.
pub fn project_linear<T: Real>(u: &[T], c: f64, dx: f64) -> Result<Vec<T>, ProjectionError> {
    let targets = Targets {
        linear: c,
        quadratic: 0.0,
    };
    Projector::default().project(ProjectionKind::Linear, u, targets, dx)
}

/// `u·√(c / (Δ·Σu²))`.
pub fn project_quadratic<T: Real>(u: &[T], c: f64, dx: f64) -> Result<Vec<T>, ProjectionError> {
    if c < 0.0 {
        return Err(ProjectionError::InvalidSeries(format!(
            "quadratic integral must be non-negative, got {c}"
        )));
    }
    let targets = Targets {
        linear: 0.0,
        quadratic: c,
    };
    Projector::default().project(ProjectionKind::Quadratic, u, targets, dx)
}

/// Projection onto both constraints: `c1` quadratic, `c2` linear.
pub fn project_both<T: Real>(u: &[T], c1: f64, c2: f64, dx: f64) -> Result<Vec<T>, ProjectionError> {
    let targets = Targets {
        linear: c2,
        quadratic: c1,
    };
    Projector::default().project(ProjectionKind::Both, u, targets, dx)
}

/// [`Projector::project_field`] with the default threshold.
pub fn project_field<T: Real>(
    slice: &[T],
    spec: &ProjectionSpec,
    series: &ConservedSet,
    t: f64,
) -> Result<Vec<T>, ProjectionError> {
    Projector::default().project_field(slice, spec, series, t)
}

/// `Δ·Σ uᵢ^p` for `p = 1, 2`.
pub fn integral<T: Real>(u: &[T], kind: ConservedKind, cell_volume: f64) -> f64 {
    let s = match kind {
        ConservedKind::Linear => compensated_sum(u.iter().map(|x| x.value())),
        ConservedKind::Quadratic => compensated_sum(u.iter().map(|x| x.value() * x.value())),
    };
    s * cell_volume
}
