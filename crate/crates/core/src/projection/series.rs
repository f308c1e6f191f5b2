//! Prescribed integral values `c(t)` and their interpolation between samples.

use serde::{Deserialize, Serialize};

use super::ProjectionError;

/// Which spatial integral a series prescribes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConservedKind {
    /// `∫ u dx`
    Linear,
    /// `∫ u² dx`
    Quadratic,
}

impl ConservedKind {
    pub fn power(self) -> i32 {
        match self {
            ConservedKind::Linear => 1,
            ConservedKind::Quadratic => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ConservedKind::Linear => "L",
            ConservedKind::Quadratic => "Q",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesMode {
    Constant,
    TimeVarying,
}

/// Samples of `c(t)`: either one value for all times or a full series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSeries")]
pub struct ConservedSeries {
    kind: ConservedKind,
    mode: SeriesMode,
    times: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSeries {
    kind: ConservedKind,
    mode: SeriesMode,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawSeries> for ConservedSeries {
    type Error = ProjectionError;

    fn try_from(r: RawSeries) -> Result<Self, Self::Error> {
        match r.mode {
            SeriesMode::Constant => {
                let s = ConservedSeries::constant(r.kind, *r.values.first().unwrap_or(&f64::NAN))?;
                Ok(ConservedSeries { times: r.times, ..s })
            }
            SeriesMode::TimeVarying => ConservedSeries::time_varying(r.kind, r.times, r.values),
        }
    }
}

fn check_value(kind: ConservedKind, c: f64) -> Result<(), ProjectionError> {
    if !c.is_finite() {
        return Err(ProjectionError::InvalidSeries(format!("non-finite value {c}")));
    }
    if kind == ConservedKind::Quadratic && c < 0.0 {
        return Err(ProjectionError::InvalidSeries(format!(
            "quadratic integral must be non-negative, got {c}"
        )));
    }
    Ok(())
}

impl ConservedSeries {
    pub fn constant(kind: ConservedKind, value: f64) -> Result<Self, ProjectionError> {
        check_value(kind, value)?;
        Ok(ConservedSeries {
            kind,
            mode: SeriesMode::Constant,
            times: Vec::new(),
            values: vec![value],
        })
    }

    pub fn time_varying(kind: ConservedKind, times: Vec<f64>, values: Vec<f64>) -> Result<Self, ProjectionError> {
        if times.len() != values.len() {
            return Err(ProjectionError::InvalidSeries(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 3 {
            return Err(ProjectionError::TooFewSamples(times.len()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(ProjectionError::InvalidSeries(
                "times must be strictly increasing".into(),
            ));
        }
        for &c in &values {
            check_value(kind, c)?;
        }
        Ok(ConservedSeries {
            kind,
            mode: SeriesMode::TimeVarying,
            times,
            values,
        })
    }

    /// Constant series holding the time-mean of `values`.
    pub fn mean_of(kind: ConservedKind, values: &[f64]) -> Result<Self, ProjectionError> {
        let mean = crate::autodiff::compensated_sum(values.iter().copied()) / values.len() as f64;
        ConservedSeries::constant(kind, mean)
    }

    pub fn kind(&self) -> ConservedKind {
        self.kind
    }

    pub fn mode(&self) -> SeriesMode {
        self.mode
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One-sided second-order stencils at the ends, central differences inside.
    fn slope_at(&self, i: usize) -> f64 {
        let (t, c) = (&self.times, &self.values);
        let last = t.len() - 1;
        if i == 0 {
            (-3.0 * c[0] + 4.0 * c[1] - c[2]) / (t[2] - t[0])
        } else if i == last {
            (3.0 * c[last] - 4.0 * c[last - 1] + c[last - 2]) / (t[last] - t[last - 2])
        } else {
            (c[i + 1] - c[i - 1]) / (t[i + 1] - t[i - 1])
        }
    }

    /// Value and slope of the interpolant at `t`.
    pub fn value_and_slope(&self, t: f64) -> Result<(f64, f64), ProjectionError> {
        if self.mode == SeriesMode::Constant {
            return Ok((self.values[0], 0.0));
        }
        let ts = &self.times;
        let last = ts.len() - 1;
        let lo = ts[0] - (ts[1] - ts[0]);
        let hi = ts[last] + (ts[last] - ts[last - 1]);
        let slack = 1e-9 * (hi - lo);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(ProjectionError::OutOfRange { t, lo, hi });
        }
        let j = ts.partition_point(|&s| s < t);
        let i = if j == 0 {
            0
        } else if j > last || t - ts[j - 1] <= ts[j] - t {
            j - 1
        } else {
            j
        };
        let slope = self.slope_at(i);
        Ok((self.values[i] + slope * (t - ts[i]), slope))
    }

    /// `c(t*) + c′(t*)(t − t*)` with `t*` the nearest sample (earlier on ties).
    pub fn c_at(&self, t: f64) -> Result<f64, ProjectionError> {
        self.value_and_slope(t).map(|(c, _)| c)
    }
}

/// Derivative estimates at every sample.
pub fn c_gradient(series: &ConservedSeries) -> Result<Vec<f64>, ProjectionError> {
    if series.mode == SeriesMode::Constant || series.times.len() < 3 {
        return Err(ProjectionError::TooFewSamples(series.times.len()));
    }
    Ok((0..series.times.len()).map(|i| series.slope_at(i)).collect())
}

/// The series available to a projection, at most one per kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservedSet {
    pub linear: Option<ConservedSeries>,
    pub quadratic: Option<ConservedSeries>,
}

impl ConservedSet {
    pub fn new(series: impl IntoIterator<Item = ConservedSeries>) -> Self {
        let mut set = ConservedSet::default();
        for s in series {
            match s.kind() {
                ConservedKind::Linear => set.linear = Some(s),
                ConservedKind::Quadratic => set.quadratic = Some(s),
            }
        }
        set
    }

    pub fn get(&self, kind: ConservedKind) -> Option<&ConservedSeries> {
        match kind {
            ConservedKind::Linear => self.linear.as_ref(),
            ConservedKind::Quadratic => self.quadratic.as_ref(),
        }
    }

    pub fn require(&self, kind: ConservedKind) -> Result<&ConservedSeries, ProjectionError> {
        self.get(kind).ok_or(ProjectionError::MissingSeries(kind))
    }
}
