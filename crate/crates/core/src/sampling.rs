//! Training data, collocation points and the full-grid test set.

use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::MAX_INPUTS;
use crate::pde::Field;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("requested {requested} data points but only {available} are available")]
    TooManyDataPoints { requested: usize, available: usize },
    #[error("invalid bounds {0:?}")]
    InvalidBounds(Vec<(f64, f64)>),
}

/// Latin hypercube sample of `n` points in the box `bounds`: each axis is
/// cut into `n` equal strata, every stratum holds exactly one point, and the
/// stratum order is permuted independently per axis.
pub fn lhs<R: Rng + ?Sized>(n: usize, bounds: &[(f64, f64)], rng: &mut R) -> Result<Vec<Vec<f64>>, SamplingError> {
    if bounds.is_empty()
        || bounds
            .iter()
            .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi >= lo))
    {
        return Err(SamplingError::InvalidBounds(bounds.to_vec()));
    }
    let mut points = vec![vec![0.0; bounds.len()]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        strata.shuffle(rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            p[d] = (lo + (hi - lo) * (s as f64 + u) / n as f64).min(hi);
        }
    }
    Ok(points)
}

/// [`lhs`] seeded from an integer.
pub fn lhs_seeded(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>, SamplingError> {
    lhs(n, bounds, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Where supervised data points may come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Anywhere on the space–time grid.
    #[default]
    FullGrid,
    /// Only the initial slice and the spatial boundary.
    InitialBoundary,
}

/// One supervised observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    /// Network input (`x, t` or `x, y, t`, zero padded).
    pub point: [f64; MAX_INPUTS],
    pub u: f64,
    /// Time index on the grid.
    pub slice: usize,
    /// Flattened grid index `slice · n_space + s`.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub data: Vec<DataPoint>,
    pub collocation: Vec<[f64; MAX_INPUTS]>,
    pub seed: u64,
}

fn on_boundary(field: &Field, index: usize) -> bool {
    let g = &field.grid;
    let s = index % g.n_space();
    let (ix, iy) = (s / g.ny, s % g.ny);
    index / g.n_space() == 0 || ix == 0 || ix + 1 == g.nx || (g.dims == 2 && (iy == 0 || iy + 1 == g.ny))
}

/// Draws `n_data` distinct grid points (sorted by index) and `n_colloc`
/// Latin-hypercube collocation points in the domain box.
pub fn make_training_set(
    field: &Field,
    n_data: usize,
    n_colloc: usize,
    seed: u64,
    source: DataSource,
) -> Result<TrainingSet, SamplingError> {
    let g = &field.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<usize> = match source {
        DataSource::FullGrid => (0..g.n_total()).collect(),
        DataSource::InitialBoundary => (0..g.n_total()).filter(|&i| on_boundary(field, i)).collect(),
    };
    if n_data > pool.len() {
        return Err(SamplingError::TooManyDataPoints {
            requested: n_data,
            available: pool.len(),
        });
    }
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), n_data)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    let n = g.n_space();
    let data = picked
        .into_iter()
        .map(|i| DataPoint {
            point: g.point_at(i % n, g.t(i / n)),
            u: field.values[i],
            slice: i / n,
            index: i,
        })
        .collect();
    let collocation = lhs(n_colloc, &g.bounds(), &mut rng)?
        .into_iter()
        .map(|p| {
            let mut q = [0.0; MAX_INPUTS];
            q[..p.len()].copy_from_slice(&p);
            q
        })
        .collect();
    Ok(TrainingSet {
        data,
        collocation,
        seed,
    })
}

/// Writes `kind,coordinates…,u` rows; collocation rows leave `u` empty.
pub fn export_csv(path: &Path, set: &TrainingSet, n_inputs: usize) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let names: &[&str] = if n_inputs == 3 { &["x", "y", "t"] } else { &["x", "t"] };
    writeln!(w, "kind,{},u", names.join(","))?;
    let coords = |p: &[f64; MAX_INPUTS]| {
        p[..n_inputs]
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    for d in &set.data {
        writeln!(w, "data,{},{}", coords(&d.point), d.u)?;
    }
    for c in &set.collocation {
        writeln!(w, "collocation,{},", coords(c))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{Grid, PdeKind, PdeSpec};

    fn field() -> Field {
        let g = Grid::standard_1d();
        let values = (0..g.n_total()).map(|i| i as f64).collect();
        Field::new(g, values).unwrap()
    }

    #[test]
    fn one_point_per_stratum() {
        let p = lhs_seeded(4, &[(0.0, 1.0)], 3).unwrap();
        let mut bins: Vec<usize> = p.iter().map(|q| (q[0] * 4.0).floor() as usize).collect();
        bins.sort();
        assert_eq!(bins, vec![0, 1, 2, 3]);
    }

    #[test]
    fn exact_marginals() {
        let p = lhs_seeded(10_000, &[(0.0, 2.0), (0.0, 0.99)], 11).unwrap();
        for (d, hi) in [(0, 2.0), (1, 0.99)] {
            let mut counts = [0usize; 10];
            for q in &p {
                assert!(q[d] >= 0.0 && q[d] <= hi);
                counts[((q[d] / hi * 10.0) as usize).min(9)] += 1;
            }
            assert_eq!(counts, [1000; 10]);
        }
    }

    #[test]
    fn seeded_determinism() {
        assert_eq!(lhs_seeded(50, &[(0.0, 1.0); 3], 5), lhs_seeded(50, &[(0.0, 1.0); 3], 5));
        assert_ne!(lhs_seeded(50, &[(0.0, 1.0); 3], 5), lhs_seeded(50, &[(0.0, 1.0); 3], 6));
        assert!(lhs_seeded(5, &[(1.0, 0.0)], 0).is_err());
    }

    #[test]
    fn full_draw_is_whole_field() {
        let f = field();
        let n = f.grid.n_total();
        let s = make_training_set(&f, n, 0, 1, DataSource::FullGrid).unwrap();
        assert!(s
            .data
            .iter()
            .enumerate()
            .all(|(i, d)| d.index == i && d.u == f.values[i]));
        assert!(matches!(
            make_training_set(&f, n + 1, 0, 1, DataSource::FullGrid),
            Err(SamplingError::TooManyDataPoints { .. })
        ));
    }

    #[test]
    fn standard_configuration() {
        let f = field();
        let a = make_training_set(&f, 100, 10_000, 7, DataSource::FullGrid).unwrap();
        let b = make_training_set(&f, 100, 10_000, 7, DataSource::FullGrid).unwrap();
        let c = make_training_set(&f, 100, 10_000, 8, DataSource::FullGrid).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
        assert_eq!((a.data.len(), a.collocation.len()), (100, 10_000));
        let bounds = f.grid.bounds();
        for p in a
            .collocation
            .iter()
            .map(|c| &c[..2])
            .chain(a.data.iter().map(|d| &d.point[..2]))
        {
            assert!(p.iter().zip(&bounds).all(|(v, (lo, hi))| v >= lo && v <= hi));
        }
        let g = f.grid;
        for d in &a.data {
            assert_eq!(d.point[1], g.t(d.slice));
            assert_eq!(d.u, d.index as f64);
        }
        let off_grid = a
            .collocation
            .iter()
            .filter(|c| ((c[1] / g.dt).round() * g.dt - c[1]).abs() > 1e-12)
            .count();
        assert!(off_grid > 9_900);
    }

    #[test]
    fn initial_boundary_only() {
        let spec = PdeSpec::benchmark(PdeKind::Advection2d);
        let g = spec.default_grid();
        let f = Field::constant(g, 1.0);
        let s = make_training_set(&f, 500, 10, 2, DataSource::InitialBoundary).unwrap();
        for d in &s.data {
            assert!(on_boundary(&f, d.index));
        }
    }
}
