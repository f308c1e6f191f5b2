//! Spectral density of the loss Hessian by stochastic Lanczos quadrature.
//!
//! Each Rademacher probe `v` yields `m` Lanczos steps with full
//! reorthogonalisation; the Ritz values of the tridiagonal matrix are the
//! quadrature nodes and the squared first components of its eigenvectors
//! the weights. Nodes from all probes are smoothed with Gaussian kernels.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{hvp, Objective};
use crate::par;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlqConfig {
    pub probes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Kernel variance before scaling by the spectral range.
    pub variance: f64,
    /// Minimum number of samples on the eigenvalue axis.
    pub min_samples: usize,
}

impl Default for SlqConfig {
    fn default() -> Self {
        SlqConfig {
            probes: 10,
            steps: 100,
            seed: 0,
            variance: 4e-5,
            min_samples: 2000,
        }
    }
}

/// Gauss quadrature rule of one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub probes: Vec<ProbeRule>,
    pub steps: usize,
    /// Kernel variance actually used.
    pub variance: f64,
    pub axis: Vec<f64>,
    pub density: Vec<f64>,
}

impl SpectralDensity {
    /// Largest Ritz value over all probes.
    pub fn max_eig(&self) -> f64 {
        self.probes
            .iter()
            .flat_map(|p| p.nodes.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_eig(&self) -> f64 {
        self.probes
            .iter()
            .flat_map(|p| p.nodes.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Trapezoidal integral of the smoothed density.
    pub fn mass(&self) -> f64 {
        self.axis
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn write_csv(&self, path: &Path, config_hash: &str) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# config_hash={config_hash}")?;
        writeln!(w, "eigenvalue,density")?;
        for (x, d) in self.axis.iter().zip(&self.density) {
            writeln!(w, "{x:.9e},{d:.9e}")?;
        }
        w.flush()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lanczos tridiagonalisation started from `v0`, with full
/// reorthogonalisation. Returns the diagonal and off-diagonal; stops early
/// when the Krylov space becomes invariant.
pub fn lanczos<F>(mut matvec: F, v0: &[f64], steps: usize) -> Result<(Vec<f64>, Vec<f64>), Error>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, Error>,
{
    let n = v0.len();
    let norm = dot(v0, v0).sqrt();
    let mut basis: Vec<Vec<f64>> = vec![v0.iter().map(|x| x / norm).collect()];
    let mut alpha = Vec::with_capacity(steps);
    let mut beta = Vec::with_capacity(steps);
    let mut scale = 0.0f64;
    for j in 0..steps.min(n) {
        let q = &basis[j];
        let mut w = matvec(q)?;
        let a = dot(&w, q);
        alpha.push(a);
        for (wi, qi) in w.iter_mut().zip(q) {
            *wi -= a * qi;
        }
        if j > 0 {
            let b: f64 = beta[j - 1];
            for (wi, pi) in w.iter_mut().zip(&basis[j - 1]) {
                *wi -= b * pi;
            }
        }
        for _ in 0..2 {
            for p in &basis {
                let c = dot(&w, p);
                for (wi, pi) in w.iter_mut().zip(p) {
                    *wi -= c * pi;
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        scale = scale.max(a.abs()).max(b);
        if j + 1 == steps.min(n) || b <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    Ok((alpha, beta))
}

/// Eigenvalues of the symmetric tridiagonal matrix `(diag, off)` and the
/// first component of each normalised eigenvector (implicit QL).
pub fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&off[..n.saturating_sub(1)]);
    let mut z = vec![0.0; n];
    if n > 0 {
        z[0] = 1.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 200 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    (d, z)
}

/// Quadrature rule of one probe vector.
pub fn probe_rule<F>(matvec: F, v0: &[f64], steps: usize) -> Result<ProbeRule, Error>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, Error>,
{
    let (a, b) = lanczos(matvec, v0, steps)?;
    let (nodes, first) = tridiagonal_eigen(&a, &b);
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&i, &j| nodes[i].total_cmp(&nodes[j]));
    Ok(ProbeRule {
        nodes: order.iter().map(|&i| nodes[i]).collect(),
        weights: order.iter().map(|&i| first[i] * first[i]).collect(),
    })
}

fn rademacher(dim: usize, seed: u64, probe: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(probe as u64);
    (0..dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Smooths the probe rules into a density on a uniform axis. The kernel
/// variance is `variance · max(1, λ_max − λ_min)`.
pub fn smooth(probes: Vec<ProbeRule>, steps: usize, cfg: &SlqConfig) -> SpectralDensity {
    let (lo, hi) = probes
        .iter()
        .flat_map(|p| p.nodes.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let variance = cfg.variance * (hi - lo).max(1.0);
    let sigma = variance.sqrt();
    let (a, b) = (lo - 5.0 * sigma, hi + 5.0 * sigma);
    let samples = (((b - a) / (sigma / 4.0)).ceil() as usize + 1).clamp(cfg.min_samples.max(2), 2_000_000);
    let axis: Vec<f64> = (0..samples)
        .map(|i| a + (b - a) * i as f64 / (samples - 1) as f64)
        .collect();
    let norm = 1.0 / ((2.0 * std::f64::consts::PI * variance).sqrt() * probes.len() as f64);
    let mut density = vec![0.0; samples];
    let h = (b - a) / (samples - 1) as f64;
    for p in &probes {
        for (&x0, &w) in p.nodes.iter().zip(&p.weights) {
            let i0 = (((x0 - 6.0 * sigma - a) / h).floor().max(0.0)) as usize;
            let i1 = ((((x0 + 6.0 * sigma - a) / h).ceil()) as usize).min(samples - 1);
            for i in i0..=i1 {
                let z = axis[i] - x0;
                density[i] += w * norm * (-z * z / (2.0 * variance)).exp();
            }
        }
    }
    SpectralDensity {
        probes,
        steps,
        variance,
        axis,
        density,
    }
}

/// SLQ with a user supplied Hessian-vector product.
pub fn slq_with<F>(matvec: F, dim: usize, cfg: &SlqConfig) -> Result<SpectralDensity, Error>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, Error> + Sync + Send,
{
    let probes = par::map_indexed(cfg.probes, |k| {
        probe_rule(&matvec, &rademacher(dim, cfg.seed, k), cfg.steps)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(smooth(probes, cfg.steps, cfg))
}

/// SLQ of the Hessian of `obj` at `params`.
pub fn slq<O: Objective + Sync>(obj: &O, params: &[f64], cfg: &SlqConfig) -> Result<SpectralDensity, Error> {
    slq_with(|v| hvp(obj, params, v), obj.dim(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::FnObjective;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn diag_matvec(d: Vec<f64>) -> impl Fn(&[f64]) -> Result<Vec<f64>, Error> + Sync + Send {
        move |v| Ok(v.iter().zip(&d).map(|(x, l)| x * l).collect())
    }

    #[test]
    fn full_krylov_recovers_diagonal() {
        let cfg = SlqConfig {
            probes: 3,
            steps: 3,
            ..Default::default()
        };
        let s = slq_with(diag_matvec(vec![1.0, 2.0, 3.0]), 3, &cfg).unwrap();
        for p in &s.probes {
            assert_eq!(p.nodes.len(), 3);
            for (n, e) in p.nodes.iter().zip([1.0, 2.0, 3.0]) {
                assert!((n - e).abs() < 1e-10);
            }
            assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for w in &p.weights {
                assert!((w - 1.0 / 3.0).abs() < 1e-10);
            }
        }
        assert!((s.max_eig() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn identity_is_a_spike() {
        let obj = FnObjective::new(20, |x: &[f64], g: &mut [f64]| {
            g.copy_from_slice(x);
            0.5 * x.iter().map(|v| v * v).sum::<f64>()
        });
        let s = slq(&obj, &[0.3; 20], &SlqConfig::default()).unwrap();
        for p in &s.probes {
            assert_eq!(p.nodes.len(), 1);
            assert!((p.nodes[0] - 1.0).abs() < 1e-8);
            assert!((p.weights[0] - 1.0).abs() < 1e-12);
        }
        assert!((s.mass() - 1.0).abs() < 1e-2);
        let peak = s.density.iter().cloned().fold(0.0, f64::max);
        let at = s.axis[s.density.iter().position(|&d| d == peak).unwrap()];
        assert!((at - 1.0).abs() < 1e-3);
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 5, 30] {
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let e: Vec<f64> = (0..n.max(1) - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (eig, first) = tridiagonal_eigen(&d, &e);
            let m = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    d[i]
                } else if i + 1 == j {
                    e[i]
                } else if j + 1 == i {
                    e[j]
                } else {
                    0.0
                }
            });
            let dense = SymmetricEigen::new(m);
            let mut a: Vec<(f64, f64)> = eig.iter().zip(&first).map(|(l, z)| (*l, z * z)).collect();
            let mut b: Vec<(f64, f64)> = dense
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(k, l)| (*l, dense.eigenvectors[(0, k)].powi(2)))
                .collect();
            a.sort_by(|x, y| x.0.total_cmp(&y.0));
            b.sort_by(|x, y| x.0.total_cmp(&y.0));
            for (x, y) in a.iter().zip(&b) {
                assert!((x.0 - y.0).abs() < 1e-10 && (x.1 - y.1).abs() < 1e-10, "{x:?} vs {y:?}");
            }
        }
    }

    #[test]
    fn ritz_values_inside_spectrum_and_mass_one() {
        let d: Vec<f64> = (0..300).map(|i| 0.01 + (i as f64 / 30.0).powi(3)).collect();
        let (lo, hi) = (d[0], d[299]);
        let cfg = SlqConfig {
            probes: 4,
            steps: 40,
            seed: 9,
            ..Default::default()
        };
        let s = slq_with(diag_matvec(d), 300, &cfg).unwrap();
        for p in &s.probes {
            assert!(p.nodes.iter().all(|&x| x >= lo - 1e-9 && x <= hi + 1e-9));
        }
        assert!((s.max_eig() - hi).abs() / hi < 1e-6);
        let m = s.mass();
        assert!((0.98..=1.02).contains(&m), "mass {m}");
    }

    #[test]
    fn deterministic_per_seed() {
        // 1-D Laplacian: eigenvectors are not axis aligned, so the weights
        // depend on the probe signs
        let lap = |v: &[f64]| -> Result<Vec<f64>, Error> {
            let n = v.len();
            Ok((0..n)
                .map(|i| 2.0 * v[i] - if i > 0 { v[i - 1] } else { 0.0 } - if i + 1 < n { v[i + 1] } else { 0.0 })
                .collect())
        };
        let cfg = SlqConfig {
            probes: 2,
            steps: 10,
            seed: 3,
            ..Default::default()
        };
        let a = slq_with(lap, 50, &cfg).unwrap();
        let b = slq_with(lap, 50, &cfg).unwrap();
        assert_eq!(a, b);
        let c = slq_with(lap, 50, &SlqConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.probes, c.probes);
    }
}
