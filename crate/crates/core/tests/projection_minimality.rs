//! The projections return the feasible point nearest to the input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conspinn::projection::{integral, project_both, project_linear, project_quadratic, ConservedKind};

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Feasible competitors are obtained by projecting unrelated random vectors,
/// which covers the constraint set without using the input.
fn check(project: impl Fn(&[f64]) -> Vec<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let n = rng.random_range(2..=24);
        let u = random_vec(&mut rng, n);
        let y = project(&u);
        let best = dist2(&y, &u);
        for _ in 0..100 {
            let z = project(&random_vec(&mut rng, n));
            assert!(
                best <= dist2(&z, &u) * (1.0 + 1e-12) + 1e-12,
                "competitor closer than projection"
            );
        }
    }
}

#[test]
fn linear_projection_is_nearest() {
    check(|u| project_linear(u, 0.7, 0.1).unwrap(), 1);
}

#[test]
fn quadratic_projection_is_nearest() {
    check(|u| project_quadratic(u, 0.9, 0.1).unwrap(), 2);
}

#[test]
fn joint_projection_is_nearest() {
    check(
        |u| {
            let y = project_both(u, 2.0, 0.3, 0.05).unwrap();
            assert!((integral(&y, ConservedKind::Linear, 0.05) - 0.3).abs() < 1e-12);
            y
        },
        3,
    );
}
