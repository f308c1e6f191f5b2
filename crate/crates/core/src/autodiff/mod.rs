//! Forward jets for input derivatives and a scalar reverse-mode tape for
//! parameter gradients.
//!
//! The two compose: a [`Jet`] whose lanes are tape [`Var`]s carries input
//! derivatives of a network while every lane stays differentiable with
//! respect to the network weights.

mod expr;
mod jet;
mod scalar;
mod tape;

pub use expr::{jet_eval, Expr};
pub use jet::Jet;
pub use scalar::{compensated_sum, Real, Scalar};
pub use tape::{grad, Adjoints, Tape, Var};

use crate::Error;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("domain error in `{op}` at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("tape is empty")]
    EmptyTape,
    #[error("variable is not recorded on this tape")]
    ForeignVariable,
    #[error("input index {index} out of range for point of length {len}")]
    InputOutOfRange { index: usize, len: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// A scalar function of a flat parameter vector with its gradient.
pub trait Objective {
    /// Side information reported with each evaluation (loss breakdowns etc).
    type Info: Clone;

    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the value.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> Result<(f64, Self::Info), Error>;

    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        let mut g = vec![0.0; self.dim()];
        let (f, _) = self.evaluate(x, &mut g)?;
        Ok((f, g))
    }
}

/// Objective backed by a closure returning value and writing the gradient.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    type Info = ();

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> Result<(f64, ()), Error> {
        check_len(self.dim, x.len())?;
        Ok(((self.f)(x, grad), ()))
    }
}

/// Objective whose loss is rebuilt on a fresh tape at every evaluation.
pub struct TapedObjective<F> {
    dim: usize,
    build: F,
}

impl<F> TapedObjective<F>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    pub fn new(dim: usize, build: F) -> Self {
        TapedObjective { dim, build }
    }
}

impl<F> Objective for TapedObjective<F>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    type Info = ();

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64], g: &mut [f64]) -> Result<(f64, ()), Error> {
        check_len(self.dim, x.len())?;
        let tape = Tape::with_capacity(4 * x.len());
        let params = tape.vars(x);
        let loss = (self.build)(&tape, &params);
        let adj = tape.gradient(loss)?;
        for (gi, p) in g.iter_mut().zip(&params) {
            *gi = adj.wrt(p);
        }
        Ok((loss.value(), ()))
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), AutodiffError> {
    if expected != got {
        Err(AutodiffError::ShapeMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Hessian-vector product by central differences of the gradient,
/// `(∇L(θ + εv) − ∇L(θ − εv)) / 2ε` with `ε = ∛eps · (1 + ‖θ‖) / ‖v‖`.
pub fn hvp<O: Objective + ?Sized>(obj: &O, params: &[f64], v: &[f64]) -> Result<Vec<f64>, Error> {
    let n = obj.dim();
    check_len(n, params.len())?;
    check_len(n, v.len())?;
    let vnorm = norm2(v);
    if vnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let eps = f64::EPSILON.cbrt() * (1.0 + norm2(params)) / vnorm;
    let plus: Vec<f64> = params.iter().zip(v).map(|(p, d)| p + eps * d).collect();
    let minus: Vec<f64> = params.iter().zip(v).map(|(p, d)| p - eps * d).collect();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    obj.evaluate(&plus, &mut gp)?;
    obj.evaluate(&minus, &mut gm)?;
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(a: [[f64; 3]; 3]) -> impl Objective {
        FnObjective::new(3, move |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..3 {
                let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
                g[i] = ax;
                f += 0.5 * x[i] * ax;
            }
            f
        })
    }

    #[test]
    fn hvp_of_quadratic_is_exact() {
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]];
        let obj = quadratic(a);
        let v = [0.3, -1.2, 0.7];
        let hv = hvp(&obj, &[1.0, 2.0, -1.0], &v).unwrap();
        for i in 0..3 {
            let exact: f64 = (0..3).map(|j| a[i][j] * v[j]).sum();
            assert!((hv[i] - exact).abs() < 1e-9, "{} vs {}", hv[i], exact);
        }
    }

    #[test]
    fn hvp_of_zero_direction() {
        let obj = quadratic([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(hvp(&obj, &[1.0, 1.0, 1.0], &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hvp_shape_mismatch() {
        let obj = quadratic([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(hvp(&obj, &[1.0, 1.0, 1.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn taped_objective_matches_closed_form() {
        let obj = TapedObjective::new(2, |_t, p| (p[0] * p[1]).tanh() + p[0].square());
        let (f, g) = obj.value_and_grad(&[0.4, -0.7]).unwrap();
        let s = (0.4f64 * -0.7).tanh();
        assert!((f - (s + 0.16)).abs() < 1e-15);
        let sech2 = 1.0 - s * s;
        assert!((g[0] - (sech2 * -0.7 + 0.8)).abs() < 1e-15);
        assert!((g[1] - sech2 * 0.4).abs() < 1e-15);
    }
}
