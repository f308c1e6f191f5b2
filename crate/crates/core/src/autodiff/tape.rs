//! Scalar reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends one node holding the
//! indices of its (at most two) operands and the local partial derivatives.
//! A backward sweep from one output accumulates one adjoint per node.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{AutodiffError, Scalar};

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Append-only operation record. One tape per evaluation context.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Requires exclusive access, so no live
    /// [`Var`] can outlive the reset.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// A new independent variable (leaf).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, [NO_PARENT; 2], [0.0; 2])
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    #[inline]
    fn push(&self, value: f64, parents: [u32; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node { parents, partials });
        Var {
            tape: self,
            index,
            value,
        }
    }

    #[inline]
    fn unary(&self, a: &Var<'_>, value: f64, da: f64) -> Var<'_> {
        self.push(value, [a.index, NO_PARENT], [da, 0.0])
    }

    #[inline]
    fn binary(&self, a: &Var<'_>, b: &Var<'_>, value: f64, da: f64, db: f64) -> Var<'_> {
        self.push(value, [a.index, b.index], [da, db])
    }

    /// Reverse sweep from `output`.
    pub fn gradient(&self, output: Var<'_>) -> Result<Adjoints, AutodiffError> {
        if !std::ptr::eq(output.tape, self) {
            return Err(AutodiffError::ForeignVariable);
        }
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let out = output.index as usize;
        let mut adj = vec![0.0; nodes.len()];
        adj[out] = 1.0;
        for i in (0..=out).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adj[p as usize] += node.partials[k] * a;
                }
            }
        }
        Ok(Adjoints {
            tape: self as *const Tape as usize,
            values: adj,
        })
    }
}

/// Adjoints produced by one backward sweep, one per recorded node.
#[derive(Debug, Clone)]
pub struct Adjoints {
    tape: usize,
    values: Vec<f64>,
}

impl Adjoints {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// d(output)/d(v). Variables recorded after the output have adjoint zero.
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        debug_assert_eq!(self.tape, v.tape as *const Tape as usize);
        self.values.get(v.index as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.wrt(v)).collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, {})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }
}

/// Gradient of a taped scalar `loss` with respect to `params`.
pub fn grad(loss: Var<'_>, params: &[Var<'_>]) -> Result<Vec<f64>, AutodiffError> {
    if params.iter().any(|p| !std::ptr::eq(p.tape, loss.tape)) {
        return Err(AutodiffError::ForeignVariable);
    }
    Ok(loss.tape.gradient(loss)?.wrt_all(params))
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn add(self, o: Self) -> Self {
        self.tape.binary(&self, &o, self.value + o.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self.tape.binary(&self, &o, self.value - o.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn mul(self, o: Self) -> Self {
        self.tape.binary(&self, &o, self.value * o.value, o.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.value / o.value;
        self.tape.binary(&self, &o, q, 1.0 / o.value, -q / o.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn neg(self) -> Self {
        self.tape.unary(&self, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.shift(c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.scale(c)
    }
}

impl<'t> Scalar for Var<'t> {
    fn lift(&self, c: f64) -> Self {
        self.tape.var(c)
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn scale(self, c: f64) -> Self {
        self.tape.unary(&self, self.value * c, c)
    }

    fn shift(self, c: f64) -> Self {
        self.tape.unary(&self, self.value + c, 1.0)
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.tape.unary(&self, t, 1.0 - t * t)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.tape.unary(&self, e, e)
    }

    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.tape.unary(&self, s, 0.5 / s)
    }

    fn powi(self, n: i32) -> Self {
        let d = if n == 0 { 0.0 } else { n as f64 * self.value.powi(n - 1) };
        self.tape.unary(&self, self.value.powi(n), d)
    }

    fn powf(self, p: f64) -> Self {
        let d = if p == 0.0 { 0.0 } else { p * self.value.powf(p - 1.0) };
        self.tape.unary(&self, self.value.powf(p), d)
    }

    fn square(self) -> Self {
        self.tape.unary(&self, self.value * self.value, 2.0 * self.value)
    }

    fn recip(self) -> Self {
        let r = 1.0 / self.value;
        self.tape.unary(&self, r, -r * r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let theta = tape.vars(&[0.5, -1.0, 2.0]);
        let loss = theta.iter().skip(1).fold(theta[0].square(), |acc, t| acc + t.square());
        let g = grad(loss, &theta).unwrap();
        assert_eq!(g, vec![1.0, -2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let tape = Tape::new();
        let theta = tape.vars(&[1.0, 2.0]);
        let loss = theta[0].lift(3.5);
        assert_eq!(grad(loss, &theta).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn foreign_output_is_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = b.var(1.0);
        assert!(matches!(a.gradient(x), Err(AutodiffError::ForeignVariable)));
        let y = a.var(1.0);
        assert!(matches!(grad(y, &[x]), Err(AutodiffError::ForeignVariable)));
    }

    #[test]
    fn one_adjoint_per_node() {
        let tape = Tape::new();
        let x = tape.var(0.3);
        let y = (x * x).tanh() / (x.exp() + x);
        let adj = tape.gradient(y).unwrap();
        assert_eq!(adj.len(), tape.len());
    }

    #[test]
    fn cleared_tape_reports_empty() {
        let mut tape = Tape::new();
        {
            let x = tape.var(1.0);
            let _ = x * x;
        }
        tape.clear();
        assert!(tape.is_empty());
    }

    #[test]
    fn reused_variable_accumulates() {
        // d/dx [x * sin-free mix] = d/dx (x^3 + 2x) = 3x^2 + 2
        let tape = Tape::new();
        let x = tape.var(1.5);
        let y = x * x * x + x.scale(2.0);
        let g = grad(y, &[x]).unwrap()[0];
        assert!((g - (3.0 * 2.25 + 2.0)).abs() < 1e-14);
    }
}
