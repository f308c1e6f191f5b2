use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{AutodiffError, Jet, Scalar};

/// Small expression tree over the supported elementary operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Input(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Tanh(Box<Expr>),
    Exp(Box<Expr>),
    Sqrt(Box<Expr>),
    Powi(Box<Expr>, i32),
    Powf(Box<Expr>, f64),
}

impl Expr {
    pub fn input(i: usize) -> Self {
        Expr::Input(i)
    }

    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn tanh(self) -> Self {
        Expr::Tanh(Box::new(self))
    }

    pub fn exp(self) -> Self {
        Expr::Exp(Box::new(self))
    }

    pub fn sqrt(self) -> Self {
        Expr::Sqrt(Box::new(self))
    }

    pub fn powi(self, n: i32) -> Self {
        Expr::Powi(Box::new(self), n)
    }

    pub fn powf(self, p: f64) -> Self {
        Expr::Powf(Box::new(self), p)
    }

    /// Plain evaluation at `point`.
    pub fn eval(&self, point: &[f64]) -> Result<f64, AutodiffError> {
        Ok(self.eval_generic(point, None)?.v)
    }

    fn eval_generic(&self, point: &[f64], seed: Option<usize>) -> Result<Jet<f64>, AutodiffError> {
        let rec = |e: &Expr| e.eval_generic(point, seed);
        Ok(match self {
            Expr::Input(i) => {
                let x = *point.get(*i).ok_or(AutodiffError::InputOutOfRange {
                    index: *i,
                    len: point.len(),
                })?;
                if seed == Some(*i) {
                    Jet::variable(x)
                } else {
                    Jet::constant(x)
                }
            }
            Expr::Const(c) => Jet::constant(*c),
            Expr::Add(a, b) => rec(a)? + rec(b)?,
            Expr::Sub(a, b) => rec(a)? - rec(b)?,
            Expr::Mul(a, b) => rec(a)? * rec(b)?,
            Expr::Div(a, b) => {
                let den = rec(b)?;
                if den.v == 0.0 {
                    return Err(AutodiffError::Domain {
                        op: "div",
                        value: den.v,
                    });
                }
                rec(a)? / den
            }
            Expr::Neg(a) => -rec(a)?,
            Expr::Tanh(a) => rec(a)?.tanh(),
            Expr::Exp(a) => rec(a)?.exp(),
            Expr::Sqrt(a) => {
                let x = rec(a)?;
                // derivative lanes blow up at zero as well
                if x.v <= 0.0 {
                    return Err(AutodiffError::Domain { op: "sqrt", value: x.v });
                }
                x.sqrt()
            }
            Expr::Powi(a, n) => {
                let x = rec(a)?;
                if x.v == 0.0 && *n < 0 {
                    return Err(AutodiffError::Domain { op: "powi", value: x.v });
                }
                x.powi(*n)
            }
            Expr::Powf(a, p) => {
                let x = rec(a)?;
                if x.v <= 0.0 {
                    return Err(AutodiffError::Domain { op: "powf", value: x.v });
                }
                x.powf(*p)
            }
        })
    }
}

/// Value and derivatives up to order three of `expr` with respect to input
/// `seed`, evaluated at `point`.
pub fn jet_eval(expr: &Expr, point: &[f64], seed: usize) -> Result<Jet<f64>, AutodiffError> {
    if seed >= point.len() {
        return Err(AutodiffError::InputOutOfRange {
            index: seed,
            len: point.len(),
        });
    }
    expr.eval_generic(point, Some(seed))
}

macro_rules! expr_binop {
    ($tr:ident, $f:ident, $v:ident) => {
        impl $tr for Expr {
            type Output = Expr;
            fn $f(self, o: Expr) -> Expr {
                Expr::$v(Box::new(self), Box::new(o))
            }
        }
        impl $tr<f64> for Expr {
            type Output = Expr;
            fn $f(self, o: f64) -> Expr {
                Expr::$v(Box::new(self), Box::new(Expr::Const(o)))
            }
        }
    };
}

expr_binop!(Add, add, Add);
expr_binop!(Sub, sub, Sub);
expr_binop!(Mul, mul, Mul);
expr_binop!(Div, div, Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_jet() {
        let x = Expr::input(0);
        let j = jet_eval(&(x.clone() * x), &[3.0], 0).unwrap();
        assert_eq!(j, Jet::new(9.0, 6.0, 2.0, 0.0));
    }

    #[test]
    fn tanh_jet() {
        let j = jet_eval(&Expr::input(0).tanh(), &[0.0], 0).unwrap();
        assert_eq!(j, Jet::new(0.0, 1.0, 0.0, -2.0));
    }

    #[test]
    fn unseeded_input_is_constant() {
        // f(x, t) = x * t seeded on t
        let f = Expr::input(0) * Expr::input(1);
        let j = jet_eval(&f, &[2.0, 5.0], 1).unwrap();
        assert_eq!(j, Jet::new(10.0, 2.0, 0.0, 0.0));
    }

    #[test]
    fn domain_errors_name_the_op() {
        let x = Expr::input(0);
        let e = jet_eval(&(Expr::constant(1.0) / (x.clone() - 1.0)), &[1.0], 0).unwrap_err();
        assert!(matches!(e, AutodiffError::Domain { op: "div", .. }));
        let e = jet_eval(&x.clone().sqrt(), &[-0.5], 0).unwrap_err();
        assert!(matches!(e, AutodiffError::Domain { op: "sqrt", .. }));
        let e = jet_eval(&x.powf(1.5), &[-2.0], 0).unwrap_err();
        assert!(matches!(e, AutodiffError::Domain { op: "powf", .. }));
    }

    #[test]
    fn seed_out_of_range() {
        assert!(jet_eval(&Expr::input(0), &[1.0], 3).is_err());
    }
}
