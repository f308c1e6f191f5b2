//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::Objective;
use crate::Error;

use super::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
    /// Stop once `‖∇L‖∞` is at or below this value.
    pub grad_tol: f64,
    pub max_epochs: usize,
    /// Optional relative decrease threshold `|ΔL| ≤ ftol·max(1, |L|)`.
    pub ftol: Option<f64>,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 50,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            grad_tol: 1e-6,
            max_epochs: 20_000,
            ftol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Gradient infinity norm reached the tolerance.
    Converged,
    /// Epoch cap reached.
    MaxEpochs,
    /// No step satisfying the Wolfe conditions was found.
    LineSearchFailed,
    /// Relative decrease fell below `ftol`.
    FunctionTolerance,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult<I> {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf: f64,
    pub epochs: usize,
    pub evaluations: usize,
    pub stop: StopReason,
    /// Value and side information after each epoch.
    pub trace: Vec<(f64, I)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Point<I> {
    alpha: f64,
    f: f64,
    slope: f64,
    grad: Vec<f64>,
    info: I,
}

struct LineSearch<'a, O: Objective> {
    obj: &'a O,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    cfg: &'a LbfgsConfig,
    evals: usize,
    trial: Vec<f64>,
}

impl<O: Objective> LineSearch<'_, O> {
    fn eval(&mut self, alpha: f64) -> Result<Point<O::Info>, Error> {
        self.evals += 1;
        for ((t, x), d) in self.trial.iter_mut().zip(self.x).zip(self.dir) {
            *t = x + alpha * d;
        }
        let mut grad = vec![0.0; self.x.len()];
        let (f, info) = self.obj.evaluate(&self.trial, &mut grad)?;
        let slope = dot(&grad, self.dir);
        Ok(Point {
            alpha,
            f,
            slope,
            grad,
            info,
        })
    }

    fn armijo(&self, p: &Point<O::Info>) -> bool {
        p.f.is_finite() && p.f <= self.f0 + self.cfg.c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Point<O::Info>) -> bool {
        p.slope.abs() <= -self.cfg.c2 * self.slope0
    }

    fn budget(&self) -> bool {
        self.evals < self.cfg.max_line_search
    }

    /// Bracketing phase; returns an accepted point or `None`.
    fn run(&mut self, alpha0: f64) -> Result<Option<Point<O::Info>>, Error> {
        let mut prev = Point {
            alpha: 0.0,
            f: self.f0,
            slope: self.slope0,
            grad: Vec::new(),
            info: None,
        };
        let mut alpha = alpha0;
        let mut first = true;
        while self.budget() {
            let p = self.eval(alpha)?;
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(prev, p.without_info());
            }
            if self.curvature(&p) {
                return Ok(Some(p));
            }
            if p.slope >= 0.0 {
                let hi = prev;
                return self.zoom(p.with_some(), hi);
            }
            prev = p.with_some();
            alpha *= 2.0;
            first = false;
        }
        Ok(prev.accept())
    }

    fn zoom(
        &mut self,
        mut lo: Point<Option<O::Info>>,
        mut hi: Point<Option<O::Info>>,
    ) -> Result<Option<Point<O::Info>>, Error> {
        while self.budget() {
            let alpha = interpolate(&lo, &hi);
            let p = self.eval(alpha)?;
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p.without_info();
            } else {
                if self.curvature(&p) {
                    return Ok(Some(p));
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p.with_some();
            }
            if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
                break;
            }
        }
        Ok(lo.accept())
    }
}

impl<I> Point<I> {
    fn with_some(self) -> Point<Option<I>> {
        Point {
            alpha: self.alpha,
            f: self.f,
            slope: self.slope,
            grad: self.grad,
            info: Some(self.info),
        }
    }

    fn without_info(self) -> Point<Option<I>> {
        Point {
            alpha: self.alpha,
            f: self.f,
            slope: self.slope,
            grad: Vec::new(),
            info: None,
        }
    }
}

impl<I> Point<Option<I>> {
    /// A bracket end with a stored evaluation and positive step satisfies
    /// sufficient decrease and is usable as a fallback.
    fn accept(self) -> Option<Point<I>> {
        match self.info {
            Some(info) if self.alpha > 0.0 => Some(Point {
                alpha: self.alpha,
                f: self.f,
                slope: self.slope,
                grad: self.grad,
                info,
            }),
            _ => None,
        }
    }
}

/// Safeguarded cubic interpolation between bracket ends, bisection otherwise.
fn interpolate<I>(lo: &Point<I>, hi: &Point<I>) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.f.is_finite() || !hi.slope.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (lo_b, hi_b) = (a.min(b), a.max(b));
    let margin = 0.1 * (hi_b - lo_b);
    if t.is_finite() && t >= lo_b + margin && t <= hi_b - margin {
        t
    } else {
        mid
    }
}

/// Two-loop recursion for `−H·g`.
fn direction(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `obj` from `x0`.
///
/// A non-finite objective value at an accepted point is reported as
/// [`TrainingError::TrainingDiverged`].
pub fn minimize<O: Objective>(obj: &O, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult<O::Info>, Error> {
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x.len()];
    let (mut f, _) = obj.evaluate(&x, &mut grad)?;
    let mut evaluations = 1;
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainingError::TrainingDiverged { epoch: 0 }.into());
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut trace = Vec::new();
    let mut epochs = 0;
    let stop = loop {
        if inf_norm(&grad) <= cfg.grad_tol {
            break StopReason::Converged;
        }
        if epochs >= cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
        let mut dir = direction(&grad, &memory);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            memory.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let alpha0 = if memory.is_empty() {
            (1.0 / grad.iter().map(|g| g.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let mut ls = LineSearch {
            obj,
            x: &x,
            dir: &dir,
            f0: f,
            slope0: slope,
            cfg,
            evals: 0,
            trial: vec![0.0; x.len()],
        };
        let accepted = ls.run(alpha0)?;
        evaluations += ls.evals;
        let Some(p) = accepted else {
            if !memory.is_empty() {
                memory.clear();
                continue;
            }
            break StopReason::LineSearchFailed;
        };
        let s: Vec<f64> = dir.iter().map(|d| p.alpha * d).collect();
        let y: Vec<f64> = p.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if memory.len() == cfg.history {
                memory.pop_front();
            }
            memory.push_back((s.clone(), y, 1.0 / sy));
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let f_old = f;
        f = p.f;
        grad = p.grad;
        epochs += 1;
        trace.push((f, p.info));
        if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainingError::TrainingDiverged { epoch: epochs }.into());
        }
        if let Some(tol) = cfg.ftol {
            if (f_old - f).abs() <= tol * f.abs().max(1.0) {
                break StopReason::FunctionTolerance;
            }
        }
    };
    Ok(LbfgsResult {
        grad_inf: inf_norm(&grad),
        x,
        f,
        epochs,
        evaluations,
        stop,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::FnObjective;

    fn quadratic(n: usize) -> (impl Objective<Info = ()>, Vec<f64>) {
        // f = ½ Σ dᵢ (xᵢ − mᵢ)² with condition number 100
        let d: Vec<f64> = (0..n).map(|i| 1.0 + 99.0 * i as f64 / (n - 1) as f64).collect();
        let m: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let (d2, m2) = (d.clone(), m.clone());
        let obj = FnObjective::new(n, move |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..x.len() {
                let r = x[i] - m2[i];
                f += 0.5 * d2[i] * r * r;
                g[i] = d2[i] * r;
            }
            f
        });
        (obj, m)
    }

    #[test]
    fn convex_quadratic_converges() {
        let (obj, m) = quadratic(20);
        let cfg = LbfgsConfig {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let r = minimize(&obj, &[0.0; 20], &cfg).unwrap();
        assert_eq!(r.stop, StopReason::Converged);
        assert!(r.epochs <= 50, "{} epochs", r.epochs);
        assert!(r.x.iter().zip(&m).all(|(a, b)| (a - b).abs() < 1e-8));
        assert_eq!(r.trace.len(), r.epochs);
    }

    #[test]
    fn rosenbrock() {
        let obj = FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        });
        let cfg = LbfgsConfig {
            grad_tol: 1e-9,
            ..Default::default()
        };
        let r = minimize(&obj, &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(r.stop, StopReason::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn converged_at_start() {
        let (obj, m) = quadratic(5);
        let r = minimize(&obj, &m, &LbfgsConfig::default()).unwrap();
        assert_eq!((r.epochs, r.stop), (0, StopReason::Converged));
        assert_eq!(r.x, m);
    }

    #[test]
    fn epoch_cap() {
        let (obj, _) = quadratic(30);
        let cfg = LbfgsConfig {
            grad_tol: 0.0,
            max_epochs: 3,
            ..Default::default()
        };
        let r = minimize(&obj, &vec![5.0; 30], &cfg).unwrap();
        assert_eq!((r.epochs, r.stop), (3, StopReason::MaxEpochs));
    }

    #[test]
    fn non_finite_loss_diverges() {
        let obj = FnObjective::new(1, |_: &[f64], g: &mut [f64]| {
            g[0] = 1.0;
            f64::NAN
        });
        assert!(matches!(
            minimize(&obj, &[0.0], &LbfgsConfig::default()),
            Err(Error::Training(TrainingError::TrainingDiverged { epoch: 0 }))
        ));
    }

    #[test]
    fn wolfe_conditions_hold_on_accepted_steps() {
        let (obj, _) = quadratic(10);
        let x0 = vec![2.0; 10];
        let cfg = LbfgsConfig::default();
        let (f0, g0) = obj.value_and_grad(&x0).unwrap();
        let dir: Vec<f64> = g0.iter().map(|g| -g).collect();
        let slope0 = dot(&g0, &dir);
        let mut ls = LineSearch {
            obj: &obj,
            x: &x0,
            dir: &dir,
            f0,
            slope0,
            cfg: &cfg,
            evals: 0,
            trial: vec![0.0; 10],
        };
        let p = ls.run(1.0).unwrap().unwrap();
        assert!(p.f <= f0 + cfg.c1 * p.alpha * slope0);
        assert!(p.slope.abs() <= -cfg.c2 * slope0);
    }
}
