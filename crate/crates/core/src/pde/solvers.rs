//! Reference solvers.
//!
//! Advection and the wave equation use fifth-order WENO-JS reconstruction in
//! flux form with SSP-RK3 sub-stepping; KdV and reaction–diffusion use
//! Crank–Nicolson. Boundaries mirror interior values into ghost cells. For
//! advection, the wave equation and reaction–diffusion the normal flux
//! through each wall is zero, so the discrete linear integral changes only
//! through sources; KdV keeps the flux implied by the mirrored ghosts.

use serde::{Deserialize, Serialize};

use super::{Coefficients, Field, Grid, PdeError, PdeKind, PdeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Courant number bound for the explicit schemes.
    pub cfl: f64,
    /// Crank–Nicolson steps per output interval for KdV.
    pub kdv_substeps: usize,
    /// Fixed-point corrections of the lagged KdV advection speed per step.
    pub kdv_picard: usize,
    /// Crank–Nicolson steps per output interval for reaction–diffusion.
    pub rd_substeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cfl: 0.4,
            kdv_substeps: 10,
            kdv_picard: 1,
            rd_substeps: 1,
        }
    }
}

impl SolverOptions {
    pub fn tag(&self, kind: PdeKind) -> String {
        match kind {
            PdeKind::Advection1d | PdeKind::Advection2d | PdeKind::Wave => {
                format!("weno5js-ssprk3-cfl{}", self.cfl)
            }
            PdeKind::Kdv => format!("cn-sub{}-picard{}", self.kdv_substeps, self.kdv_picard),
            PdeKind::ReactionDiffusion => format!("cn-sub{}", self.rd_substeps),
        }
    }
}

pub fn solve_reference(spec: &PdeSpec, grid: &Grid) -> Result<Field, PdeError> {
    solve_reference_with(spec, grid, &SolverOptions::default())
}

pub fn solve_reference_with(spec: &PdeSpec, grid: &Grid, opts: &SolverOptions) -> Result<Field, PdeError> {
    grid.validate()?;
    if grid.dims != spec.kind.spatial_dims() {
        return Err(PdeError::GridMismatch(format!(
            "{} needs a {}-D grid, got {}-D",
            spec.kind,
            spec.kind.spatial_dims(),
            grid.dims
        )));
    }
    match (spec.kind, spec.coefficients) {
        (PdeKind::Advection1d | PdeKind::Advection2d, Coefficients::Advection { c }) => advection(spec, grid, c, opts),
        (PdeKind::Wave, Coefficients::Wave { c }) => wave(spec, grid, c, opts),
        (PdeKind::Kdv, Coefficients::Kdv { a, b }) => kdv(spec, grid, a, b, opts),
        (PdeKind::ReactionDiffusion, Coefficients::ReactionDiffusion { d, k }) => {
            reaction_diffusion(spec, grid, d, k, opts)
        }
        _ => Err(PdeError::GridMismatch(format!(
            "coefficients {:?} do not belong to {}",
            spec.coefficients, spec.kind
        ))),
    }
}

fn check_finite(u: &[f64], step: usize) -> Result<(), PdeError> {
    if u.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PdeError::SolverBlowUp { step })
    }
}

const GHOST: usize = 3;

/// WENO5-JS value at the face between `v[2]` and `v[3]`, biased towards
/// `v[0..5]` read in the upwind direction.
#[inline]
fn weno5(v1: f64, v2: f64, v3: f64, v4: f64, v5: f64) -> f64 {
    const EPS: f64 = 1e-6;
    let q0 = (2.0 * v1 - 7.0 * v2 + 11.0 * v3) / 6.0;
    let q1 = (-v2 + 5.0 * v3 + 2.0 * v4) / 6.0;
    let q2 = (2.0 * v3 + 5.0 * v4 - v5) / 6.0;
    let b0 = 13.0 / 12.0 * (v1 - 2.0 * v2 + v3).powi(2) + 0.25 * (v1 - 4.0 * v2 + 3.0 * v3).powi(2);
    let b1 = 13.0 / 12.0 * (v2 - 2.0 * v3 + v4).powi(2) + 0.25 * (v2 - v4).powi(2);
    let b2 = 13.0 / 12.0 * (v3 - 2.0 * v4 + v5).powi(2) + 0.25 * (3.0 * v3 - 4.0 * v4 + v5).powi(2);
    let a0 = 0.1 / (EPS + b0).powi(2);
    let a1 = 0.6 / (EPS + b1).powi(2);
    let a2 = 0.3 / (EPS + b2).powi(2);
    (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)
}

/// Upwind face values on the `n + 1` faces of a padded line
/// (`GHOST` ghost cells on each side); face `f` sits left of cell `f`.
fn face_values(padded: &[f64], n: usize, speed: f64, faces: &mut [f64]) {
    debug_assert_eq!(padded.len(), n + 2 * GHOST);
    for (f, out) in faces.iter_mut().enumerate().take(n + 1) {
        // cells left and right of the face in padded indexing
        let l = f + GHOST - 1;
        *out = if speed >= 0.0 {
            weno5(padded[l - 2], padded[l - 1], padded[l], padded[l + 1], padded[l + 2])
        } else {
            let r = l + 1;
            weno5(padded[r + 2], padded[r + 1], padded[r], padded[r - 1], padded[r - 2])
        };
    }
}

/// Copies `line` into `padded` with mirrored ghosts.
fn pad_mirror(line: &[f64], padded: &mut [f64]) {
    let n = line.len();
    padded[GHOST..GHOST + n].copy_from_slice(line);
    for g in 0..GHOST {
        padded[GHOST - 1 - g] = line[g];
        padded[GHOST + n + g] = line[n - 1 - g];
    }
}

/// Adds `-c·∂u/∂s` along a line with zero flux through both walls.
fn advect_line(line: &[f64], c: f64, inv_h: f64, padded: &mut [f64], faces: &mut [f64], out: &mut [f64]) {
    let n = line.len();
    pad_mirror(line, padded);
    face_values(padded, n, c, faces);
    faces[0] = 0.0;
    faces[n] = 0.0;
    for i in 0..n {
        out[i] -= c * (faces[i + 1] - faces[i]) * inv_h;
    }
}

struct Scratch {
    padded: Vec<f64>,
    faces: Vec<f64>,
    line: Vec<f64>,
    acc: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            padded: vec![0.0; n + 2 * GHOST],
            faces: vec![0.0; n + 1],
            line: vec![0.0; n],
            acc: vec![0.0; n],
        }
    }
}

fn advection_rhs(grid: &Grid, c: f64, u: &[f64], rhs: &mut [f64], s: &mut [Scratch; 2]) {
    rhs.fill(0.0);
    let (nx, ny) = (grid.nx, grid.ny);
    if grid.dims == 1 {
        advect_line(u, c, 1.0 / grid.dx, &mut s[0].padded, &mut s[0].faces, rhs);
        return;
    }
    // along y: contiguous rows of length ny
    for ix in 0..nx {
        let row = ix * ny..(ix + 1) * ny;
        advect_line(
            &u[row.clone()],
            c,
            1.0 / grid.dy,
            &mut s[1].padded,
            &mut s[1].faces,
            &mut rhs[row],
        );
    }
    // along x: strided columns
    let sx = &mut s[0];
    for iy in 0..ny {
        for ix in 0..nx {
            sx.line[ix] = u[ix * ny + iy];
        }
        sx.acc.fill(0.0);
        advect_line(&sx.line, c, 1.0 / grid.dx, &mut sx.padded, &mut sx.faces, &mut sx.acc);
        for ix in 0..nx {
            rhs[ix * ny + iy] += sx.acc[ix];
        }
    }
}

/// Three-stage SSP Runge–Kutta step for `u' = L(u)`.
fn ssp_rk3(u: &mut [f64], dt: f64, mut rhs: impl FnMut(&[f64], &mut [f64]), work: &mut [Vec<f64>; 3]) {
    let [u1, u2, k] = work;
    rhs(u, k);
    for i in 0..u.len() {
        u1[i] = u[i] + dt * k[i];
    }
    rhs(u1, k);
    for i in 0..u.len() {
        u2[i] = 0.75 * u[i] + 0.25 * (u1[i] + dt * k[i]);
    }
    rhs(u2, k);
    for i in 0..u.len() {
        u[i] = u[i] / 3.0 + 2.0 / 3.0 * (u2[i] + dt * k[i]);
    }
}

fn substeps(dt: f64, stable_dt: f64) -> usize {
    (dt / stable_dt).ceil().max(1.0) as usize
}

fn initial_slice(spec: &PdeSpec, grid: &Grid) -> Vec<f64> {
    (0..grid.n_space())
        .map(|s| {
            let (x, y) = grid.space_coords(s);
            spec.initial_condition(x, y)
        })
        .collect()
}

fn advection(spec: &PdeSpec, grid: &Grid, c: f64, opts: &SolverOptions) -> Result<Field, PdeError> {
    let mut u = initial_slice(spec, grid);
    let n = u.len();
    let rate = c.abs() / grid.dx + if grid.dims == 2 { c.abs() / grid.dy } else { 0.0 };
    let m = if rate > 0.0 {
        substeps(grid.dt, opts.cfl / rate)
    } else {
        1
    };
    let h = grid.dt / m as f64;
    let mut scratch = [Scratch::new(grid.nx), Scratch::new(grid.ny)];
    let mut work = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut values = Vec::with_capacity(grid.n_total());
    values.extend_from_slice(&u);
    for step in 1..grid.nt {
        for _ in 0..m {
            ssp_rk3(&mut u, h, |v, r| advection_rhs(grid, c, v, r, &mut scratch), &mut work);
        }
        check_finite(&u, step)?;
        values.extend_from_slice(&u);
    }
    Field::new(*grid, values)
}

/// `u_tt = c²u_xx` through the characteristic variables `p = u_t + c·u_x`
/// (moving left) and `q = u_t − c·u_x` (moving right), with `u_t = (p + q)/2`.
/// Mirroring `u` makes `u_x` odd across each wall, so the ghosts of `p` are
/// the mirrored values of `q` and vice versa.
fn wave(spec: &PdeSpec, grid: &Grid, c: f64, opts: &SolverOptions) -> Result<Field, PdeError> {
    let n = grid.nx;
    let u0 = initial_slice(spec, grid);
    // state = [u | p | q]
    let mut state = vec![0.0; 3 * n];
    for i in 0..n {
        let x = grid.x(i);
        let ux = -2.0 * (x - 1.0) * spec.initial_condition(x, 0.0);
        let v = spec.initial_velocity(x);
        state[i] = u0[i];
        state[n + i] = v + c * ux;
        state[2 * n + i] = v - c * ux;
    }
    let m = substeps(grid.dt, opts.cfl * grid.dx / c.abs().max(f64::MIN_POSITIVE));
    let h = grid.dt / m as f64;
    let inv_h = 1.0 / grid.dx;
    let mut pp = vec![0.0; n + 2 * GHOST];
    let mut pq = vec![0.0; n + 2 * GHOST];
    let mut fp = vec![0.0; n + 1];
    let mut fq = vec![0.0; n + 1];
    let mut rhs = |s: &[f64], r: &mut [f64]| {
        let (p, q) = (&s[n..2 * n], &s[2 * n..]);
        pp[GHOST..GHOST + n].copy_from_slice(p);
        pq[GHOST..GHOST + n].copy_from_slice(q);
        for g in 0..GHOST {
            pp[GHOST - 1 - g] = q[g];
            pp[GHOST + n + g] = q[n - 1 - g];
            pq[GHOST - 1 - g] = p[g];
            pq[GHOST + n + g] = p[n - 1 - g];
        }
        face_values(&pp, n, -c, &mut fp);
        face_values(&pq, n, c, &mut fq);
        for i in 0..n {
            r[i] = 0.5 * (p[i] + q[i]);
            r[n + i] = c * (fp[i + 1] - fp[i]) * inv_h;
            r[2 * n + i] = -c * (fq[i + 1] - fq[i]) * inv_h;
        }
    };
    let mut work = [vec![0.0; 3 * n], vec![0.0; 3 * n], vec![0.0; 3 * n]];
    let mut values = Vec::with_capacity(grid.n_total());
    let mut velocity = Vec::with_capacity(grid.n_total());
    let push = |s: &[f64], values: &mut Vec<f64>, velocity: &mut Vec<f64>| {
        values.extend_from_slice(&s[..n]);
        velocity.extend((0..n).map(|i| 0.5 * (s[n + i] + s[2 * n + i])));
    };
    push(&state, &mut values, &mut velocity);
    for step in 1..grid.nt {
        for _ in 0..m {
            ssp_rk3(&mut state, h, &mut rhs, &mut work);
        }
        check_finite(&state, step)?;
        push(&state, &mut values, &mut velocity);
    }
    Field::new(*grid, values)?.with_companion(velocity)
}

/// LU factorization of a banded matrix with partial pivoting.
///
/// Row `i` stores columns `i − kl ..= i + ku + kl`; the extra `kl` columns
/// hold fill-in created by row exchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    a: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Assembles from `entry(i, j)` for `|i − j|` within the band and factors.
    pub fn factor(n: usize, kl: usize, ku: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self, PdeError> {
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            a: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                *lu.at(i, j) = entry(i, j);
            }
        }
        lu.decompose()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.a[k]
    }

    fn decompose(&mut self) -> Result<(), PdeError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku + kl).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.a[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(PdeError::SolverBlowUp { step: k });
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.a.swap(a, b);
                }
            }
            let pivot = self.a[self.idx(k, k)];
            for i in k + 1..=last_row {
                let m = self.a[self.idx(i, k)] / pivot;
                *self.at(i, k) = m;
                if m != 0.0 {
                    for j in k + 1..=last_col {
                        let akj = self.a[self.idx(k, j)];
                        *self.at(i, j) -= m * akj;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves in place.
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.a[self.idx(i, k)] * b[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + ku + kl).min(n - 1) {
                s -= self.a[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.a[self.idx(k, k)];
        }
    }
}

/// Applies a banded operator given by row closures: `out = u + s·L u`.
#[allow(clippy::needless_range_loop)]
fn apply_band(u: &[f64], s: f64, band: &impl Fn(usize, usize) -> f64, half: usize, out: &mut [f64]) {
    let n = u.len();
    for i in 0..n {
        let mut acc = 0.0;
        for j in i.saturating_sub(half)..(i + half + 1).min(n) {
            acc += band(i, j) * u[j];
        }
        out[i] = u[i] + s * acc;
    }
}

/// Conservative KdV operator `L u = −∂ₓF` with
/// `F = a·ū·u/2 + b·u_xx` on faces, `ū` the lagged face speed. Unlike the
/// other solvers the wall faces carry the flux evaluated from mirrored
/// ghosts: closing them makes the pulse pile up against the outflow wall.
struct KdvOperator {
    n: usize,
    /// `a·ū/4` on faces `f + ½`, `f = −1..n`, stored at `f + 1`.
    speed: Vec<f64>,
    disp: f64,
    inv_dx: f64,
}

impl KdvOperator {
    fn new(n: usize, b: f64, dx: f64) -> Self {
        KdvOperator {
            n,
            speed: vec![0.0; n + 1],
            disp: b / (2.0 * dx * dx),
            inv_dx: 1.0 / dx,
        }
    }

    /// Index of cell `k` after mirroring across the walls.
    fn mirror(&self, k: isize) -> usize {
        let n = self.n as isize;
        (if k < 0 {
            -1 - k
        } else if k >= n {
            2 * n - 1 - k
        } else {
            k
        }) as usize
    }

    fn set_speed(&mut self, a: f64, lagged: &[f64]) {
        for f in -1..self.n as isize {
            self.speed[(f + 1) as usize] = a * 0.5 * (lagged[self.mirror(f)] + lagged[self.mirror(f + 1)]) / 4.0;
        }
    }

    /// Coefficient of `u_j` in the flux through face `f + ½`.
    fn flux_coeff(&self, f: isize, j: usize) -> f64 {
        let mut c = 0.0;
        for (k, w) in [(f, self.speed[(f + 1) as usize]), (f + 1, self.speed[(f + 1) as usize])] {
            if self.mirror(k) == j {
                c += w;
            }
        }
        // u_{f+2} − u_{f+1} − u_f + u_{f−1}
        for (k, w) in [(f - 1, 1.0), (f, -1.0), (f + 1, -1.0), (f + 2, 1.0)] {
            if self.mirror(k) == j {
                c += w * self.disp;
            }
        }
        c
    }

    /// Entry `(i, j)` of `L`.
    fn entry(&self, i: usize, j: usize) -> f64 {
        let f = i as isize;
        (self.flux_coeff(f - 1, j) - self.flux_coeff(f, j)) * self.inv_dx
    }
}

fn kdv(spec: &PdeSpec, grid: &Grid, a: f64, b: f64, opts: &SolverOptions) -> Result<Field, PdeError> {
    let n = grid.nx;
    let mut u = initial_slice(spec, grid);
    let m = opts.kdv_substeps.max(1);
    let h = grid.dt / m as f64;
    let mut op = KdvOperator::new(n, b, grid.dx);
    let mut rhs = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut lagged = vec![0.0; n];
    let mut values = Vec::with_capacity(grid.n_total());
    values.extend_from_slice(&u);
    for step in 1..grid.nt {
        for _ in 0..m {
            lagged.copy_from_slice(&u);
            for iter in 0..=opts.kdv_picard {
                op.set_speed(a, &lagged);
                let e = |i: usize, j: usize| op.entry(i, j);
                apply_band(&u, 0.5 * h, &e, 2, &mut rhs);
                let lu = BandedLu::factor(
                    n,
                    2,
                    2,
                    |i, j| if i == j { 1.0 } else { 0.0 } - 0.5 * h * op.entry(i, j),
                )
                .map_err(|_| PdeError::SolverBlowUp { step })?;
                next.copy_from_slice(&rhs);
                lu.solve(&mut next);
                if iter < opts.kdv_picard {
                    for i in 0..n {
                        lagged[i] = 0.5 * (u[i] + next[i]);
                    }
                }
            }
            u.copy_from_slice(&next);
        }
        check_finite(&u, step)?;
        values.extend_from_slice(&u);
    }
    Field::new(*grid, values)
}

fn reaction_diffusion(spec: &PdeSpec, grid: &Grid, d: f64, k: f64, opts: &SolverOptions) -> Result<Field, PdeError> {
    let n = grid.nx;
    let mut u = initial_slice(spec, grid);
    let m = opts.rd_substeps.max(1);
    let h = grid.dt / m as f64;
    let r = d / (grid.dx * grid.dx);
    // L = D·Δ_N + k with mirrored ghosts
    let op = |i: usize, j: usize| -> f64 {
        let wall = (i == 0) as usize + (i + 1 == n) as usize;
        if i == j {
            -r * (2 - wall) as f64 + k
        } else if i.abs_diff(j) == 1 {
            r
        } else {
            0.0
        }
    };
    let lu = BandedLu::factor(n, 1, 1, |i, j| if i == j { 1.0 } else { 0.0 } - 0.5 * h * op(i, j))?;
    let mut rhs = vec![0.0; n];
    let mut values = Vec::with_capacity(grid.n_total());
    values.extend_from_slice(&u);
    for step in 1..grid.nt {
        for _ in 0..m {
            apply_band(&u, 0.5 * h, &op, 1, &mut rhs);
            lu.solve(&mut rhs);
            u.copy_from_slice(&rhs);
        }
        check_finite(&u, step)?;
        values.extend_from_slice(&u);
    }
    Field::new(*grid, values)
}
