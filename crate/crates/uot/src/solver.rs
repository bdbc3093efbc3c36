//! The shared primal/dual engine behind the semi-coupling and transport
//! solvers.
//!
//! The dual of the discrete semi-coupling program is
//!
//! ```text
//!   maximize  a . phi1 + b . phi2
//!   s.t.      phi1[i] r + phi2[j] s <= H_ij(r, s)   for all r, s >= 0,
//! ```
//!
//! whose per-cell constraint reduces, after dividing by `s`, to
//! `F_ij(phi1[i], phi2[j]) >= 0` with `F_ij(u, v) = inf_g [h_ij(g) - v g] - u`,
//! a concave function evaluable by a 1-d convex minimization (closed-form for
//! the square-root family). Destruction and creation caps `u <= H_ij(1, 0)`,
//! `v <= H_ij(0, 1)` are the boundary cases of the same constraint.
//!
//! The engine maximizes the log-barrier `t * objective + sum log F` by damped
//! Newton steps with a Schur-complement solve (the barrier Hessian has
//! diagonal blocks coupled by one rank-1 term per cell), following the
//! central path in `t`. On the central path the barrier multipliers
//! `lambda = 1/(t F)` satisfy the primal marginal constraints, so a feasible
//! semi-coupling pair `(A, B)` is read off directly and rescaled to exact
//! marginals; the reported duality gap compares that primal value with the
//! strictly feasible dual point and certifies both.

use crate::error::{Result, UotError};

/// How a cell's slice enters the dual program.
#[derive(Debug, Clone)]
pub(crate) enum CellCon {
    /// Slice `r + s - 2 c sqrt(r s)` with `c in (0, 1]`:
    /// `F(u, v) = (1 - u) - c^2 / (1 - v)`.
    Sqrt { i: usize, j: usize, c: f64 },
    /// Affine constraint `cu * u + cv * v <= rhs`. `i`/`j` may be absent for
    /// destruction/creation caps.
    Line { i: Option<usize>, j: Option<usize>, cu: f64, cv: f64, rhs: f64 },
    /// Generic smooth convex slice; the inner minimization is delegated to
    /// the oracle.
    Numeric { i: usize, j: usize },
}

/// Slice data for numeric cells.
pub(crate) trait SliceOracle: Sync {
    /// `h_ij(g) = H_ij(1, g)`; may be `+inf` outside the slice domain.
    fn h(&self, i: usize, j: usize, g: f64) -> f64;
    /// Recession slope of the slice.
    fn h_inf(&self, i: usize, j: usize) -> f64;
}

/// Inner problem of a numeric cell: minimize `h(g) - v g` over `g >= 0`.
/// Returns `(value, argmin)`; the value is `-inf` when `v` exceeds the
/// recession slope. The slice may be infinite outside a band, so a coarse
/// logarithmic scan seeds the golden-section refinement.
pub(crate) fn slice_inf(oracle: &dyn SliceOracle, i: usize, j: usize, v: f64) -> (f64, f64) {
    if v >= oracle.h_inf(i, j) {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let f = |g: f64| {
        let h = oracle.h(i, j, g);
        if h.is_finite() {
            h - v * g
        } else {
            f64::INFINITY
        }
    };
    // coarse scan: zero plus a log grid, doubled upward while descending
    const SCAN: usize = 81;
    let mut grid: Vec<f64> = Vec::with_capacity(SCAN + 1);
    grid.push(0.0);
    for k in 0..SCAN {
        let e = -9.0 + 18.0 * k as f64 / (SCAN - 1) as f64;
        grid.push(10f64.powf(e));
    }
    let mut best_k = 0;
    let mut best = f(grid[0]);
    for (k, &g) in grid.iter().enumerate().skip(1) {
        let val = f(g);
        if val < best {
            best = val;
            best_k = k;
        }
    }
    let mut hi = *grid.last().unwrap();
    if best_k + 1 >= grid.len() {
        // still descending at the top of the grid: extend by doubling
        let mut g = hi;
        for _ in 0..80 {
            let val = f(2.0 * g);
            if val >= best {
                break;
            }
            g *= 2.0;
            best = val;
        }
        hi = 2.0 * g;
    }
    let lo = if best_k == 0 { 0.0 } else { grid[best_k - 1] };
    let hi = if best_k + 1 < grid.len() { grid[best_k + 1] } else { hi };
    let (mut lo, mut hi) = (lo, hi);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..120 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let g_star = 0.5 * (lo + hi);
    let refined = f(g_star);
    let at_zero = f(0.0);
    if at_zero <= refined.min(best) {
        (at_zero, 0.0)
    } else if refined <= best {
        (refined, g_star)
    } else {
        (best, grid[best_k])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EngineOptions {
    /// Stop once the certified gap is below `tol_abs + tol_rel * (1 + |value|)`.
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_newton: usize,
    pub t_max: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { tol_rel: 1e-6, tol_abs: 0.0, max_newton: 4000, t_max: 1e13 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EngineSolution {
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub a_mat: Vec<f64>,
    pub b_mat: Vec<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub newton_iters: usize,
    pub converged: bool,
    /// `true` when the dual diverged, certifying an infeasible primal
    /// (`value = +inf`).
    pub unbounded: bool,
}

pub(crate) struct Engine<'a> {
    pub m: usize,
    pub n: usize,
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub cons: Vec<CellCon>,
    /// Destruction slopes `H_i(1, 0)`; `+inf` disables the cap.
    pub caps1: Vec<f64>,
    /// Creation slopes `H_j(0, 1)`; `+inf` disables the cap.
    pub caps2: Vec<f64>,
    pub oracle: &'a dyn SliceOracle,
    /// Primal cell objective `H_ij(r, s)` used for value reporting.
    pub cell_value: &'a dyn Fn(usize, usize, f64, f64) -> f64,
}

struct BarrierEval {
    value: f64,
    feasible: bool,
}

impl<'a> Engine<'a> {
    fn con_f(&self, con: &CellCon, phi1: &[f64], phi2: &[f64]) -> f64 {
        match con {
            CellCon::Sqrt { i, j, c } => {
                let u = phi1[*i];
                let v = phi2[*j];
                if v >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                (1.0 - u) - c * c / (1.0 - v)
            }
            CellCon::Line { i, j, cu, cv, rhs } => {
                let mut f = *rhs;
                if let Some(i) = i {
                    f -= cu * phi1[*i];
                }
                if let Some(j) = j {
                    f -= cv * phi2[*j];
                }
                f
            }
            CellCon::Numeric { i, j } => {
                let v = phi2[*j];
                if v >= self.oracle.h_inf(*i, *j) {
                    return f64::NEG_INFINITY;
                }
                let (val, _) = slice_inf(self.oracle, *i, *j, v);
                val - phi1[*i]
            }
        }
    }

    fn barrier(&self, t: f64, phi1: &[f64], phi2: &[f64]) -> BarrierEval {
        let mut value = 0.0;
        for i in 0..self.m {
            value += t * self.a[i] * phi1[i];
            if self.caps1[i].is_finite() {
                let s = self.caps1[i] - phi1[i];
                if s <= 0.0 {
                    return BarrierEval { value: f64::NEG_INFINITY, feasible: false };
                }
                value += s.ln();
            }
        }
        for j in 0..self.n {
            value += t * self.b[j] * phi2[j];
            if self.caps2[j].is_finite() {
                let s = self.caps2[j] - phi2[j];
                if s <= 0.0 {
                    return BarrierEval { value: f64::NEG_INFINITY, feasible: false };
                }
                value += s.ln();
            }
        }
        for con in &self.cons {
            let f = self.con_f(con, phi1, phi2);
            if !(f > 0.0) {
                return BarrierEval { value: f64::NEG_INFINITY, feasible: false };
            }
            value += f.ln();
        }
        BarrierEval { value, feasible: true }
    }

    /// One centering pass at fixed `t`. Returns the Newton iterations spent.
    fn center(&self, t: f64, phi1: &mut Vec<f64>, phi2: &mut Vec<f64>, max_iter: usize) -> usize {
        let m = self.m;
        let n = self.n;
        let mut iters = 0;
        for _ in 0..max_iter {
            // gradient and Hessian blocks of the barrier
            let mut g1 = vec![0.0; m];
            let mut g2 = vec![0.0; n];
            let mut d1 = vec![0.0; m];
            let mut d2 = vec![0.0; n];
            let mut cmat = vec![0.0; m * n];
            for i in 0..m {
                g1[i] += t * self.a[i];
                if self.caps1[i].is_finite() {
                    let s = self.caps1[i] - phi1[i];
                    g1[i] -= 1.0 / s;
                    d1[i] += 1.0 / (s * s);
                }
            }
            for j in 0..n {
                g2[j] += t * self.b[j];
                if self.caps2[j].is_finite() {
                    let s = self.caps2[j] - phi2[j];
                    g2[j] -= 1.0 / s;
                    d2[j] += 1.0 / (s * s);
                }
            }
            for con in &self.cons {
                match con {
                    CellCon::Sqrt { i, j, c } => {
                        let u = phi1[*i];
                        let v = phi2[*j];
                        let f = (1.0 - u) - c * c / (1.0 - v);
                        let fv = -c * c / ((1.0 - v) * (1.0 - v));
                        let fvv = -2.0 * c * c / ((1.0 - v) * (1.0 - v) * (1.0 - v));
                        let inv = 1.0 / f;
                        g1[*i] -= inv;
                        g2[*j] += fv * inv;
                        d1[*i] += inv * inv;
                        cmat[*i * n + *j] += -fv * inv * inv;
                        d2[*j] += (fv * fv - f * fvv) * inv * inv;
                    }
                    CellCon::Line { i, j, cu, cv, rhs } => {
                        let mut f = *rhs;
                        if let Some(i) = i {
                            f -= cu * phi1[*i];
                        }
                        if let Some(j) = j {
                            f -= cv * phi2[*j];
                        }
                        let inv = 1.0 / f;
                        if let Some(i) = i {
                            g1[*i] -= cu * inv;
                            d1[*i] += cu * cu * inv * inv;
                        }
                        if let Some(j) = j {
                            g2[*j] -= cv * inv;
                            d2[*j] += cv * cv * inv * inv;
                        }
                        if let (Some(i), Some(j)) = (i, j) {
                            cmat[*i * n + *j] += cu * cv * inv * inv;
                        }
                    }
                    CellCon::Numeric { i, j } => {
                        let v = phi2[*j];
                        let (val, g_star) = slice_inf(self.oracle, *i, *j, v);
                        let f = val - phi1[*i];
                        let fv = -g_star;
                        // curvature of the inner value: dg*/dv = 1/h''(g*)
                        let step = 1e-5 * (1.0 + g_star);
                        let hpp = {
                            let hp = self.oracle.h(*i, *j, g_star + step);
                            let h0 = self.oracle.h(*i, *j, g_star);
                            let hm = self.oracle.h(*i, *j, (g_star - step).max(0.0));
                            if hp.is_finite() && h0.is_finite() && hm.is_finite() && g_star > step {
                                (hp - 2.0 * h0 + hm) / (step * step)
                            } else {
                                f64::INFINITY
                            }
                        };
                        let fvv = if hpp.is_finite() && hpp > 1e-12 { -1.0 / hpp } else { 0.0 };
                        let inv = 1.0 / f;
                        g1[*i] -= inv;
                        g2[*j] += fv * inv;
                        d1[*i] += inv * inv;
                        cmat[*i * n + *j] += -fv * inv * inv;
                        d2[*j] += (fv * fv - f * fvv) * inv * inv;
                    }
                }
            }
            // ridge keeps the Schur solve well posed when a variable has no
            // active curvature
            for v in d1.iter_mut() {
                *v += 1e-12;
            }
            for v in d2.iter_mut() {
                *v += 1e-12;
            }

            // Newton step: [D1 C; C^T D2] delta = g, eliminating the larger side
            let (step1, step2) = if m <= n {
                let mut s = vec![0.0; m * m];
                let mut rhs = g1.clone();
                for i in 0..m {
                    for k in i..m {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += cmat[i * n + j] * cmat[k * n + j] / d2[j];
                        }
                        s[i * m + k] = -acc;
                        s[k * m + i] = -acc;
                    }
                    s[i * m + i] += d1[i];
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += cmat[i * n + j] * g2[j] / d2[j];
                    }
                    rhs[i] -= acc;
                }
                let dx1 = match cholesky_solve(&mut s, m, &rhs) {
                    Some(x) => x,
                    None => break,
                };
                let mut dx2 = vec![0.0; n];
                for j in 0..n {
                    let mut acc = g2[j];
                    for i in 0..m {
                        acc -= cmat[i * n + j] * dx1[i];
                    }
                    dx2[j] = acc / d2[j];
                }
                (dx1, dx2)
            } else {
                let mut s = vec![0.0; n * n];
                let mut rhs = g2.clone();
                for j in 0..n {
                    for l in j..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += cmat[i * n + j] * cmat[i * n + l] / d1[i];
                        }
                        s[j * n + l] = -acc;
                        s[l * n + j] = -acc;
                    }
                    s[j * n + j] += d2[j];
                    let mut acc = 0.0;
                    for i in 0..m {
                        acc += cmat[i * n + j] * g1[i] / d1[i];
                    }
                    rhs[j] -= acc;
                }
                let dx2 = match cholesky_solve(&mut s, n, &rhs) {
                    Some(x) => x,
                    None => break,
                };
                let mut dx1 = vec![0.0; m];
                for i in 0..m {
                    let mut acc = g1[i];
                    for j in 0..n {
                        acc -= cmat[i * n + j] * dx2[j];
                    }
                    dx1[i] = acc / d1[i];
                }
                (dx1, dx2)
            };

            iters += 1;
            let decrement: f64 = g1.iter().zip(&step1).map(|(g, d)| g * d).sum::<f64>()
                + g2.iter().zip(&step2).map(|(g, d)| g * d).sum::<f64>();
            if !decrement.is_finite() {
                break;
            }

            // damped step with feasibility backtracking
            let base = self.barrier(t, phi1, phi2).value;
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-13 {
                let cand1: Vec<f64> = phi1.iter().zip(&step1).map(|(p, d)| p + alpha * d).collect();
                let cand2: Vec<f64> = phi2.iter().zip(&step2).map(|(p, d)| p + alpha * d).collect();
                let eval = self.barrier(t, &cand1, &cand2);
                if eval.feasible && eval.value >= base + 0.25 * alpha * decrement - 1e-12 * (1.0 + base.abs()) {
                    *phi1 = cand1;
                    *phi2 = cand2;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            if decrement < 0.05 {
                break;
            }
        }
        iters
    }

    /// Reads the primal candidate off the multipliers `1/(t F)` and repairs
    /// it to exact marginals.
    fn extract(&self, t: f64, phi1: &[f64], phi2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m;
        let n = self.n;
        let mut a_mat = vec![0.0; m * n];
        let mut b_mat = vec![0.0; m * n];
        let mut dest = vec![0.0; m];
        let mut crea = vec![0.0; n];
        for con in &self.cons {
            match con {
                CellCon::Sqrt { i, j, c } => {
                    let f = self.con_f(con, phi1, phi2);
                    let lam = 1.0 / (t * f);
                    let g_star = (c / (1.0 - phi2[*j])).powi(2);
                    a_mat[*i * n + *j] += lam;
                    b_mat[*i * n + *j] += lam * g_star;
                }
                CellCon::Line { i, j, cu, cv, .. } => {
                    let f = self.con_f(con, phi1, phi2);
                    let lam = 1.0 / (t * f);
                    match (i, j) {
                        (Some(i), Some(j)) => {
                            a_mat[*i * n + *j] += lam * cu;
                            b_mat[*i * n + *j] += lam * cv;
                        }
                        (Some(i), None) => dest[*i] += lam * cu,
                        (None, Some(j)) => crea[*j] += lam * cv,
                        (None, None) => {}
                    }
                }
                CellCon::Numeric { i, j } => {
                    let f = self.con_f(con, phi1, phi2);
                    let lam = 1.0 / (t * f);
                    let (_, g_star) = slice_inf(self.oracle, *i, *j, phi2[*j]);
                    a_mat[*i * n + *j] += lam;
                    b_mat[*i * n + *j] += lam * g_star;
                }
            }
        }
        for i in 0..m {
            if self.caps1[i].is_finite() {
                dest[i] += 1.0 / (t * (self.caps1[i] - phi1[i]));
            }
        }
        for j in 0..n {
            if self.caps2[j].is_finite() {
                crea[j] += 1.0 / (t * (self.caps2[j] - phi2[j]));
            }
        }
        // fold destruction and creation into the least-coupled cell
        for i in 0..m {
            if dest[i] > 0.0 && n > 0 {
                let mut jbest = 0;
                for j in 1..n {
                    if b_mat[i * n + j] < b_mat[i * n + jbest] {
                        jbest = j;
                    }
                }
                a_mat[i * n + jbest] += dest[i];
            }
        }
        for j in 0..n {
            if crea[j] > 0.0 && m > 0 {
                let mut ibest = 0;
                for i in 1..m {
                    if a_mat[i * n + j] < a_mat[ibest * n + j] {
                        ibest = i;
                    }
                }
                b_mat[ibest * n + j] += crea[j];
            }
        }
        // exact marginal repair: rows of A, columns of B
        for i in 0..m {
            let s: f64 = (0..n).map(|j| a_mat[i * n + j]).sum();
            if s > 0.0 {
                let scale = self.a[i] / s;
                for j in 0..n {
                    a_mat[i * n + j] *= scale;
                }
            }
        }
        for j in 0..n {
            let s: f64 = (0..m).map(|i| b_mat[i * n + j]).sum();
            if s > 0.0 {
                let scale = self.b[j] / s;
                for i in 0..m {
                    b_mat[i * n + j] *= scale;
                }
            }
        }
        (a_mat, b_mat)
    }

    fn primal_value(&self, a_mat: &[f64], b_mat: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.m {
            for j in 0..self.n {
                let (r, s) = (a_mat[i * self.n + j], b_mat[i * self.n + j]);
                if r > 0.0 || s > 0.0 {
                    v += (self.cell_value)(i, j, r, s);
                }
            }
        }
        v
    }

    pub fn solve(&self, opts: &EngineOptions) -> Result<EngineSolution> {
        let m = self.m;
        let n = self.n;
        assert!(m > 0 && n > 0, "degenerate programs are handled by the caller");
        let mass: f64 = self.a.iter().sum::<f64>() + self.b.iter().sum::<f64>();
        let unbounded_at = 1e12 * (1.0 + mass);
        let mut phi1 = vec![-1.0; m];
        let mut phi2 = vec![-1.0; n];
        let mut t = 1.0;
        let mut newton = 0;
        let mut best: Option<EngineSolution> = None;
        while newton < opts.max_newton {
            newton += self.center(t, &mut phi1, &mut phi2, opts.max_newton - newton);
            let dual_value: f64 = self
                .a
                .iter()
                .zip(&phi1)
                .map(|(a, p)| a * p)
                .sum::<f64>()
                + self.b.iter().zip(&phi2).map(|(b, p)| b * p).sum::<f64>();
            if dual_value > unbounded_at {
                return Ok(EngineSolution {
                    phi1,
                    phi2,
                    a_mat: vec![0.0; m * n],
                    b_mat: vec![0.0; m * n],
                    primal_value: f64::INFINITY,
                    dual_value: f64::INFINITY,
                    gap: 0.0,
                    newton_iters: newton,
                    converged: true,
                    unbounded: true,
                });
            }
            let (a_mat, b_mat) = self.extract(t, &phi1, &phi2);
            let primal_value = self.primal_value(&a_mat, &b_mat);
            let gap = primal_value - dual_value;
            let sol = EngineSolution {
                phi1: phi1.clone(),
                phi2: phi2.clone(),
                a_mat,
                b_mat,
                primal_value,
                dual_value,
                gap,
                newton_iters: newton,
                converged: true,
                unbounded: false,
            };
            let better = match &best {
                Some(b) => sol.gap < b.gap,
                None => true,
            };
            if better {
                best = Some(sol);
            }
            let target = opts.tol_abs + opts.tol_rel * (1.0 + primal_value.abs());
            if best.as_ref().map(|b| b.gap <= target).unwrap_or(false) {
                break;
            }
            if t >= opts.t_max {
                break;
            }
            t = (t * 20.0).min(opts.t_max);
        }
        let mut sol = best.ok_or_else(|| UotError::NonConvergence("no centering step succeeded".into()))?;
        let target = opts.tol_abs + opts.tol_rel * (1.0 + sol.primal_value.abs());
        sol.converged = sol.gap <= target;
        sol.newton_iters = newton;
        Ok(sol)
    }
}

/// In-place dense Cholesky factorization and solve for a symmetric positive
/// definite matrix in row-major order. Returns `None` when the matrix is not
/// positive definite even after a small diagonal boost.
fn cholesky_solve(mat: &mut [f64], n: usize, rhs: &[f64]) -> Option<Vec<f64>> {
    let mut boost = 0.0;
    'retry: for attempt in 0..3 {
        let mut l = mat.to_vec();
        if attempt > 0 {
            boost = if boost == 0.0 { 1e-10 } else { boost * 1e3 };
            let scale: f64 = (0..n).map(|i| mat[i * n + i]).fold(0.0, f64::max);
            for i in 0..n {
                l[i * n + i] += boost * (1.0 + scale);
            }
        }
        for k in 0..n {
            for j in 0..k {
                let s = l[k * n + j];
                for i in k..n {
                    l[i * n + k] -= s * l[i * n + j];
                }
            }
            let d = l[k * n + k];
            if !(d > 0.0) || !d.is_finite() {
                continue 'retry;
            }
            let root = d.sqrt();
            for i in k..n {
                l[i * n + k] /= root;
            }
        }
        // forward and backward substitution
        let mut x = rhs.to_vec();
        for i in 0..n {
            for j in 0..i {
                x[i] -= l[i * n + j] * x[j];
            }
            x[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                x[i] -= l[j * n + i] * x[j];
            }
            x[i] /= l[i * n + i];
        }
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    None
}

pub(crate) struct NoSlices;

impl SliceOracle for NoSlices {
    fn h(&self, _: usize, _: usize, _: f64) -> f64 {
        f64::INFINITY
    }
    fn h_inf(&self, _: usize, _: usize) -> f64 {
        f64::INFINITY
    }
}
