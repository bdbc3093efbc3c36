//! The primal problem on discrete measures: the semi-coupling program, its
//! certified solver, a brute-force oracle, conversion to homogeneous
//! couplings, and the transported/destroyed/created decomposition.

use crate::cone::{ConePoint, CouplingAtom, DiscreteMeasure, HomogeneousCoupling};
use crate::cost::{radial_cc_envelope, Cost, RadialEnvelope};
use crate::error::{Result, UotError};
use crate::solver::{CellCon, Engine, EngineOptions, SliceOracle};
use crate::space::{Position, Space};

/// Problem data: two measures on a common space and a radially
/// 1-homogeneous cost. Measures are canonicalized on construction so that
/// support positions are unique.
#[derive(Debug, Clone)]
pub struct Instance {
    mu1: DiscreteMeasure,
    mu2: DiscreteMeasure,
    cost: Cost,
}

impl Instance {
    pub fn new(mu1: DiscreteMeasure, mu2: DiscreteMeasure, cost: Cost) -> Result<Self> {
        if !mu1.space().same_shape(mu2.space()) {
            return Err(UotError::SpaceMismatch("measures live on different spaces".into()));
        }
        let mu1 = mu1.canonicalize();
        let mu2 = mu2.canonicalize();
        let xs1: Vec<Vec<f64>> = mu1.atoms().iter().map(|(p, _)| p.clone()).collect();
        let xs2: Vec<Vec<f64>> = mu2.atoms().iter().map(|(p, _)| p.clone()).collect();
        cost.validate_on_pairs(mu1.space(), &xs1, &xs2)?;
        Ok(Instance { mu1, mu2, cost })
    }

    pub fn mu1(&self) -> &DiscreteMeasure {
        &self.mu1
    }

    pub fn mu2(&self) -> &DiscreteMeasure {
        &self.mu2
    }

    pub fn cost(&self) -> &Cost {
        &self.cost
    }

    pub fn space(&self) -> &Space {
        self.mu1.space()
    }

    pub fn masses1(&self) -> Vec<f64> {
        self.mu1.atoms().iter().map(|(_, m)| *m).collect()
    }

    pub fn masses2(&self) -> Vec<f64> {
        self.mu2.atoms().iter().map(|(_, m)| *m).collect()
    }

    pub fn position1(&self, i: usize) -> &[f64] {
        &self.mu1.atoms()[i].0
    }

    pub fn position2(&self, j: usize) -> &[f64] {
        &self.mu2.atoms()[j].0
    }
}

/// Matrix pair of the semi-coupling program: `A` carries the first marginal
/// on rows, `B` the second on columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiCoupling {
    m: usize,
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl SemiCoupling {
    pub fn new(m: usize, n: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != m * n || b.len() != m * n {
            return Err(UotError::DimensionMismatch { expected: m * n, got: a.len().max(b.len()) });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(UotError::InvalidCoupling("semi-coupling entries must be finite and >= 0".into()));
        }
        Ok(SemiCoupling { m, n, a, b })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.b[i * self.n + j]
    }

    pub fn a_flat(&self) -> &[f64] {
        &self.a
    }

    pub fn b_flat(&self) -> &[f64] {
        &self.b
    }

    /// Worst deviation of row sums of `A` from `mu1` and column sums of `B`
    /// from `mu2`.
    pub fn marginal_residual(&self, inst: &Instance) -> f64 {
        let a_masses = inst.masses1();
        let b_masses = inst.masses2();
        let mut worst = 0.0f64;
        for i in 0..self.m {
            let s: f64 = (0..self.n).map(|j| self.a(i, j)).sum();
            worst = worst.max((s - a_masses[i]).abs());
        }
        for j in 0..self.n {
            let s: f64 = (0..self.m).map(|i| self.b(i, j)).sum();
            worst = worst.max((s - b_masses[j]).abs());
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative duality-gap target: accept when
    /// `gap <= tol_abs + tol * (1 + |value|)`.
    pub tol: f64,
    pub tol_abs: f64,
    /// Cap on total Newton iterations.
    pub max_iter: usize,
    /// Record wall time in the report.
    pub timings: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-6, tol_abs: 0.0, max_iter: 4000, timings: false }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Optimal transport value (the cost of `semicoupling` under the solve
    /// cost; `+inf` when no finite-cost plan exists).
    pub value: f64,
    pub semicoupling: SemiCoupling,
    pub iterations: usize,
    /// Max of the marginal residual and the certified duality gap.
    pub kkt_residual: f64,
    pub wall_time_ms: Option<f64>,
    /// Certified `primal - dual` gap (non-negative up to roundoff).
    pub gap: f64,
    /// Dual potentials on the two supports, strictly feasible.
    pub potentials: Option<(Vec<f64>, Vec<f64>)>,
    pub converged: bool,
    /// Set when a non-convex cost was replaced by its radial convex
    /// envelope in the solve (the value is unchanged by that substitution).
    pub envelope_substituted: bool,
}

impl SolveReport {
    /// Objective of the returned matrices under the solve cost; reproduces
    /// `value` exactly.
    pub fn objective(&self, inst: &Instance) -> f64 {
        let cells = CellTable::build(inst);
        let (m, n) = self.semicoupling.shape();
        let mut v = 0.0;
        for i in 0..m {
            for j in 0..n {
                let (r, s) = (self.semicoupling.a(i, j), self.semicoupling.b(i, j));
                if r > 0.0 || s > 0.0 {
                    v += cells.value(i, j, r, s);
                }
            }
        }
        v
    }
}

/// Per-cell solve representation: the constraint family and the (relaxed)
/// cell objective used for certified values.
pub(crate) enum SolveCell {
    /// `r + s - 2 c sqrt(rs)` with the effective coefficient already clamped
    /// to `[0, 1]`.
    Sqrt { c: f64 },
    /// Smooth convex slice evaluated through the cost.
    Numeric,
    /// Piecewise-linear relaxation by the radial envelope hull.
    Hull(RadialEnvelope),
}

pub(crate) struct CellTable {
    pub m: usize,
    pub n: usize,
    pub cells: Vec<SolveCell>,
    pub caps1: Vec<f64>,
    pub caps2: Vec<f64>,
    pub substituted: bool,
    space: Space,
    cost: Cost,
    xs1: Vec<Position>,
    xs2: Vec<Position>,
}

/// Resolution of per-cell piecewise-linear relaxations.
const PL_CELL_RESOLUTION: usize = 2049;

impl CellTable {
    pub fn build(inst: &Instance) -> CellTable {
        let xs1: Vec<Position> = inst.mu1.atoms().iter().map(|(p, _)| p.clone()).collect();
        let xs2: Vec<Position> = inst.mu2.atoms().iter().map(|(p, _)| p.clone()).collect();
        let space = inst.space().clone();
        let cost = inst.cost().clone();
        let m = xs1.len();
        let n = xs2.len();
        let mut substituted = false;
        let smooth = cost_slice_is_smooth(&cost);
        let convex = cost.radially_convex();
        let mut cells = Vec::with_capacity(m * n);
        for x1 in &xs1 {
            for x2 in &xs2 {
                let cell = match cost.sqrt_coefficient(&space, x1, x2) {
                    Some(c) => {
                        if c < -1e-12 {
                            substituted = true;
                        }
                        SolveCell::Sqrt { c: c.clamp(0.0, 1.0) }
                    }
                    None if convex && smooth => SolveCell::Numeric,
                    None => {
                        if !convex {
                            substituted = true;
                        }
                        let env = radial_cc_envelope(&cost, &space, x1, x2, PL_CELL_RESOLUTION)
                            .expect("slice nowhere finite");
                        SolveCell::Hull(env)
                    }
                };
                cells.push(cell);
            }
        }
        let caps1 = xs1.iter().map(|x| cost.destruction_slope(&space, x)).collect();
        let caps2 = xs2.iter().map(|x| cost.creation_slope(&space, x)).collect();
        CellTable { m, n, cells, caps1, caps2, substituted, space, cost, xs1, xs2 }
    }

    pub fn value(&self, i: usize, j: usize, r: f64, s: f64) -> f64 {
        match &self.cells[i * self.n + j] {
            SolveCell::Sqrt { c } => (r + s - 2.0 * (r * s).sqrt() * c).max(0.0),
            SolveCell::Numeric => {
                let y1 = if r == 0.0 {
                    ConePoint::vertex()
                } else {
                    ConePoint::new(self.xs1[i].clone(), r).unwrap()
                };
                let y2 = if s == 0.0 {
                    ConePoint::vertex()
                } else {
                    ConePoint::new(self.xs2[j].clone(), s).unwrap()
                };
                self.cost.eval(&self.space, &y1, &y2)
            }
            SolveCell::Hull(env) => env.eval(r, s),
        }
    }

    fn constraints(&self) -> Vec<CellCon> {
        let mut cons = Vec::new();
        for i in 0..self.m {
            for j in 0..self.n {
                match &self.cells[i * self.n + j] {
                    SolveCell::Sqrt { c } => {
                        if *c > 1e-9 {
                            cons.push(CellCon::Sqrt { i, j, c: *c });
                        }
                    }
                    SolveCell::Numeric => cons.push(CellCon::Numeric { i, j }),
                    SolveCell::Hull(env) => {
                        for &(t, h) in env.hull() {
                            if t <= 0.0 || t >= 1.0 {
                                continue; // endpoints are the caps
                            }
                            cons.push(CellCon::Line { i: Some(i), j: Some(j), cu: t, cv: 1.0 - t, rhs: h });
                        }
                    }
                }
            }
        }
        for (i, h) in self.caps1.iter().enumerate() {
            if h.is_finite() {
                cons.push(CellCon::Line { i: Some(i), j: None, cu: 1.0, cv: 0.0, rhs: *h });
            }
        }
        for (j, h) in self.caps2.iter().enumerate() {
            if h.is_finite() {
                cons.push(CellCon::Line { i: None, j: Some(j), cu: 0.0, cv: 1.0, rhs: *h });
            }
        }
        cons
    }
}

fn cost_slice_is_smooth(cost: &Cost) -> bool {
    use crate::cost::{CostKind, EntropySpec, MassBlock};
    match cost.kind() {
        CostKind::Gaussian | CostKind::Hellinger | CostKind::ConePower { .. } => true,
        CostKind::Product { plus, minus, .. } => {
            let block_smooth = |b: &MassBlock| {
                !matches!(b, MassBlock::Max | MassBlock::NegMin)
                    && !matches!(b, MassBlock::GapPower(a) if *a == 1.0)
            };
            block_smooth(plus) && block_smooth(minus)
        }
        CostKind::Perspective { f1, f2, .. } => {
            let smooth = |f: &EntropySpec| match f {
                EntropySpec::Power(_) => true,
                EntropySpec::Chi(a) => *a > 1.0,
                EntropySpec::Indicator { .. } => false,
            };
            smooth(f1) && smooth(f2)
        }
    }
}

struct InstanceSlices<'t> {
    table: &'t CellTable,
}

impl SliceOracle for InstanceSlices<'_> {
    fn h(&self, i: usize, j: usize, g: f64) -> f64 {
        self.table
            .cost
            .reduced(&self.table.space, &self.table.xs1[i], &self.table.xs2[j], g)
    }
    fn h_inf(&self, i: usize, j: usize) -> f64 {
        self.table
            .cost
            .recession(&self.table.space, &self.table.xs1[i], &self.table.xs2[j])
    }
}

/// Closed-form value for instances with an empty side: only destruction or
/// creation is possible.
fn degenerate_value(inst: &Instance) -> Option<(f64, SemiCoupling)> {
    let m = inst.mu1.len();
    let n = inst.mu2.len();
    if m > 0 && n > 0 {
        return None;
    }
    let mut value = 0.0;
    if n == 0 {
        for (x, mass) in inst.mu1.atoms() {
            value += mass * inst.cost.destruction_slope(inst.space(), x);
        }
    }
    if m == 0 {
        for (x, mass) in inst.mu2.atoms() {
            value += mass * inst.cost.creation_slope(inst.space(), x);
        }
    }
    Some((value, SemiCoupling { m, n, a: vec![], b: vec![] }))
}

/// Solves the semi-coupling program with a certified duality gap.
///
/// Non-convex costs are solved through their per-cell radial convex
/// envelopes (which leaves the optimal value unchanged); the substitution is
/// reported on the result. A failure to reach the gap target within
/// `max_iter` Newton iterations is reported via `converged = false`, never
/// as a silently wrong value.
pub fn solve_semicoupling(inst: &Instance, opts: &SolveOptions) -> Result<SolveReport> {
    let start = std::time::Instant::now();
    if let Some((value, semicoupling)) = degenerate_value(inst) {
        let m = inst.mu1.len();
        let n = inst.mu2.len();
        let phi1: Vec<f64> = (0..m).map(|i| inst.cost.destruction_slope(inst.space(), inst.position1(i))).collect();
        let phi2: Vec<f64> = (0..n).map(|j| inst.cost.creation_slope(inst.space(), inst.position2(j))).collect();
        return Ok(SolveReport {
            value,
            semicoupling,
            iterations: 0,
            kkt_residual: 0.0,
            wall_time_ms: if opts.timings { Some(start.elapsed().as_secs_f64() * 1e3) } else { None },
            gap: 0.0,
            potentials: Some((phi1, phi2)),
            converged: true,
            envelope_substituted: false,
        });
    }

    let table = CellTable::build(inst);
    let slices = InstanceSlices { table: &table };
    let a = inst.masses1();
    let b = inst.masses2();
    let value_fn = |i: usize, j: usize, r: f64, s: f64| table.value(i, j, r, s);
    let engine = Engine {
        m: table.m,
        n: table.n,
        a: &a,
        b: &b,
        cons: table.constraints(),
        caps1: table.caps1.clone(),
        caps2: table.caps2.clone(),
        oracle: &slices,
        cell_value: &value_fn,
    };
    let sol = engine.solve(&EngineOptions {
        tol_rel: opts.tol,
        tol_abs: opts.tol_abs,
        max_newton: opts.max_iter,
        t_max: 1e13,
    })?;
    let semicoupling = SemiCoupling { m: table.m, n: table.n, a: sol.a_mat, b: sol.b_mat };
    let marg = if sol.unbounded { 0.0 } else { semicoupling.marginal_residual(inst) };
    Ok(SolveReport {
        value: sol.primal_value,
        semicoupling,
        iterations: sol.newton_iters,
        kkt_residual: marg.max(sol.gap.max(0.0)),
        wall_time_ms: if opts.timings { Some(start.elapsed().as_secs_f64() * 1e3) } else { None },
        gap: sol.gap,
        potentials: Some((sol.phi1, sol.phi2)),
        converged: sol.converged,
        envelope_substituted: table.substituted,
    })
}

/// Convenience wrapper: the unbalanced transport value with default options.
pub fn uot_value(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, cost: &Cost) -> Result<f64> {
    let inst = Instance::new(mu1.clone(), mu2.clone(), cost.clone())?;
    Ok(solve_semicoupling(&inst, &SolveOptions::default())?.value)
}

// ---------------------------------------------------------------------------
// brute-force oracle
// ---------------------------------------------------------------------------

/// Independent oracle: exhaustive grid search over the marginal polytope
/// (after eliminating one variable per row of `A` and per column of `B`),
/// refined by coordinate-descent passes with exact line minimizations.
/// Requires at most 4 free scalars; returns an upper bound that converges to
/// the optimum as `grid` grows.
pub fn brute_force_value(inst: &Instance, grid: usize) -> Result<f64> {
    if grid < 2 {
        return Err(UotError::InvalidArgument("grid must be at least 2".into()));
    }
    if let Some((value, _)) = degenerate_value(inst) {
        return Ok(value);
    }
    let m = inst.mu1.len();
    let n = inst.mu2.len();
    let free = m * (n - 1) + (m - 1) * n;
    if free > 4 {
        return Err(UotError::InvalidArgument(format!(
            "brute force supports at most 4 free scalars, instance has {free}"
        )));
    }
    let a_masses = inst.masses1();
    let b_masses = inst.masses2();
    let table = CellTable::build(inst);

    // free variable descriptors: (is_a, group index, slot within group)
    let mut vars: Vec<(bool, usize, usize)> = Vec::new();
    for i in 0..m {
        for j in 0..n - 1 {
            vars.push((true, i, j));
        }
    }
    for j in 0..n {
        for i in 0..m - 1 {
            vars.push((false, j, i));
        }
    }
    debug_assert_eq!(vars.len(), free);

    let objective = |x: &[f64]| -> f64 {
        // rebuild full matrices; the eliminated entries absorb the budget
        let mut a_mat = vec![0.0; m * n];
        let mut b_mat = vec![0.0; m * n];
        for (k, &(is_a, g, s)) in vars.iter().enumerate() {
            if is_a {
                a_mat[g * n + s] = x[k];
            } else {
                b_mat[s * n + g] = x[k];
            }
        }
        for i in 0..m {
            let used: f64 = (0..n - 1).map(|j| a_mat[i * n + j]).sum();
            if used > a_masses[i] + 1e-12 {
                return f64::INFINITY;
            }
            a_mat[i * n + n - 1] = (a_masses[i] - used).max(0.0);
        }
        for j in 0..n {
            let used: f64 = (0..m - 1).map(|i| b_mat[i * n + j]).sum();
            if used > b_masses[j] + 1e-12 {
                return f64::INFINITY;
            }
            b_mat[(m - 1) * n + j] = (b_masses[j] - used).max(0.0);
        }
        let mut v = 0.0;
        for i in 0..m {
            for j in 0..n {
                let (r, s) = (a_mat[i * n + j], b_mat[i * n + j]);
                if r > 0.0 || s > 0.0 {
                    let h = inst.cost.value_at(inst.space(), inst.position1(i), inst.position2(j), r, s);
                    if !h.is_finite() {
                        return f64::INFINITY;
                    }
                    v += h;
                }
            }
        }
        let _ = &table;
        v
    };

    let budgets: Vec<f64> = vars
        .iter()
        .map(|&(is_a, g, _)| if is_a { a_masses[g] } else { b_masses[g] })
        .collect();

    // exhaustive pass, capped so the total grid stays tractable
    const CAP: usize = 4_000_000;
    let per_dim = if free == 0 {
        1
    } else {
        let budget_root = (CAP as f64).powf(1.0 / free as f64).floor() as usize;
        grid.min(budget_root.max(2))
    };
    let mut best_x = vec![0.0; free];
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; free];
    loop {
        let x: Vec<f64> = idx
            .iter()
            .zip(&budgets)
            .map(|(&k, &bud)| bud * k as f64 / (per_dim - 1).max(1) as f64)
            .collect();
        let v = objective(&x);
        if v < best {
            best = v;
            best_x = x;
        }
        // odometer
        let mut c = 0;
        loop {
            if c == free {
                break;
            }
            idx[c] += 1;
            if idx[c] < per_dim {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
        if c == free {
            break;
        }
        if free == 0 {
            break;
        }
    }

    // coordinate-descent refinement with golden-section line searches
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    for _pass in 0..60 {
        let before = best;
        for k in 0..free {
            let (mut lo, mut hi) = (0.0, budgets[k]);
            let mut x1 = hi - phi * (hi - lo);
            let mut x2 = lo + phi * (hi - lo);
            let eval_at = |t: f64, best_x: &[f64]| {
                let mut x = best_x.to_vec();
                x[k] = t;
                objective(&x)
            };
            let mut f1 = eval_at(x1, &best_x);
            let mut f2 = eval_at(x2, &best_x);
            for _ in 0..100 {
                if f1 <= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - phi * (hi - lo);
                    f1 = eval_at(x1, &best_x);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + phi * (hi - lo);
                    f2 = eval_at(x2, &best_x);
                }
            }
            let cand = 0.5 * (lo + hi);
            let v = eval_at(cand, &best_x);
            if v < best {
                best = v;
                best_x[k] = cand;
            }
        }
        if before - best <= 1e-13 * (1.0 + best.abs()) {
            break;
        }
    }
    Ok(best)
}

impl Cost {
    /// Cost of a mass pair on a fixed position pair (vertex used for zero
    /// masses).
    pub fn value_at(&self, space: &Space, x1: &[f64], x2: &[f64], r: f64, s: f64) -> f64 {
        let y1 = if r == 0.0 { ConePoint::vertex() } else { ConePoint::new(x1.to_vec(), r).unwrap() };
        let y2 = if s == 0.0 { ConePoint::vertex() } else { ConePoint::new(x2.to_vec(), s).unwrap() };
        self.eval(space, &y1, &y2)
    }
}

// ---------------------------------------------------------------------------
// conversions and decomposition
// ---------------------------------------------------------------------------

/// One atom per non-zero cell `([x_i, A_ij], [y_j, B_ij], w = 1)`. For cells
/// where the solved (relaxed) cell value lies strictly below the cost, the
/// atom is split along the supporting segment of the radial envelope so that
/// the coupling's cost integral matches the solver's value.
pub fn to_homogeneous_coupling(sc: &SemiCoupling, inst: &Instance) -> Result<HomogeneousCoupling> {
    let (m, n) = sc.shape();
    let mut atoms = Vec::new();
    let convex = inst.cost.radially_convex();
    for i in 0..m {
        for j in 0..n {
            let (r, s) = (sc.a(i, j), sc.b(i, j));
            if r == 0.0 && s == 0.0 {
                continue;
            }
            let make = |mass1: f64, mass2: f64| -> CouplingAtom {
                let first = if mass1 == 0.0 {
                    ConePoint::vertex()
                } else {
                    ConePoint::new(inst.position1(i).to_vec(), mass1).unwrap()
                };
                let second = if mass2 == 0.0 {
                    ConePoint::vertex()
                } else {
                    ConePoint::new(inst.position2(j).to_vec(), mass2).unwrap()
                };
                CouplingAtom { first, second, weight: 1.0 }
            };
            if convex {
                atoms.push(make(r, s));
                continue;
            }
            // envelope split: decompose (r, s) along the hull segment at its
            // mass ratio
            let env = radial_cc_envelope(inst.cost(), inst.space(), inst.position1(i), inst.position2(j), PL_CELL_RESOLUTION)?;
            let direct = inst.cost.value_at(inst.space(), inst.position1(i), inst.position2(j), r, s);
            let relaxed = env.eval(r, s);
            if direct <= relaxed + 1e-10 * (1.0 + relaxed.abs()) {
                atoms.push(make(r, s));
                continue;
            }
            let total = r + s;
            let t = r / total;
            let hull = env.hull();
            let seg = hull.windows(2).find(|w| w[0].0 <= t && t <= w[1].0);
            match seg {
                Some(w) => {
                    let (ta, _) = w[0];
                    let (tb, _) = w[1];
                    let wa = if tb > ta { total * (tb - t) / (tb - ta) } else { 0.0 };
                    let wb = total - wa;
                    if wa > 0.0 {
                        atoms.push(make(wa * ta, wa * (1.0 - ta)));
                    }
                    if wb > 0.0 {
                        atoms.push(make(wb * tb, wb * (1.0 - tb)));
                    }
                }
                None => atoms.push(make(r, s)),
            }
        }
    }
    HomogeneousCoupling::new(1.0, atoms)
}

/// Cost integral of a coupling.
pub fn coupling_cost(coupling: &HomogeneousCoupling, cost: &Cost, space: &Space) -> f64 {
    coupling
        .atoms()
        .iter()
        .map(|a| a.weight * cost.eval(space, &a.first, &a.second))
        .sum()
}

/// Transported, destroyed and created parts of a reduced coupling, split by
/// whether the partner radius vanishes.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub transported_1: DiscreteMeasure,
    pub transported_2: DiscreteMeasure,
    pub destroyed: DiscreteMeasure,
    pub created: DiscreteMeasure,
    /// Indices (into the canonical first support) of positions whose mass is
    /// entirely destroyed, and its complement.
    pub s1_pure: Vec<usize>,
    pub s1_active: Vec<usize>,
    pub s2_pure: Vec<usize>,
    pub s2_active: Vec<usize>,
}

pub fn distinguished_decomposition(coupling: &HomogeneousCoupling, inst: &Instance) -> Result<Decomposition> {
    if coupling.order() != 1.0 {
        return Err(UotError::InvalidCoupling("decomposition expects a coupling of order 1".into()));
    }
    let space = inst.space();
    let mut tr1: Vec<(Position, f64)> = Vec::new();
    let mut tr2: Vec<(Position, f64)> = Vec::new();
    let mut de: Vec<(Position, f64)> = Vec::new();
    let mut cr: Vec<(Position, f64)> = Vec::new();
    for a in coupling.atoms() {
        match (a.first.is_vertex(), a.second.is_vertex()) {
            (false, true) => de.push((a.first.position().unwrap().to_vec(), a.weight * a.first.mass())),
            (true, false) => cr.push((a.second.position().unwrap().to_vec(), a.weight * a.second.mass())),
            (false, false) => {
                tr1.push((a.first.position().unwrap().to_vec(), a.weight * a.first.mass()));
                tr2.push((a.second.position().unwrap().to_vec(), a.weight * a.second.mass()));
            }
            (true, true) => {}
        }
    }
    let transported_1 = DiscreteMeasure::new(space.clone(), tr1)?.canonicalize();
    let transported_2 = DiscreteMeasure::new(space.clone(), tr2)?.canonicalize();
    let destroyed = DiscreteMeasure::new(space.clone(), de)?.canonicalize();
    let created = DiscreteMeasure::new(space.clone(), cr)?.canonicalize();

    let key = crate::space::position_key;
    let in_measure = |m: &DiscreteMeasure, x: &[f64]| m.atoms().iter().any(|(p, _)| key(p) == key(x));
    let mut s1_pure = Vec::new();
    let mut s1_active = Vec::new();
    for (i, (x, _)) in inst.mu1.atoms().iter().enumerate() {
        if in_measure(&destroyed, x) && !in_measure(&transported_1, x) {
            s1_pure.push(i);
        } else {
            s1_active.push(i);
        }
    }
    let mut s2_pure = Vec::new();
    let mut s2_active = Vec::new();
    for (j, (x, _)) in inst.mu2.atoms().iter().enumerate() {
        if in_measure(&created, x) && !in_measure(&transported_2, x) {
            s2_pure.push(j);
        } else {
            s2_active.push(j);
        }
    }
    Ok(Decomposition {
        transported_1,
        transported_2,
        destroyed,
        created,
        s1_pure,
        s1_active,
        s2_pure,
        s2_active,
    })
}
