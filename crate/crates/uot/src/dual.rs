//! Dual potentials on the supports, feasibility certificates, transforms,
//! ascent, and complementary slackness.
//!
//! A pair `(phi1, phi2)` is feasible when
//! `phi1(x1) r1 + phi2(x2) r2 <= H([x1,r1],[x2,r2])` for every support pair
//! and all masses. Its value `sum phi1 d mu1 + sum phi2 d mu2` is then a
//! lower bound on every semi-coupling objective (weak duality); a matching
//! primal value certifies joint optimality.

use crate::cone::HomogeneousCoupling;
use crate::error::{Result, UotError};
use crate::primal::{solve_semicoupling, Instance, SolveOptions, SolveReport};
use crate::solver::{slice_inf, SliceOracle};
use crate::space::position_key;

/// Potential values indexed by the atom order of the instance's canonical
/// measures.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

impl PotentialPair {
    pub fn zero(inst: &Instance) -> Self {
        PotentialPair { phi1: vec![0.0; inst.mu1().len()], phi2: vec![0.0; inst.mu2().len()] }
    }

    pub fn value(&self, inst: &Instance) -> f64 {
        self.phi1.iter().zip(inst.masses1()).map(|(p, m)| p * m).sum::<f64>()
            + self.phi2.iter().zip(inst.masses2()).map(|(p, m)| p * m).sum::<f64>()
    }
}

/// Direction of a transform: which side the input potential lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformDirection {
    OneToTwo,
    TwoToOne,
}

pub(crate) struct ForwardSlices<'a> {
    pub inst: &'a Instance,
}

impl SliceOracle for ForwardSlices<'_> {
    fn h(&self, i: usize, j: usize, g: f64) -> f64 {
        self.inst.cost().reduced(self.inst.space(), self.inst.position1(i), self.inst.position2(j), g)
    }
    fn h_inf(&self, i: usize, j: usize) -> f64 {
        self.inst.cost().recession(self.inst.space(), self.inst.position1(i), self.inst.position2(j))
    }
}

/// The same slices viewed from the second side: `h(alpha) = H([x1, alpha], [x2, 1])`.
struct ReversedSlices<'a> {
    inst: &'a Instance,
}

impl SliceOracle for ReversedSlices<'_> {
    fn h(&self, i: usize, j: usize, g: f64) -> f64 {
        self.inst.cost().value_at(
            self.inst.space(),
            self.inst.position1(i),
            self.inst.position2(j),
            g,
            1.0,
        )
    }
    fn h_inf(&self, i: usize, j: usize) -> f64 {
        // growth rate in the first mass is the destruction slope
        self.inst.cost().destruction_slope(self.inst.space(), self.inst.position1(i))
    }
}

/// Feasibility report: the most negative constraint slack over all support
/// pairs and the destruction/creation caps.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub worst_slack: f64,
    /// Pair achieving the worst slack (`i`, `j`); caps are reported with the
    /// missing side as `None`.
    pub worst_pair: (Option<usize>, Option<usize>),
}

impl FeasibilityReport {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.worst_slack >= -tol
    }
}

/// Checks the pair against every support pair: the binding constraint in
/// the mass ratio is found by convex minimization of `h(g) - phi2 g`
/// (immediately infeasible when `phi2` exceeds the recession slope), and the
/// boundary cases reduce to the destruction/creation caps.
pub fn feasible(pair: &PotentialPair, inst: &Instance, _tol: f64) -> FeasibilityReport {
    let m = inst.mu1().len();
    let n = inst.mu2().len();
    let slices = ForwardSlices { inst };
    let mut worst = f64::INFINITY;
    let mut worst_pair = (None, None);
    for i in 0..m {
        let cap = inst.cost().destruction_slope(inst.space(), inst.position1(i));
        if cap.is_finite() {
            let s = cap - pair.phi1[i];
            if s < worst {
                worst = s;
                worst_pair = (Some(i), None);
            }
        }
    }
    for j in 0..n {
        let cap = inst.cost().creation_slope(inst.space(), inst.position2(j));
        if cap.is_finite() {
            let s = cap - pair.phi2[j];
            if s < worst {
                worst = s;
                worst_pair = (None, Some(j));
            }
        }
    }
    for i in 0..m {
        for j in 0..n {
            let (val, _) = slice_inf(&slices, i, j, pair.phi2[j]);
            let s = val - pair.phi1[i];
            if s < worst {
                worst = s;
                worst_pair = (Some(i), Some(j));
            }
        }
    }
    if m == 0 && n == 0 {
        worst = 0.0;
    }
    FeasibilityReport { worst_slack: worst, worst_pair }
}

/// Transform of a one-sided potential: the largest partner potential that
/// keeps the pair feasible,
/// `phi^H(x) = min over partner support and mass ratio of the slack`.
/// Errors when the inner problem is unbounded below (the input exceeds a
/// destruction/creation slope).
pub fn h_transform(phi: &[f64], inst: &Instance, direction: TransformDirection) -> Result<Vec<f64>> {
    let m = inst.mu1().len();
    let n = inst.mu2().len();
    match direction {
        TransformDirection::OneToTwo => {
            if phi.len() != m {
                return Err(UotError::DimensionMismatch { expected: m, got: phi.len() });
            }
            for (i, p) in phi.iter().enumerate() {
                let cap = inst.cost().destruction_slope(inst.space(), inst.position1(i));
                if *p > cap + 1e-12 {
                    return Err(UotError::InfeasiblePotential(format!(
                        "phi1[{i}] = {p} exceeds the destruction slope {cap}; the transform is unbounded below"
                    )));
                }
            }
            let slices = ReversedSlices { inst };
            let mut out = vec![f64::INFINITY; n];
            for j in 0..n {
                for i in 0..m {
                    let (val, _) = slice_inf(&slices, i, j, phi[i]);
                    if val < out[j] {
                        out[j] = val;
                    }
                }
            }
            Ok(out)
        }
        TransformDirection::TwoToOne => {
            if phi.len() != n {
                return Err(UotError::DimensionMismatch { expected: n, got: phi.len() });
            }
            for (j, p) in phi.iter().enumerate() {
                let cap = inst.cost().creation_slope(inst.space(), inst.position2(j));
                if *p > cap + 1e-12 {
                    return Err(UotError::InfeasiblePotential(format!(
                        "phi2[{j}] = {p} exceeds the creation slope {cap}; the transform is unbounded below"
                    )));
                }
            }
            let slices = ForwardSlices { inst };
            let mut out = vec![f64::INFINITY; m];
            for i in 0..m {
                for j in 0..n {
                    let (val, _) = slice_inf(&slices, i, j, phi[j]);
                    if val < out[i] {
                        out[i] = val;
                    }
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualOptions {
    /// Stall threshold for the alternation phase and gap target for the
    /// ascent phase.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions { tol: 1e-6, max_iter: 4000 }
    }
}

#[derive(Debug, Clone)]
pub struct DualReport {
    pub value: f64,
    pub pair: PotentialPair,
    pub iterations: usize,
    pub max_violation: f64,
}

/// Maximizes the dual. Alternating transforms from the zero potential give a
/// feasible warm start but stall at a coordinate-wise maximum after one
/// round trip, so the certified maximizer runs the interior-point ascent on
/// the same constraint system; the better of the two feasible pairs is
/// returned.
pub fn dual_ascent(inst: &Instance, opts: &DualOptions) -> Result<DualReport> {
    if !inst.cost().radially_convex() {
        return Err(UotError::InvalidCost("dual ascent requires a radially convex cost".into()));
    }
    let m = inst.mu1().len();
    let n = inst.mu2().len();
    if m == 0 || n == 0 {
        // only destruction or creation: the slopes are optimal
        let phi1: Vec<f64> =
            (0..m).map(|i| inst.cost().destruction_slope(inst.space(), inst.position1(i))).collect();
        let phi2: Vec<f64> =
            (0..n).map(|j| inst.cost().creation_slope(inst.space(), inst.position2(j))).collect();
        let pair = PotentialPair { phi1, phi2 };
        let value = pair.value(inst);
        return Ok(DualReport { value, pair, iterations: 0, max_violation: 0.0 });
    }

    // phase 1: alternating transforms until the value stalls
    let mut phi1 = vec![0.0; m];
    let mut phi2 = h_transform(&phi1, inst, TransformDirection::OneToTwo)?;
    let mut pair = PotentialPair { phi1: phi1.clone(), phi2: phi2.clone() };
    let mut best_value = f64::NEG_INFINITY;
    let mut rounds = 0usize;
    for _ in 0..16 {
        rounds += 1;
        phi1 = h_transform(&phi2, inst, TransformDirection::TwoToOne)?;
        phi2 = h_transform(&phi1, inst, TransformDirection::OneToTwo)?;
        let cand = PotentialPair { phi1: phi1.clone(), phi2: phi2.clone() };
        let v = cand.value(inst);
        if v > best_value {
            pair = cand;
        }
        if (v - best_value).abs() <= opts.tol * (1.0 + v.abs()) {
            best_value = best_value.max(v);
            break;
        }
        best_value = best_value.max(v);
    }

    // phase 2: interior-point ascent sharing the primal engine
    let rep = solve_semicoupling(
        inst,
        &SolveOptions { tol: opts.tol, tol_abs: 0.0, max_iter: opts.max_iter, timings: false },
    )?;
    let mut iterations = rounds + rep.iterations;
    if let Some((phi1, phi2)) = rep.potentials {
        let cand = PotentialPair { phi1, phi2 };
        if rep.value.is_infinite() || cand.value(inst) > pair.value(inst) {
            pair = cand;
        }
    } else {
        iterations = rounds;
    }
    let value = pair.value(inst);
    let report = feasible(&pair, inst, opts.tol);
    Ok(DualReport { value, pair, iterations, max_violation: (-report.worst_slack).max(0.0) })
}

/// Primal/dual certificate bundle.
#[derive(Debug, Clone)]
pub struct GapCertificate {
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
}

pub fn duality_gap(primal: &SolveReport, dual: &DualReport) -> Result<GapCertificate> {
    let (m, n) = primal.semicoupling.shape();
    if dual.pair.phi1.len() != m || dual.pair.phi2.len() != n {
        return Err(UotError::DimensionMismatch { expected: m + n, got: dual.pair.phi1.len() + dual.pair.phi2.len() });
    }
    let gap = primal.value - dual.value;
    Ok(GapCertificate { primal_value: primal.value, dual_value: dual.value, gap })
}

/// A support atom where the pair fails to be tight.
#[derive(Debug, Clone)]
pub struct SlacknessViolation {
    pub atom: usize,
    pub slack: f64,
}

/// Optimality certification: with a feasible pair, every atom of an optimal
/// coupling must be tight. Returns the atoms whose slack exceeds `tol`;
/// an empty list certifies both the coupling and the pair.
pub fn complementary_slackness(
    coupling: &HomogeneousCoupling,
    pair: &PotentialPair,
    inst: &Instance,
    tol: f64,
) -> Result<Vec<SlacknessViolation>> {
    let report = feasible(pair, inst, tol);
    if !report.is_feasible(tol) {
        return Err(UotError::InfeasiblePotential(format!(
            "pair violates feasibility by {} at {:?}",
            -report.worst_slack, report.worst_pair
        )));
    }
    let index1: std::collections::HashMap<_, usize> = inst
        .mu1()
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, (p, _))| (position_key(p), i))
        .collect();
    let index2: std::collections::HashMap<_, usize> = inst
        .mu2()
        .atoms()
        .iter()
        .enumerate()
        .map(|(j, (p, _))| (position_key(p), j))
        .collect();
    let mut violations = Vec::new();
    for (k, atom) in coupling.atoms().iter().enumerate() {
        let mut linear = 0.0;
        if !atom.first.is_vertex() {
            let i = index1
                .get(&position_key(atom.first.position().unwrap()))
                .ok_or_else(|| UotError::InvalidCoupling(format!("atom {k} is outside the first support")))?;
            linear += pair.phi1[*i] * atom.first.mass();
        }
        if !atom.second.is_vertex() {
            let j = index2
                .get(&position_key(atom.second.position().unwrap()))
                .ok_or_else(|| UotError::InvalidCoupling(format!("atom {k} is outside the second support")))?;
            linear += pair.phi2[*j] * atom.second.mass();
        }
        let h = inst.cost().eval(inst.space(), &atom.first, &atom.second);
        let slack = h - linear;
        if slack > tol {
            violations.push(SlacknessViolation { atom: k, slack });
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{ConePoint, CouplingAtom, DiscreteMeasure};
    use crate::cost::Cost;
    use crate::primal::to_homogeneous_coupling;
    use crate::space::Space;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn space1() -> Space {
        Space::euclidean(1).unwrap()
    }

    fn measure(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(space1(), atoms.iter().map(|&(x, m)| (vec![x], m)).collect()).unwrap()
    }

    fn random_instance(rng: &mut StdRng, m: usize, n: usize, cost: Cost) -> Instance {
        let mk = |rng: &mut StdRng, k: usize| {
            let atoms: Vec<(Vec<f64>, f64)> =
                (0..k).map(|_| (vec![rng.gen_range(-1.5..1.5)], rng.gen_range(0.2..2.0))).collect();
            DiscreteMeasure::new(space1(), atoms).unwrap()
        };
        Instance::new(mk(rng, m), mk(rng, n), cost).unwrap()
    }

    #[test]
    fn zero_pair_is_feasible() {
        let inst = Instance::new(measure(&[(0.0, 1.0)]), measure(&[(1.0, 2.0)]), Cost::ghk()).unwrap();
        let rep = feasible(&PotentialPair::zero(&inst), &inst, 1e-12);
        assert!(rep.is_feasible(1e-12));
        // the binding ratio at identical points is g = 1 with zero slack
        let inst0 = Instance::new(measure(&[(0.0, 1.0)]), measure(&[(0.0, 1.0)]), Cost::ghk()).unwrap();
        let rep0 = feasible(&PotentialPair::zero(&inst0), &inst0, 1e-12);
        assert!(rep0.worst_slack.abs() < 1e-9);
    }

    #[test]
    fn recession_excess_is_infeasible() {
        let inst = Instance::new(measure(&[(0.0, 1.0)]), measure(&[(1.0, 2.0)]), Cost::ghk()).unwrap();
        let pair = PotentialPair { phi1: vec![0.0], phi2: vec![1.0 + 1e-6] };
        let rep = feasible(&pair, &inst, 1e-9);
        assert!(!rep.is_feasible(1e-9));
    }

    #[test]
    fn transform_of_zero_at_shared_point() {
        let inst = Instance::new(measure(&[(0.0, 1.0)]), measure(&[(0.0, 1.0), (2.0, 1.0)]), Cost::ghk()).unwrap();
        let phi2 = h_transform(&[0.0], &inst, TransformDirection::OneToTwo).unwrap();
        assert!(phi2[0].abs() < 1e-9, "{}", phi2[0]);
        // at distance 2 the inner minimum is 1 - e^{-4}
        assert!((phi2[1] - (1.0 - (-4.0f64).exp())).abs() < 1e-7, "{}", phi2[1]);
    }

    #[test]
    fn double_transform_dominates_and_is_idempotent() {
        let mut rng = StdRng::seed_from_u64(7);
        let inst = random_instance(&mut rng, 4, 3, Cost::ghk());
        let phi1: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..0.4)).collect();
        let phi2 = h_transform(&phi1, &inst, TransformDirection::OneToTwo).unwrap();
        let phi11 = h_transform(&phi2, &inst, TransformDirection::TwoToOne).unwrap();
        for (a, b) in phi1.iter().zip(&phi11) {
            assert!(b + 1e-9 >= *a, "double transform must dominate: {b} < {a}");
        }
        let phi2_again = h_transform(&phi11, &inst, TransformDirection::OneToTwo).unwrap();
        for (a, b) in phi2.iter().zip(&phi2_again) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "round trip must be idempotent: {a} vs {b}");
        }
        // the transformed pair is feasible
        let rep = feasible(&PotentialPair { phi1: phi11, phi2 }, &inst, 1e-9);
        assert!(rep.worst_slack >= -1e-9, "slack {}", rep.worst_slack);
    }

    #[test]
    fn transform_monotonicity() {
        let mut rng = StdRng::seed_from_u64(11);
        let inst = random_instance(&mut rng, 3, 3, Cost::hk());
        let lo: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|v| v + rng.gen_range(0.0..0.5)).collect();
        let tlo = h_transform(&lo, &inst, TransformDirection::OneToTwo).unwrap();
        let thi = h_transform(&hi, &inst, TransformDirection::OneToTwo).unwrap();
        for (a, b) in tlo.iter().zip(&thi) {
            assert!(a + 1e-12 >= *b, "transform must reverse order: {a} < {b}");
        }
    }

    #[test]
    fn transform_flags_unbounded_input() {
        let inst = Instance::new(measure(&[(0.0, 1.0)]), measure(&[(1.0, 2.0)]), Cost::ghk()).unwrap();
        assert!(h_transform(&[1.5], &inst, TransformDirection::OneToTwo).is_err());
    }

    #[test]
    fn ascent_on_identical_measures() {
        let mu = measure(&[(0.0, 1.0), (1.0, 0.5)]);
        let inst = Instance::new(mu.clone(), mu, Cost::ghk()).unwrap();
        let rep = dual_ascent(&inst, &DualOptions::default()).unwrap();
        assert!(rep.value.abs() < 1e-6, "value {}", rep.value);
        assert!(rep.max_violation <= 1e-9);
    }

    #[test]
    fn ascent_reaches_forced_dirac_value() {
        let inst = Instance::new(measure(&[(0.0, 2.0)]), measure(&[(0.0, 8.0)]), Cost::ghk()).unwrap();
        let rep = dual_ascent(&inst, &DualOptions::default()).unwrap();
        assert!((rep.value - 2.0).abs() < 1e-6, "value {}", rep.value);
    }

    #[test]
    fn weak_duality_and_gap_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(2024);
        for k in 0..12 {
            let cost = if k % 2 == 0 { Cost::ghk() } else { Cost::hk() };
            let inst = random_instance(&mut rng, rng.gen_range(1..5), rng.gen_range(1..5), cost);
            let primal = solve_semicoupling(&inst, &SolveOptions::default()).unwrap();
            let dual = dual_ascent(&inst, &DualOptions::default()).unwrap();
            let cert = duality_gap(&primal, &dual).unwrap();
            assert!(cert.gap >= -1e-9, "negative gap {}", cert.gap);
            assert!(
                cert.gap <= 1e-6 * (1.0 + cert.primal_value.abs()),
                "gap {} too large for value {}",
                cert.gap,
                cert.primal_value
            );
        }
    }

    #[test]
    fn gap_rejects_mismatched_shapes() {
        let inst = Instance::new(measure(&[(0.0, 1.0)]), measure(&[(1.0, 1.0)]), Cost::ghk()).unwrap();
        let primal = solve_semicoupling(&inst, &SolveOptions::default()).unwrap();
        let bogus = DualReport {
            value: 0.0,
            pair: PotentialPair { phi1: vec![0.0, 0.0], phi2: vec![0.0] },
            iterations: 0,
            max_violation: 0.0,
        };
        assert!(duality_gap(&primal, &bogus).is_err());
    }

    #[test]
    fn slackness_certifies_optimal_and_flags_perturbed() {
        let inst = Instance::new(measure(&[(0.0, 2.0)]), measure(&[(0.0, 8.0)]), Cost::ghk()).unwrap();
        let primal = solve_semicoupling(&inst, &SolveOptions::default()).unwrap();
        let dual = dual_ascent(&inst, &DualOptions::default()).unwrap();
        let coupling = to_homogeneous_coupling(&primal.semicoupling, &inst).unwrap();
        let violations = complementary_slackness(&coupling, &dual.pair, &inst, 1e-6).unwrap();
        assert!(violations.is_empty(), "{violations:?}");
        // a deliberately wrong coupling: push mass to a bad ratio
        let bad = HomogeneousCoupling::new(
            1.0,
            vec![CouplingAtom {
                first: ConePoint::new(vec![0.0], 2.0).unwrap(),
                second: ConePoint::new(vec![0.0], 0.5).unwrap(),
                weight: 1.0,
            }],
        )
        .unwrap();
        let violations = complementary_slackness(&bad, &dual.pair, &inst, 1e-6).unwrap();
        assert!(!violations.is_empty());
    }

    #[test]
    fn slackness_empty_for_empty_coupling() {
        let inst = Instance::new(
            DiscreteMeasure::empty(space1()),
            DiscreteMeasure::empty(space1()),
            Cost::ghk(),
        )
        .unwrap();
        let coupling = HomogeneousCoupling::empty(1.0);
        let pair = PotentialPair { phi1: vec![], phi2: vec![] };
        let violations = complementary_slackness(&coupling, &pair, &inst, 1e-6).unwrap();
        assert!(violations.is_empty());
    }
}
