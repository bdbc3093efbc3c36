//! The cone data model: cone points over a ground space, discrete measures,
//! homogeneous couplings and their marginals, dilations and radial
//! rescalings.
//!
//! A cone point is a pair (position, mass) with all zero-mass points
//! identified to a single vertex. A p-homogeneous coupling is a weighted
//! atom list on the product cone; its side-i marginal charges each ground
//! position with `weight * radius_i^p`.

use crate::error::{Result, UotError};
use crate::space::{position_key, Position, Space};

/// Truncation constant for the cone metric's angular term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Pi,
    HalfPi,
}

impl Truncation {
    pub fn angle(self) -> f64 {
        match self {
            Truncation::Pi => std::f64::consts::PI,
            Truncation::HalfPi => std::f64::consts::FRAC_PI_2,
        }
    }
}

/// A point `[x, r]` of the cone over a ground space; `r = 0` is the vertex
/// and carries no position.
#[derive(Debug, Clone, PartialEq)]
pub struct ConePoint {
    pos: Option<Position>,
    mass: f64,
}

impl ConePoint {
    pub fn new(pos: Position, mass: f64) -> Result<Self> {
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(UotError::InvalidArgument(format!("cone point mass {mass} must be finite and >= 0")));
        }
        if mass == 0.0 {
            Ok(ConePoint { pos: None, mass: 0.0 })
        } else {
            Ok(ConePoint { pos: Some(pos), mass })
        }
    }

    pub fn vertex() -> Self {
        ConePoint { pos: None, mass: 0.0 }
    }

    pub fn is_vertex(&self) -> bool {
        self.mass == 0.0
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn position(&self) -> Option<&[f64]> {
        self.pos.as_deref()
    }

    /// Product `lambda * [x, r] = [x, lambda r]`.
    pub fn scaled(&self, lambda: f64) -> Self {
        if lambda == 0.0 || self.is_vertex() {
            ConePoint::vertex()
        } else {
            ConePoint { pos: self.pos.clone(), mass: self.mass * lambda }
        }
    }

    /// Same ray with the radius replaced.
    pub fn with_mass(&self, mass: f64) -> Self {
        if mass == 0.0 {
            ConePoint::vertex()
        } else {
            ConePoint { pos: self.pos.clone(), mass }
        }
    }

    /// Equality under the cone identification (all zero-mass points equal).
    pub fn cone_eq(&self, other: &ConePoint) -> bool {
        if self.is_vertex() && other.is_vertex() {
            return true;
        }
        if self.is_vertex() != other.is_vertex() {
            return false;
        }
        self.mass == other.mass
            && position_key(self.position().unwrap()) == position_key(other.position().unwrap())
    }
}

/// Cone distance `(r^2 + s^2 - 2 r s cos(d(x,y) /\ trunc))^(1/2)`.
///
/// Both points must live over the given space; the vertex needs no position.
pub fn cone_distance(space: &Space, a: &ConePoint, b: &ConePoint, trunc: Truncation) -> Result<f64> {
    for p in [a, b] {
        if let Some(pos) = p.position() {
            space.check_position(pos)?;
        }
    }
    let (r, s) = (a.mass(), b.mass());
    if a.is_vertex() || b.is_vertex() {
        // the cross term vanishes
        return Ok((r * r + s * s).sqrt());
    }
    let d = space.distance(a.position().unwrap(), b.position().unwrap());
    let c = d.min(trunc.angle()).cos();
    Ok((r * r + s * s - 2.0 * r * s * c).max(0.0).sqrt())
}

/// A finite non-negative measure given by atoms with strictly positive
/// masses. Duplicate positions are permitted; `canonicalize` merges them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    space: Space,
    atoms: Vec<(Position, f64)>,
}

impl DiscreteMeasure {
    pub fn new(space: Space, atoms: Vec<(Position, f64)>) -> Result<Self> {
        for (pos, m) in &atoms {
            space.check_position(pos)?;
            if !(m.is_finite() && *m > 0.0) {
                return Err(UotError::InvalidMeasure(format!("atom mass {m} must be finite and > 0")));
            }
        }
        Ok(DiscreteMeasure { space, atoms })
    }

    pub fn empty(space: Space) -> Self {
        DiscreteMeasure { space, atoms: Vec::new() }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn atoms(&self) -> &[(Position, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, m)| m).sum()
    }

    /// Merges atoms at quantization-equal positions, preserving first-seen
    /// order of positions.
    pub fn canonicalize(&self) -> DiscreteMeasure {
        let mut order: Vec<(Position, f64)> = Vec::new();
        let mut index: std::collections::HashMap<Vec<i128>, usize> = std::collections::HashMap::new();
        for (pos, m) in &self.atoms {
            let key = position_key(pos);
            match index.get(&key) {
                Some(&i) => order[i].1 += m,
                None => {
                    index.insert(key, order.len());
                    order.push((pos.clone(), *m));
                }
            }
        }
        DiscreteMeasure { space: self.space.clone(), atoms: order }
    }

    /// Equality after canonicalization, with masses compared to `tol`
    /// relative accuracy.
    pub fn approx_eq(&self, other: &DiscreteMeasure, tol: f64) -> bool {
        if !self.space.same_shape(&other.space) {
            return false;
        }
        let a = self.canonicalize();
        let b = other.canonicalize();
        if a.len() != b.len() {
            return false;
        }
        let bmap: std::collections::HashMap<Vec<i128>, f64> =
            b.atoms.iter().map(|(p, m)| (position_key(p), *m)).collect();
        a.atoms.iter().all(|(p, m)| match bmap.get(&position_key(p)) {
            Some(&mb) => (m - mb).abs() <= tol * (1.0 + m.abs().max(mb.abs())),
            None => false,
        })
    }

    pub fn scaled(&self, lambda: f64) -> Result<DiscreteMeasure> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(UotError::InvalidArgument("scaling must be positive".into()));
        }
        Ok(DiscreteMeasure {
            space: self.space.clone(),
            atoms: self.atoms.iter().map(|(p, m)| (p.clone(), m * lambda)).collect(),
        })
    }

    /// Sum of two measures on the same space (atom lists concatenate).
    pub fn add(&self, other: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        if !self.space.same_shape(&other.space) {
            return Err(UotError::SpaceMismatch("cannot add measures on different spaces".into()));
        }
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        Ok(DiscreteMeasure { space: self.space.clone(), atoms }.canonicalize())
    }
}

/// One weighted atom `(y1, y2, w)` of a coupling on the product cone.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingAtom {
    pub first: ConePoint,
    pub second: ConePoint,
    pub weight: f64,
}

/// A p-homogeneous coupling: weighted atoms on the product cone. The atom at
/// the double vertex is dropped at construction; removing it preserves the
/// homogeneous marginals and never increases any non-negative cost.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousCoupling {
    order: f64,
    atoms: Vec<CouplingAtom>,
}

impl HomogeneousCoupling {
    pub fn new(order: f64, atoms: Vec<CouplingAtom>) -> Result<Self> {
        if !(order.is_finite() && order >= 1.0) {
            return Err(UotError::InvalidCoupling(format!("homogeneity order {order} must be >= 1")));
        }
        let mut kept = Vec::with_capacity(atoms.len());
        for a in atoms {
            if !(a.weight.is_finite() && a.weight > 0.0) {
                return Err(UotError::InvalidCoupling(format!("atom weight {} must be finite and > 0", a.weight)));
            }
            if a.first.is_vertex() && a.second.is_vertex() {
                continue; // silently dropped
            }
            kept.push(a);
        }
        Ok(HomogeneousCoupling { order, atoms: kept })
    }

    pub fn empty(order: f64) -> Self {
        HomogeneousCoupling { order, atoms: Vec::new() }
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn atoms(&self) -> &[CouplingAtom] {
        &self.atoms
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Side of the product cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

/// The p-homogeneous marginal: pushes `weight * radius^p` to the ground
/// position of the chosen side. Vertex atoms contribute nothing.
pub fn homogeneous_marginal(
    coupling: &HomogeneousCoupling,
    side: Side,
    space: &Space,
) -> Result<DiscreteMeasure> {
    let p = coupling.order();
    let mut atoms: Vec<(Position, f64)> = Vec::new();
    for a in coupling.atoms() {
        let point = match side {
            Side::First => &a.first,
            Side::Second => &a.second,
        };
        if point.is_vertex() {
            continue;
        }
        let m = a.weight * point.mass().powf(p);
        atoms.push((point.position().unwrap().to_vec(), m));
    }
    Ok(DiscreteMeasure::new(space.clone(), atoms)?.canonicalize())
}

/// Normalizing dilation: rescales every atom along its ray so that the
/// output has total weight one while both p-homogeneous marginals are
/// preserved exactly. Radii of the output are bounded by the invariant
/// `r*(alpha)`, the total p-th radial moment.
///
/// The empty coupling maps to itself.
pub fn dilate_normalize(coupling: &HomogeneousCoupling) -> HomogeneousCoupling {
    let p = coupling.order();
    if coupling.is_empty() {
        return coupling.clone();
    }
    let r_star: f64 = coupling
        .atoms()
        .iter()
        .map(|a| a.weight * (a.first.mass().powf(p) + a.second.mass().powf(p)))
        .sum();
    let atoms = coupling
        .atoms()
        .iter()
        .map(|a| {
            let theta_p = (a.first.mass().powf(p) + a.second.mass().powf(p)) / r_star;
            let theta = theta_p.powf(1.0 / p);
            CouplingAtom {
                first: a.first.scaled(1.0 / theta),
                second: a.second.scaled(1.0 / theta),
                weight: a.weight * theta_p,
            }
        })
        .collect();
    HomogeneousCoupling { order: p, atoms }
}

/// Invariant radius bound used by [`dilate_normalize`].
pub fn radial_moment(coupling: &HomogeneousCoupling) -> f64 {
    let p = coupling.order();
    coupling
        .atoms()
        .iter()
        .map(|a| a.weight * (a.first.mass().powf(p) + a.second.mass().powf(p)))
        .sum()
}

/// Maps a 1-homogeneous coupling to a q-homogeneous one by `r -> r^(1/q)`;
/// the q-homogeneous marginals of the output equal the 1-homogeneous
/// marginals of the input.
pub fn radial_rescale(coupling: &HomogeneousCoupling, q: f64) -> Result<HomogeneousCoupling> {
    if coupling.order() != 1.0 {
        return Err(UotError::InvalidCoupling("radial rescale expects a coupling of order 1".into()));
    }
    if !(q.is_finite() && q >= 1.0) {
        return Err(UotError::InvalidArgument(format!("rescale exponent {q} must be >= 1")));
    }
    let atoms = coupling
        .atoms()
        .iter()
        .map(|a| CouplingAtom {
            first: a.first.with_mass(a.first.mass().powf(1.0 / q)),
            second: a.second.with_mass(a.second.mass().powf(1.0 / q)),
            weight: a.weight,
        })
        .collect();
    Ok(HomogeneousCoupling { order: q, atoms })
}

/// Inverse direction of [`radial_rescale`]: collapses a q-homogeneous
/// coupling back to order 1 by `r -> r^q`.
pub fn radial_collapse(coupling: &HomogeneousCoupling) -> HomogeneousCoupling {
    let q = coupling.order();
    let atoms = coupling
        .atoms()
        .iter()
        .map(|a| CouplingAtom {
            first: a.first.with_mass(a.first.mass().powf(q)),
            second: a.second.with_mass(a.second.mass().powf(q)),
            weight: a.weight,
        })
        .collect();
    HomogeneousCoupling { order: 1.0, atoms }
}

fn pair_key(a: &CouplingAtom) -> (Option<Vec<i128>>, Option<Vec<i128>>) {
    (
        a.first.position().map(position_key),
        a.second.position().map(position_key),
    )
}

/// Merges all atoms sharing a position pair (the vertex counts as a
/// distinguished pseudo-position) into a single atom at the weighted mean
/// radii. Homogeneous marginals are preserved; for radially convex costs the
/// cost never increases.
pub fn barycentric_projection(coupling: &HomogeneousCoupling) -> Result<HomogeneousCoupling> {
    if coupling.order() != 1.0 {
        return Err(UotError::InvalidCoupling("barycentric projection expects order 1".into()));
    }
    let mut order: Vec<(CouplingAtom, f64, f64)> = Vec::new(); // (prototype, sum w*r1, sum w*r2)
    let mut index: std::collections::HashMap<(Option<Vec<i128>>, Option<Vec<i128>>), usize> =
        std::collections::HashMap::new();
    for a in coupling.atoms() {
        let key = pair_key(a);
        match index.get(&key) {
            Some(&i) => {
                order[i].0.weight += a.weight;
                order[i].1 += a.weight * a.first.mass();
                order[i].2 += a.weight * a.second.mass();
            }
            None => {
                index.insert(key, order.len());
                order.push((a.clone(), a.weight * a.first.mass(), a.weight * a.second.mass()));
            }
        }
    }
    let atoms = order
        .into_iter()
        .map(|(proto, wr1, wr2)| {
            let w = proto.weight;
            CouplingAtom {
                first: proto.first.with_mass(wr1 / w),
                second: proto.second.with_mass(wr2 / w),
                weight: w,
            }
        })
        .collect();
    HomogeneousCoupling::new(1.0, atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space1() -> Space {
        Space::euclidean(1).unwrap()
    }

    fn pt(x: f64, r: f64) -> ConePoint {
        ConePoint::new(vec![x], r).unwrap()
    }

    #[test]
    fn cone_distance_same_position_is_mass_gap() {
        let s = space1();
        let d = cone_distance(&s, &pt(0.3, 2.0), &pt(0.3, 0.5), Truncation::Pi).unwrap();
        assert!((d - 1.5).abs() < 1e-14);
    }

    #[test]
    fn cone_distance_to_vertex_is_mass() {
        let s = space1();
        let d = cone_distance(&s, &pt(7.0, 2.5), &ConePoint::vertex(), Truncation::HalfPi).unwrap();
        assert!((d - 2.5).abs() < 1e-14);
    }

    #[test]
    fn cone_distance_truncations_differ_at_pi() {
        let s = space1();
        let a = pt(0.0, 1.0);
        let b = pt(std::f64::consts::PI, 1.0);
        let d_pi = cone_distance(&s, &a, &b, Truncation::Pi).unwrap();
        let d_half = cone_distance(&s, &a, &b, Truncation::HalfPi).unwrap();
        assert!((d_pi - 2.0).abs() < 1e-12);
        assert!((d_half - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn double_vertex_atom_is_dropped() {
        let c = HomogeneousCoupling::new(
            1.0,
            vec![CouplingAtom { first: ConePoint::vertex(), second: ConePoint::vertex(), weight: 3.0 }],
        )
        .unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn marginal_single_atom() {
        let s = space1();
        let c = HomogeneousCoupling::new(
            1.0,
            vec![CouplingAtom { first: pt(0.0, 2.0), second: pt(1.0, 3.0), weight: 1.0 }],
        )
        .unwrap();
        let m = homogeneous_marginal(&c, Side::First, &s).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.atoms()[0].1 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_of_vertex_side_is_null() {
        let s = space1();
        let c = HomogeneousCoupling::new(
            1.0,
            vec![CouplingAtom { first: pt(0.0, 1.0), second: ConePoint::vertex(), weight: 5.0 }],
        )
        .unwrap();
        let m = homogeneous_marginal(&c, Side::Second, &s).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn marginal_merges_shared_positions() {
        let s = space1();
        let c = HomogeneousCoupling::new(
            1.0,
            vec![
                CouplingAtom { first: pt(0.0, 1.0), second: pt(1.0, 1.0), weight: 0.5 },
                CouplingAtom { first: pt(0.0, 3.0), second: pt(2.0, 1.0), weight: 0.5 },
            ],
        )
        .unwrap();
        let m = homogeneous_marginal(&c, Side::First, &s).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.atoms()[0].1 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dilate_normalize_unit_weight() {
        let s = space1();
        let c = HomogeneousCoupling::new(
            1.0,
            vec![
                CouplingAtom { first: pt(0.0, 1.0), second: pt(1.0, 1.0), weight: 2.0 },
                CouplingAtom { first: pt(0.5, 0.2), second: ConePoint::vertex(), weight: 1.0 },
            ],
        )
        .unwrap();
        let r_star = radial_moment(&c);
        let n = dilate_normalize(&c);
        assert!((n.total_weight() - 1.0).abs() < 1e-12);
        for a in n.atoms() {
            assert!(a.first.mass() <= r_star + 1e-12);
            assert!(a.second.mass() <= r_star + 1e-12);
        }
        for side in [Side::First, Side::Second] {
            let before = homogeneous_marginal(&c, side, &s).unwrap();
            let after = homogeneous_marginal(&n, side, &s).unwrap();
            assert!(before.approx_eq(&after, 1e-12));
        }
    }

    #[test]
    fn dilate_normalize_fixed_point() {
        // A singleton already of weight one with r1 + r2 = r* is unchanged.
        let c = HomogeneousCoupling::new(
            1.0,
            vec![CouplingAtom { first: pt(0.0, 0.25), second: pt(1.0, 0.75), weight: 1.0 }],
        )
        .unwrap();
        let n = dilate_normalize(&c);
        assert!((n.atoms()[0].first.mass() - 0.25).abs() < 1e-15);
        assert!((n.atoms()[0].second.mass() - 0.75).abs() < 1e-15);
        assert!((n.atoms()[0].weight - 1.0).abs() < 1e-15);
    }

    #[test]
    fn radial_rescale_roundtrip() {
        let c = HomogeneousCoupling::new(
            1.0,
            vec![CouplingAtom { first: pt(0.0, 4.0), second: pt(1.0, 9.0), weight: 1.0 }],
        )
        .unwrap();
        let q = radial_rescale(&c, 2.0).unwrap();
        assert!((q.atoms()[0].first.mass() - 2.0).abs() < 1e-12);
        assert!((q.atoms()[0].second.mass() - 3.0).abs() < 1e-12);
        let back = radial_collapse(&q);
        assert!((back.atoms()[0].first.mass() - 4.0).abs() < 1e-12);
        assert!((back.atoms()[0].second.mass() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn rescale_preserves_marginals_under_matching_order() {
        let s = space1();
        let c = HomogeneousCoupling::new(
            1.0,
            vec![
                CouplingAtom { first: pt(0.0, 2.0), second: pt(1.0, 0.5), weight: 0.7 },
                CouplingAtom { first: pt(2.0, 1.0), second: pt(1.0, 3.0), weight: 0.3 },
            ],
        )
        .unwrap();
        let q = radial_rescale(&c, 3.0).unwrap();
        for side in [Side::First, Side::Second] {
            let m1 = homogeneous_marginal(&c, side, &s).unwrap();
            let mq = homogeneous_marginal(&q, side, &s).unwrap();
            assert!(m1.approx_eq(&mq, 1e-12));
        }
    }

    #[test]
    fn rescale_identity_at_one() {
        let c = HomogeneousCoupling::new(
            1.0,
            vec![CouplingAtom { first: pt(0.0, 0.3), second: pt(1.0, 0.6), weight: 1.0 }],
        )
        .unwrap();
        let r = radial_rescale(&c, 1.0).unwrap();
        assert_eq!(c, r);
    }

    #[test]
    fn rescale_rejects_bad_exponent() {
        let c = HomogeneousCoupling::empty(1.0);
        assert!(radial_rescale(&c, 0.5).is_err());
    }

    #[test]
    fn barycentric_merges_pairs() {
        let s = space1();
        let c = HomogeneousCoupling::new(
            1.0,
            vec![
                CouplingAtom { first: pt(0.0, 1.0), second: pt(1.0, 1.0), weight: 1.0 },
                CouplingAtom { first: pt(0.0, 3.0), second: pt(1.0, 3.0), weight: 1.0 },
            ],
        )
        .unwrap();
        let b = barycentric_projection(&c).unwrap();
        assert_eq!(b.atoms().len(), 1);
        assert!((b.atoms()[0].first.mass() - 2.0).abs() < 1e-14);
        assert!((b.atoms()[0].second.mass() - 2.0).abs() < 1e-14);
        assert!((b.atoms()[0].weight - 2.0).abs() < 1e-14);
        for side in [Side::First, Side::Second] {
            let before = homogeneous_marginal(&c, side, &s).unwrap();
            let after = homogeneous_marginal(&b, side, &s).unwrap();
            assert!(before.approx_eq(&after, 1e-12));
        }
    }

    #[test]
    fn barycentric_idempotent() {
        let c = HomogeneousCoupling::new(
            1.0,
            vec![
                CouplingAtom { first: pt(0.0, 1.0), second: pt(1.0, 2.0), weight: 0.25 },
                CouplingAtom { first: pt(0.0, 2.0), second: pt(1.0, 1.0), weight: 0.75 },
                CouplingAtom { first: pt(3.0, 1.0), second: ConePoint::vertex(), weight: 0.5 },
            ],
        )
        .unwrap();
        let b1 = barycentric_projection(&c).unwrap();
        let b2 = barycentric_projection(&b1).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn single_atom_projection_unchanged() {
        let c = HomogeneousCoupling::new(
            1.0,
            vec![CouplingAtom { first: pt(0.0, 1.3), second: pt(1.0, 0.2), weight: 2.0 }],
        )
        .unwrap();
        let b = barycentric_projection(&c).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn measure_canonicalization_merges() {
        let s = space1();
        let m = DiscreteMeasure::new(s, vec![(vec![1.0], 0.5), (vec![1.0], 0.25), (vec![2.0], 1.0)]).unwrap();
        let c = m.canonicalize();
        assert_eq!(c.len(), 2);
        assert!((c.total_mass() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn measure_rejects_nonpositive_mass() {
        let s = space1();
        assert!(DiscreteMeasure::new(s.clone(), vec![(vec![0.0], 0.0)]).is_err());
        assert!(DiscreteMeasure::new(s, vec![(vec![0.0], -1.0)]).is_err());
    }
}
