//! The catalogue of radially 1-homogeneous costs on the product cone:
//! evaluation, reduced slices, recession slopes, partial derivatives,
//! radial subgradients, and radial convex envelopes.
//!
//! Every cost here scales linearly under joint mass scaling,
//! `H(l*y1, l*y2) = l * H(y1, y2)`, so its behaviour along a fixed pair of
//! rays is captured by the slice `h(g) = H([x1,1],[x2,g])` together with the
//! recession slope `lim h(g)/g`.

use crate::cone::{ConePoint, Truncation};
use crate::error::{Result, UotError};
use crate::space::Space;

/// Default number of simplex directions for radial envelopes.
pub const DEFAULT_ENVELOPE_RESOLUTION: usize = 2048;

// ---------------------------------------------------------------------------
// ground costs
// ---------------------------------------------------------------------------

/// Scalar cost on pairs of ground positions used as a building block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundCost {
    Zero,
    Distance,
    SquaredDistance,
}

impl GroundCost {
    pub fn eval(self, space: &Space, x1: &[f64], x2: &[f64]) -> f64 {
        match self {
            GroundCost::Zero => 0.0,
            GroundCost::Distance => space.distance(x1, x2),
            GroundCost::SquaredDistance => {
                let d = space.distance(x1, x2);
                d * d
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 1-homogeneous mass blocks for product costs
// ---------------------------------------------------------------------------

/// Convex, 1-homogeneous functions of the mass pair used in product costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassBlock {
    /// `(r1^p + r2^p)^(1/p)` for `p >= 1`; the negated mean for `p < 1`,
    /// `p != 0`, with the convention that it vanishes when `r1 r2 = 0` and
    /// `p < 0`.
    Power(f64),
    /// `max(r1, r2)`.
    Max,
    /// `-min(r1, r2)`.
    NegMin,
    /// `-sqrt(r1 r2)`.
    NegGeometric,
    /// `|r1 - r2|^a / (r1 + r2)^(a-1)` for `a >= 1`, zero at the origin.
    GapPower(f64),
}

impl MassBlock {
    pub fn validate(self) -> Result<()> {
        match self {
            MassBlock::Power(p) if p == 0.0 || !p.is_finite() => {
                Err(UotError::InvalidCost("power block exponent must be finite and nonzero".into()))
            }
            MassBlock::GapPower(a) if !(a >= 1.0) => {
                Err(UotError::InvalidCost("gap power exponent must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(self, r1: f64, r2: f64) -> f64 {
        match self {
            MassBlock::Power(p) if p >= 1.0 => (r1.powf(p) + r2.powf(p)).powf(1.0 / p),
            MassBlock::Power(p) => {
                if r1 == 0.0 || r2 == 0.0 {
                    if p < 0.0 {
                        0.0
                    } else {
                        // 0 < p < 1: the mean is continuous down to the axis
                        -(r1.powf(p) + r2.powf(p)).powf(1.0 / p)
                    }
                } else {
                    -(r1.powf(p) + r2.powf(p)).powf(1.0 / p)
                }
            }
            MassBlock::Max => r1.max(r2),
            MassBlock::NegMin => -r1.min(r2),
            MassBlock::NegGeometric => -(r1 * r2).sqrt(),
            MassBlock::GapPower(a) => {
                let s = r1 + r2;
                if s == 0.0 {
                    0.0
                } else {
                    (r1 - r2).abs().powf(a) / s.powf(a - 1.0)
                }
            }
        }
    }

    /// Whether the block vanishes whenever `r1 r2 = 0`; required of the
    /// factor multiplying the ground cost so that the product is compatible
    /// with the cone identification (the cost of pure destruction or
    /// creation must not see the missing position).
    pub fn vanishes_on_boundary(self) -> bool {
        matches!(self, MassBlock::NegMin | MassBlock::NegGeometric)
            || matches!(self, MassBlock::Power(p) if p < 0.0)
    }
}

// ---------------------------------------------------------------------------
// entropy functions for the marginal perspective construction
// ---------------------------------------------------------------------------

/// Convex entropy on mass ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropySpec {
    /// Power entropy with exponent `p`.
    Power(f64),
    /// Indicator of the band `[a, b]`, `0 <= a <= 1 <= b <= inf`
    /// (`b = None` means unbounded above).
    Indicator { a: f64, b: Option<f64> },
    /// `|s - 1|^alpha`, `alpha >= 1`.
    Chi(f64),
}

impl EntropySpec {
    pub fn validate(self) -> Result<()> {
        match self {
            EntropySpec::Power(p) if !p.is_finite() => {
                Err(UotError::InvalidCost("power entropy exponent must be finite".into()))
            }
            EntropySpec::Indicator { a, b } => {
                let bv = b.unwrap_or(f64::INFINITY);
                if !(0.0 <= a && a <= 1.0 && 1.0 <= bv) {
                    Err(UotError::InvalidCost(format!("indicator band [{a}, {bv}] must contain 1 with a in [0,1]")))
                } else {
                    Ok(())
                }
            }
            EntropySpec::Chi(alpha) if !(alpha >= 1.0) => {
                Err(UotError::InvalidCost("chi exponent must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Value at ratio `s >= 0`.
    pub fn eval(self, s: f64) -> f64 {
        match self {
            EntropySpec::Power(p) => {
                if s == 0.0 {
                    if p > 0.0 {
                        1.0 / p
                    } else {
                        f64::INFINITY
                    }
                } else if p == 1.0 {
                    s * s.ln() - s + 1.0
                } else if p == 0.0 {
                    s - 1.0 - s.ln()
                } else {
                    (s.powf(p) - p * (s - 1.0) - 1.0) / (p * (p - 1.0))
                }
            }
            EntropySpec::Indicator { a, b } => {
                let bv = b.unwrap_or(f64::INFINITY);
                if s >= a && s <= bv {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            EntropySpec::Chi(alpha) => (s - 1.0).abs().powf(alpha),
        }
    }

    /// Recession slope `lim F(s)/s` as `s -> inf`.
    pub fn recession(self) -> f64 {
        match self {
            EntropySpec::Power(p) => {
                if p > 1.0 || p == 1.0 {
                    f64::INFINITY
                } else if p == 0.0 {
                    1.0
                } else {
                    1.0 / (1.0 - p)
                }
            }
            EntropySpec::Indicator { b, .. } => {
                if b.is_none() {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            EntropySpec::Chi(alpha) => {
                if alpha == 1.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// the cost catalogue
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `r1 + r2 - 2 sqrt(r1 r2) exp(-|x1-x2|^2 / 2)`.
    Gaussian,
    /// `r1 + r2 - 2 sqrt(r1 r2) cos(|x1-x2| /\ pi/2)`.
    Hellinger,
    /// `p`-th power of the truncated cone metric after the `r -> r^(1/p)`
    /// change of radius, radially 1-homogeneous for every `p = q >= 1`.
    ConePower { p: f64, truncation: Truncation },
    /// `Hplus(r1,r2) + Hminus(r1,r2) * c(x1,x2)`.
    Product { plus: MassBlock, minus: MassBlock, ground: GroundCost },
    /// Marginal perspective cost built from two entropies and a ground cost.
    Perspective { f1: EntropySpec, f2: EntropySpec, ground: GroundCost },
}

/// A radially 1-homogeneous cost on the product cone.
#[derive(Debug, Clone, PartialEq)]
pub struct Cost {
    kind: CostKind,
}

/// Domain of the reduced slice in the mass-ratio variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainCone {
    All,
    /// Finite on the open cone `{ r2 > q1 r1, r1 > q2 r2 }`.
    Open { q1: f64, q2: f64 },
}

impl Cost {
    pub fn ghk() -> Cost {
        Cost { kind: CostKind::Gaussian }
    }

    pub fn hk() -> Cost {
        Cost { kind: CostKind::Hellinger }
    }

    /// Power of the cone metric; 1-homogeneity requires the radius exponent
    /// to match the metric power, so only `p = q` is accepted.
    pub fn cone_power(p: f64, q: f64, truncation: Truncation) -> Result<Cost> {
        if p != q {
            return Err(UotError::InvalidCost(format!(
                "cone power requires matching exponents (got p = {p}, q = {q}); only p = q is radially 1-homogeneous"
            )));
        }
        if !(p.is_finite() && p >= 1.0) {
            return Err(UotError::InvalidCost(format!("cone power exponent {p} must be >= 1")));
        }
        Ok(Cost { kind: CostKind::ConePower { p, truncation } })
    }

    /// Mass-space product `Hplus + Hminus * c`. Non-negativity is checked on
    /// a fixed validation sample of ratios and ground-cost values; binding a
    /// cost to an instance re-validates on the actual support pairs.
    pub fn product(plus: MassBlock, minus: MassBlock, ground: GroundCost) -> Result<Cost> {
        plus.validate()?;
        minus.validate()?;
        if !minus.vanishes_on_boundary() && ground != GroundCost::Zero {
            return Err(UotError::InvalidCost(
                "the block multiplying the ground cost must vanish when r1 r2 = 0, otherwise destruction and creation costs would depend on the missing position".into(),
            ));
        }
        let cost = Cost { kind: CostKind::Product { plus, minus, ground } };
        // validation sample: simplex ratios x representative ground values
        for &c in &[0.0, 0.5, 1.0, 2.0] {
            for k in 0..=32 {
                let t = k as f64 / 32.0;
                let v = plus.eval(t, 1.0 - t) + minus.eval(t, 1.0 - t) * c;
                if v < -1e-12 {
                    return Err(UotError::InvalidCost(format!(
                        "product cost is negative ({v}) at ratio {t} with ground value {c}"
                    )));
                }
            }
        }
        Ok(cost)
    }

    pub fn perspective(f1: EntropySpec, f2: EntropySpec, ground: GroundCost) -> Result<Cost> {
        f1.validate()?;
        f2.validate()?;
        Ok(Cost { kind: CostKind::Perspective { f1, f2, ground } })
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    /// Checks the product-cost non-negativity condition on the actual
    /// support pairs of an instance.
    pub fn validate_on_pairs(&self, space: &Space, xs1: &[Vec<f64>], xs2: &[Vec<f64>]) -> Result<()> {
        if let CostKind::Product { plus, minus, ground } = &self.kind {
            for x1 in xs1 {
                for x2 in xs2 {
                    let c = ground.eval(space, x1, x2);
                    for k in 0..=64 {
                        let t = k as f64 / 64.0;
                        let v = plus.eval(t, 1.0 - t) + minus.eval(t, 1.0 - t) * c;
                        if v < -1e-12 {
                            return Err(UotError::InvalidCost(format!(
                                "product cost is negative ({v}) on a support pair with ground value {c}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    // -- structural flags ---------------------------------------------------

    pub fn radially_convex(&self) -> bool {
        match &self.kind {
            CostKind::Gaussian | CostKind::Hellinger => true,
            CostKind::ConePower { p, truncation } => *p == 2.0 && *truncation == Truncation::HalfPi,
            CostKind::Product { .. } => true,
            CostKind::Perspective { .. } => true,
        }
    }

    pub fn finite_everywhere(&self) -> bool {
        match &self.kind {
            CostKind::Gaussian | CostKind::Hellinger | CostKind::ConePower { .. } => true,
            CostKind::Product { .. } => true,
            CostKind::Perspective { f1, f2, .. } => {
                !matches!(f1, EntropySpec::Indicator { .. }) && !matches!(f2, EntropySpec::Indicator { .. })
            }
        }
    }

    /// `Some(p)` when the cost is the `p`-th power of a cone metric, so that
    /// the transport value to the power `1/p` is a distance on measures.
    pub fn metric_power(&self) -> Option<f64> {
        match &self.kind {
            CostKind::Gaussian | CostKind::Hellinger => Some(2.0),
            CostKind::ConePower { p, .. } => Some(*p),
            _ => None,
        }
    }

    pub fn domain_cone(&self) -> DomainCone {
        match &self.kind {
            CostKind::Perspective { f1, f2, .. } => {
                // indicator entropies bound the mass ratio to the band
                // [a/b, b/a]; power and chi entropies leave the slice finite
                // on the whole quadrant.
                if let (EntropySpec::Indicator { a, b }, EntropySpec::Indicator { a: a2, b: b2 }) = (f1, f2) {
                    if a == a2 && b == b2 {
                        let q = match b {
                            Some(bv) => a / bv,
                            None => 0.0,
                        };
                        return DomainCone::Open { q1: q, q2: q };
                    }
                }
                DomainCone::All
            }
            _ => DomainCone::All,
        }
    }

    // -- evaluation ----------------------------------------------------------

    /// Coefficient `c` when the slice at `(x1, x2)` is of the square-root
    /// family `r1 + r2 - 2 c sqrt(r1 r2)`; `None` for other families.
    pub fn sqrt_coefficient(&self, space: &Space, x1: &[f64], x2: &[f64]) -> Option<f64> {
        match &self.kind {
            CostKind::Gaussian => {
                let d = space.distance(x1, x2);
                Some((-d * d / 2.0).exp())
            }
            CostKind::Hellinger => {
                let d = space.distance(x1, x2);
                Some(d.min(std::f64::consts::FRAC_PI_2).cos())
            }
            CostKind::ConePower { p, truncation } if *p == 2.0 => {
                let d = space.distance(x1, x2);
                Some(d.min(truncation.angle()).cos())
            }
            CostKind::Perspective { f1: EntropySpec::Power(p1), f2: EntropySpec::Power(p2), ground }
                if *p1 == 1.0 && *p2 == 1.0 =>
            {
                Some((-ground.eval(space, x1, x2) / 2.0).exp())
            }
            _ => None,
        }
    }

    pub fn eval(&self, space: &Space, y1: &ConePoint, y2: &ConePoint) -> f64 {
        let (r1, r2) = (y1.mass(), y2.mass());
        if r1 == 0.0 && r2 == 0.0 {
            return 0.0;
        }
        match &self.kind {
            CostKind::Gaussian | CostKind::Hellinger => {
                if r1 == 0.0 || r2 == 0.0 {
                    return r1 + r2;
                }
                let c = self.sqrt_coefficient(space, y1.position().unwrap(), y2.position().unwrap()).unwrap();
                (r1 + r2 - 2.0 * (r1 * r2).sqrt() * c).max(0.0)
            }
            CostKind::ConePower { p, truncation } => {
                if r1 == 0.0 || r2 == 0.0 {
                    return r1 + r2;
                }
                let d = space.distance(y1.position().unwrap(), y2.position().unwrap());
                let c = d.min(truncation.angle()).cos();
                let e = 2.0 / p;
                let base = r1.powf(e) + r2.powf(e) - 2.0 * (r1 * r2).powf(1.0 / p) * c;
                base.max(0.0).powf(p / 2.0)
            }
            CostKind::Product { plus, minus, ground } => {
                let base = plus.eval(r1, r2);
                if r1 == 0.0 || r2 == 0.0 {
                    // the minus block vanishes here by construction
                    return base;
                }
                let c = ground.eval(space, y1.position().unwrap(), y2.position().unwrap());
                base + minus.eval(r1, r2) * c
            }
            CostKind::Perspective { f1, f2, ground } => {
                let c = if r1 > 0.0 && r2 > 0.0 {
                    ground.eval(space, y1.position().unwrap(), y2.position().unwrap())
                } else {
                    // boundary values do not involve the missing position
                    0.0
                };
                perspective_eval(*f1, *f2, c, r1, r2)
            }
        }
    }

    /// Reduced slice `h(g) = H([x1, 1], [x2, g])`.
    pub fn reduced(&self, space: &Space, x1: &[f64], x2: &[f64], g: f64) -> f64 {
        let y1 = ConePoint::new(x1.to_vec(), 1.0).unwrap();
        let y2 = if g == 0.0 {
            ConePoint::vertex()
        } else {
            ConePoint::new(x2.to_vec(), g).unwrap()
        };
        self.eval(space, &y1, &y2)
    }

    /// Recession slope of the reduced slice, the unit cost of pure creation.
    pub fn recession(&self, space: &Space, x1: &[f64], x2: &[f64]) -> f64 {
        match &self.kind {
            CostKind::Gaussian | CostKind::Hellinger | CostKind::ConePower { .. } => 1.0,
            CostKind::Product { plus, minus, ground } => {
                let rec_plus = mass_block_recession(*plus);
                let rec_minus = mass_block_recession(*minus);
                rec_plus + rec_minus * ground.eval(space, x1, x2)
            }
            CostKind::Perspective { f1, f2, ground } => {
                match (f1, f2) {
                    (EntropySpec::Power(p1), EntropySpec::Power(p2)) if p1 == p2 => {
                        let p = *p1;
                        let c = ground.eval(space, x1, x2);
                        if p == 1.0 {
                            1.0
                        } else if p == 0.0 {
                            (2.0 + c).ln()
                        } else if p > 1.0 {
                            1.0 / p
                        } else {
                            let k = (2.0 - (p - 1.0) * c).max(0.0).powf(p / (p - 1.0));
                            (1.0 - k) / p
                        }
                    }
                    (EntropySpec::Chi(a1), EntropySpec::Chi(a2)) if *a1 == 1.0 && *a2 == 1.0 => 1.0,
                    (EntropySpec::Indicator { a, .. }, EntropySpec::Indicator { .. }) => {
                        if *a == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    }
                    _ => {
                        // numeric chord slope; for convex slices this
                        // converges to the recession from below
                        let g1 = 1e8;
                        let g2 = 2e8;
                        let h1 = self.reduced(space, x1, x2, g1);
                        let h2 = self.reduced(space, x1, x2, g2);
                        if !h1.is_finite() || !h2.is_finite() {
                            f64::INFINITY
                        } else {
                            (h2 - h1) / (g2 - g1)
                        }
                    }
                }
            }
        }
    }

    /// Destruction slope `H([x1, 1], vertex)`.
    pub fn destruction_slope(&self, space: &Space, x1: &[f64]) -> f64 {
        self.eval(space, &ConePoint::new(x1.to_vec(), 1.0).unwrap(), &ConePoint::vertex())
    }

    /// Creation slope `H(vertex, [x2, 1])`.
    pub fn creation_slope(&self, space: &Space, x2: &[f64]) -> f64 {
        self.eval(space, &ConePoint::vertex(), &ConePoint::new(x2.to_vec(), 1.0).unwrap())
    }

    // -- derivatives ----------------------------------------------------------

    /// Closed-form mass partial `dH/dr1` where available (square-root family
    /// at interior points).
    pub fn partial_r1(&self, space: &Space, y1: &ConePoint, y2: &ConePoint) -> Option<f64> {
        let (r1, r2) = (y1.mass(), y2.mass());
        if r1 <= 0.0 || r2 <= 0.0 {
            return None;
        }
        let c = self.sqrt_coefficient(space, y1.position().unwrap(), y2.position().unwrap())?;
        Some(1.0 - (r2 / r1).sqrt() * c)
    }

    /// Closed-form spatial gradient `dH/dx1` where available (Gaussian and
    /// Hellinger kinds on Euclidean spaces).
    pub fn partial_x1(&self, space: &Space, y1: &ConePoint, y2: &ConePoint) -> Option<Vec<f64>> {
        let (r1, r2) = (y1.mass(), y2.mass());
        if r1 <= 0.0 || r2 <= 0.0 {
            return None;
        }
        let x1 = y1.position().unwrap();
        let x2 = y2.position().unwrap();
        let d = space.distance(x1, x2);
        let s = 2.0 * (r1 * r2).sqrt();
        match &self.kind {
            CostKind::Gaussian => {
                let e = (-d * d / 2.0).exp();
                Some(x1.iter().zip(x2).map(|(a, b)| s * e * (a - b)).collect())
            }
            CostKind::Hellinger => {
                if d >= std::f64::consts::FRAC_PI_2 {
                    return Some(vec![0.0; x1.len()]);
                }
                // d/dx1 of -cos(d) is sin(d) (x1 - x2)/d, with the d -> 0 limit 1
                let factor = if d == 0.0 { 1.0 } else { d.sin() / d };
                Some(x1.iter().zip(x2).map(|(a, b)| s * factor * (a - b)).collect())
            }
            _ => None,
        }
    }

    /// An element of the radial subdifferential at an interior point of the
    /// slice domain. Uses closed forms for the square-root family and
    /// central differences otherwise; the defining inequality is spot-checked
    /// on a few probes before returning.
    pub fn radial_subgradient(&self, space: &Space, y1: &ConePoint, y2: &ConePoint) -> Result<(f64, f64)> {
        let (r1, r2) = (y1.mass(), y2.mass());
        if r1 <= 0.0 || r2 <= 0.0 {
            return Err(UotError::OutsideDomain(
                "radial subgradient needs strictly positive masses".into(),
            ));
        }
        let x1 = y1.position().unwrap();
        let x2 = y2.position().unwrap();
        if let DomainCone::Open { q1, q2 } = self.domain_cone() {
            let g = r2 / r1;
            let hi = if q2 == 0.0 { f64::INFINITY } else { 1.0 / q2 };
            if g <= q1 || g >= hi {
                return Err(UotError::OutsideDomain(format!("ratio {g} outside the open cone")));
            }
        }
        let (a, b) = if let Some(c) = self.sqrt_coefficient(space, x1, x2) {
            (1.0 - (r2 / r1).sqrt() * c, 1.0 - (r1 / r2).sqrt() * c)
        } else {
            let h = 1e-7 * (1.0 + r1.max(r2));
            let f = |u: f64, v: f64| {
                self.eval(
                    space,
                    &ConePoint::new(x1.to_vec(), u).unwrap(),
                    &ConePoint::new(x2.to_vec(), v).unwrap(),
                )
            };
            let da = (f(r1 + h, r2) - f(r1 - h, r2)) / (2.0 * h);
            let db = (f(r1, r2 + h) - f(r1, r2 - h)) / (2.0 * h);
            (da, db)
        };
        if !(a.is_finite() && b.is_finite()) {
            return Err(UotError::OutsideDomain("subgradient is unbounded at this point".into()));
        }
        // spot-check the subgradient inequality on a few radial probes
        let h0 = self.eval(space, y1, y2);
        for &(s1, s2) in &[(0.5, 0.5), (2.0, 2.0), (1.5, 0.5), (0.5, 1.5), (3.0, 1.0), (1.0, 3.0)] {
            let p1 = r1 * s1;
            let p2 = r2 * s2;
            let hp = self.eval(
                space,
                &ConePoint::new(x1.to_vec(), p1).unwrap(),
                &ConePoint::new(x2.to_vec(), p2).unwrap(),
            );
            if hp.is_finite() && hp - h0 < a * (p1 - r1) + b * (p2 - r2) - 1e-6 * (1.0 + hp.abs()) {
                return Err(UotError::OutsideDomain(
                    "subgradient inequality fails; the slice is not convex here".into(),
                ));
            }
        }
        Ok((a, b))
    }
}

fn mass_block_recession(b: MassBlock) -> f64 {
    match b {
        MassBlock::Power(p) if p >= 1.0 => 1.0,
        MassBlock::Power(p) if p > 0.0 => -1.0,
        MassBlock::Power(_) => 0.0,
        MassBlock::Max => 1.0,
        MassBlock::NegMin => 0.0,
        MassBlock::NegGeometric => 0.0,
        MassBlock::GapPower(_) => 1.0,
    }
}

// ---------------------------------------------------------------------------
// perspective evaluation
// ---------------------------------------------------------------------------

/// Evaluates the marginal perspective cost at masses `(r1, r2)` with ground
/// value `c`, using closed forms for the catalogued entropy pairs and a
/// guarded 1-d minimization otherwise. Boundary values (`r1 r2 = 0`) are the
/// directional limits along the mass axes.
pub fn perspective_eval(f1: EntropySpec, f2: EntropySpec, c: f64, r1: f64, r2: f64) -> f64 {
    if r1 == 0.0 && r2 == 0.0 {
        return 0.0;
    }
    match (f1, f2) {
        (EntropySpec::Power(p1), EntropySpec::Power(p2)) if p1 == p2 => power_perspective(p1, c, r1, r2),
        (EntropySpec::Indicator { a, b }, EntropySpec::Indicator { a: a2, b: b2 }) if a == a2 && b == b2 => {
            let bv = b.unwrap_or(f64::INFINITY);
            let lo = if bv.is_infinite() { 0.0 } else { a / bv };
            let hi = if a == 0.0 { f64::INFINITY } else { bv / a };
            let ratio = if r2 == 0.0 { f64::INFINITY } else { r1 / r2 };
            if ratio >= lo && ratio <= hi {
                0.0
            } else {
                f64::INFINITY
            }
        }
        (EntropySpec::Chi(a1), EntropySpec::Chi(a2)) if a1 == 1.0 && a2 == 1.0 => {
            (r2 - r1).abs() + c.min(2.0) * r1.min(r2)
        }
        _ => perspective_numeric(f1, f2, c, r1, r2),
    }
}

fn power_perspective(p: f64, c: f64, r1: f64, r2: f64) -> f64 {
    if p == 1.0 {
        if r1 == 0.0 || r2 == 0.0 {
            return r1 + r2;
        }
        return (r1 + r2 - 2.0 * (r1 * r2).sqrt() * (-c / 2.0).exp()).max(0.0);
    }
    if p == 0.0 {
        let xlnx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
        let s = r1 + r2;
        return (xlnx(r1) + xlnx(r2) - s * (s / (2.0 + c)).ln()).max(0.0);
    }
    let k = (2.0 - (p - 1.0) * c).max(0.0).powf(p / (p - 1.0));
    let coupled = if r1 == 0.0 || r2 == 0.0 {
        if p > 1.0 {
            0.0
        } else {
            // 0 < p < 1 or p < 0: the coupled term tends to the larger mass
            r1.max(r2)
        }
    } else {
        r1 * r2 / (r1.powf(p - 1.0) + r2.powf(p - 1.0)).powf(1.0 / (p - 1.0))
    };
    (((r1 + r2) - coupled * k) / p).max(0.0)
}

/// Guarded golden-section minimization of the perspective objective over
/// `log(theta)`, per the construction's convexity in `theta`.
fn perspective_numeric(f1: EntropySpec, f2: EntropySpec, c: f64, r1: f64, r2: f64) -> f64 {
    let rec1 = f1.recession();
    let rec2 = f2.recession();
    let objective = |theta: f64| -> f64 {
        let t1 = if r1 == 0.0 { theta * rec1 } else { r1 * f1.eval(theta / r1) };
        let t2 = if r2 == 0.0 { theta * rec2 } else { r2 * f2.eval(theta / r2) };
        t1 + t2 + theta * c
    };
    // boundary candidate theta -> 0
    let zero_limit = r1 * f1.eval(0.0) + r2 * f2.eval(0.0);
    let mut lo = -30.0f64;
    let mut hi = 30.0f64;
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1v = objective(x1.exp());
    let mut f2v = objective(x2.exp());
    for _ in 0..200 {
        if f1v <= f2v {
            hi = x2;
            x2 = x1;
            f2v = f1v;
            x1 = hi - phi * (hi - lo);
            f1v = objective(x1.exp());
        } else {
            lo = x1;
            x1 = x2;
            f1v = f2v;
            x2 = lo + phi * (hi - lo);
            f2v = objective(x2.exp());
        }
    }
    let interior = f1v.min(f2v);
    interior.min(zero_limit).max(0.0)
}

// ---------------------------------------------------------------------------
// radial convex envelopes
// ---------------------------------------------------------------------------

/// The sublinear (1-homogeneous convex) envelope of a cost slice, computed
/// as the lower convex hull of samples on the unit mass simplex. Evaluation
/// is the support function of the affine minorants determined by the hull,
/// and converges to the exact envelope as the resolution grows.
#[derive(Debug, Clone)]
pub struct RadialEnvelope {
    /// hull vertices `(t, h(t))` with `t = r1/(r1+r2)`, increasing in `t`
    hull: Vec<(f64, f64)>,
}

impl RadialEnvelope {
    pub fn hull(&self) -> &[(f64, f64)] {
        &self.hull
    }

    /// Envelope value at masses `(r1, r2)`.
    pub fn eval(&self, r1: f64, r2: f64) -> f64 {
        let s = r1 + r2;
        if s == 0.0 {
            return 0.0;
        }
        let t = r1 / s;
        if self.hull.is_empty() {
            return f64::INFINITY;
        }
        let (t0, _) = self.hull[0];
        let (t1, _) = *self.hull.last().unwrap();
        if t < t0 - 1e-15 || t > t1 + 1e-15 {
            return f64::INFINITY;
        }
        if self.hull.len() == 1 {
            return s * self.hull[0].1;
        }
        // binary search for the segment containing t
        let mut lo = 0usize;
        let mut hi = self.hull.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.hull[mid].0 <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (ta, ha) = self.hull[lo];
        let (tb, hb) = self.hull[hi];
        let w = if tb > ta { ((t - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 0.0 };
        s * (ha + w * (hb - ha))
    }
}

/// Computes the radial closed convex envelope of `cost` on the ray pair
/// `(x1, x2)` from `resolution` simplex samples.
pub fn radial_cc_envelope(
    cost: &Cost,
    space: &Space,
    x1: &[f64],
    x2: &[f64],
    resolution: usize,
) -> Result<RadialEnvelope> {
    if resolution < 2 {
        return Err(UotError::InvalidArgument("envelope resolution must be at least 2".into()));
    }
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(resolution);
    for k in 0..resolution {
        let t = k as f64 / (resolution - 1) as f64;
        let y1 = if t == 0.0 { ConePoint::vertex() } else { ConePoint::new(x1.to_vec(), t).unwrap() };
        let y2 = if t == 1.0 { ConePoint::vertex() } else { ConePoint::new(x2.to_vec(), 1.0 - t).unwrap() };
        let h = cost.eval(space, &y1, &y2);
        if h.is_finite() {
            samples.push((t, h));
        }
    }
    if samples.is_empty() {
        return Err(UotError::OutsideDomain("the slice is nowhere finite on the simplex grid".into()));
    }
    Ok(RadialEnvelope { hull: lower_convex_hull(&samples) })
}

/// Lower convex hull of a function graph sampled at increasing abscissae
/// (monotone-chain on the point set, keeping only the lower boundary).
pub(crate) fn lower_convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &(x, y) in points {
        while hull.len() >= 2 {
            let (x1, y1) = hull[hull.len() - 2];
            let (x2, y2) = hull[hull.len() - 1];
            // drop the middle point unless it turns strictly upward
            if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) < 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push((x, y));
    }
    hull
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
    fn ghk_values() {
        let s = space1();
        let g = Cost::ghk();
        assert_eq!(g.eval(&s, &pt(0.3, 1.0), &pt(0.3, 1.0)), 0.0);
        assert!((g.eval(&s, &pt(0.0, 1.0), &ConePoint::vertex()) - 1.0).abs() < 1e-15);
        // 1 + 4 - 2*2*e^0 = 1
        assert!((g.eval(&s, &pt(0.0, 1.0), &pt(0.0, 4.0)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hk_saturates_at_half_pi() {
        let s = space1();
        let h = Cost::hk();
        let v = h.eval(&s, &pt(0.0, 1.0), &pt(2.0, 1.0));
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cone_power_examples() {
        let s = space1();
        let c = Cost::cone_power(2.0, 2.0, Truncation::HalfPi).unwrap();
        // same point: (sqrt r1 - sqrt r2)^2
        let v = c.eval(&s, &pt(1.0, 4.0), &pt(1.0, 1.0));
        assert!((v - 1.0).abs() < 1e-12);
        // vertex second argument
        assert!((c.eval(&s, &pt(0.0, 0.7), &ConePoint::vertex()) - 0.7).abs() < 1e-15);
        // full truncation at distance pi
        let cpi = Cost::cone_power(2.0, 2.0, Truncation::Pi).unwrap();
        let v = cpi.eval(&s, &pt(0.0, 1.0), &pt(std::f64::consts::PI, 1.0));
        assert!((v - 4.0).abs() < 1e-12);
        assert!(Cost::cone_power(2.0, 3.0, Truncation::Pi).is_err());
    }

    #[test]
    fn product_examples() {
        let s = space1();
        // Hplus = m1, Hminus = m0, c == 0: H = r1 + r2
        let p = Cost::product(MassBlock::Power(1.0), MassBlock::NegGeometric, GroundCost::Zero).unwrap();
        assert!((p.eval(&s, &pt(0.0, 1.5), &pt(1.0, 2.5)) - 4.0).abs() < 1e-14);
        assert!((MassBlock::NegMin.eval(2.0, 3.0) + 2.0).abs() < 1e-15);
        assert!((MassBlock::GapPower(2.0).eval(1.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn product_rejects_incompatible_minus_block() {
        assert!(Cost::product(MassBlock::Power(1.0), MassBlock::Max, GroundCost::Distance).is_err());
    }

    #[test]
    fn perspective_power_one_matches_ghk() {
        let s = space1();
        let g = Cost::ghk();
        let p = Cost::perspective(
            EntropySpec::Power(1.0),
            EntropySpec::Power(1.0),
            GroundCost::SquaredDistance,
        )
        .unwrap();
        for &(x1, r1, x2, r2) in &[(0.0, 1.0, 0.0, 1.0), (0.0, 2.0, 1.0, 0.5), (0.0, 0.0, 0.7, 3.0), (0.2, 1.3, 2.0, 0.0)] {
            let y1 = if r1 == 0.0 { ConePoint::vertex() } else { pt(x1, r1) };
            let y2 = if r2 == 0.0 { ConePoint::vertex() } else { pt(x2, r2) };
            let a = g.eval(&s, &y1, &y2);
            let b = p.eval(&s, &y1, &y2);
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn perspective_indicator_band() {
        let s = space1();
        let p = Cost::perspective(
            EntropySpec::Indicator { a: 1.0, b: Some(1.0) },
            EntropySpec::Indicator { a: 1.0, b: Some(1.0) },
            GroundCost::Zero,
        )
        .unwrap();
        assert_eq!(p.eval(&s, &pt(0.0, 1.0), &pt(1.0, 1.0)), 0.0);
        assert!(p.eval(&s, &pt(0.0, 1.0), &pt(1.0, 2.0)).is_infinite());
    }

    #[test]
    fn perspective_chi_one() {
        let s = Space::euclidean(1).unwrap();
        let p = Cost::perspective(EntropySpec::Chi(1.0), EntropySpec::Chi(1.0), GroundCost::Distance).unwrap();
        // c = 3: |2 - 1| + (3 /\ 2) * (1 /\ 2) = 3
        let v = p.eval(&s, &pt(0.0, 1.0), &pt(3.0, 2.0));
        assert!((v - 3.0).abs() < 1e-14);
    }

    #[test]
    fn perspective_numeric_matches_closed_form() {
        let s = space1();
        // compare the generic minimization against the p = 1 closed form by
        // pairing Power(1) with itself through the fallback path
        for &(r1, r2, c) in &[(1.0, 1.0, 0.5), (2.0, 0.5, 1.3), (0.3, 3.0, 0.0), (1.0, 0.0, 2.0)] {
            let closed = power_perspective(1.0, c, r1, r2);
            let numeric = perspective_numeric(EntropySpec::Power(1.0), EntropySpec::Power(1.0), c, r1, r2);
            assert!((closed - numeric).abs() <= 1e-8 * (1.0 + closed.abs()), "{closed} vs {numeric}");
        }
    }

    #[test]
    fn one_homogeneity_sampled() {
        let s = space1();
        let costs: Vec<Cost> = vec![
            Cost::ghk(),
            Cost::hk(),
            Cost::cone_power(2.0, 2.0, Truncation::Pi).unwrap(),
            Cost::product(MassBlock::Power(1.0), MassBlock::NegGeometric, GroundCost::Distance).unwrap(),
            Cost::perspective(EntropySpec::Power(2.0), EntropySpec::Power(2.0), GroundCost::SquaredDistance).unwrap(),
            Cost::perspective(EntropySpec::Chi(1.0), EntropySpec::Chi(1.0), GroundCost::Distance).unwrap(),
        ];
        for cost in &costs {
            for &(r1, r2) in &[(1.0, 1.0), (0.3, 2.0), (2.5, 0.0)] {
                let y1 = if r1 == 0.0 { ConePoint::vertex() } else { pt(0.2, r1) };
                let y2 = if r2 == 0.0 { ConePoint::vertex() } else { pt(1.1, r2) };
                let base = cost.eval(&s, &y1, &y2);
                for &l in &[0.5, 2.0, 10.0] {
                    let v = cost.eval(&s, &y1.scaled(l), &y2.scaled(l));
                    assert!(
                        (v - l * base).abs() <= 1e-10 * (1.0 + v.abs()),
                        "{:?}: H(l y) = {v}, l H(y) = {}",
                        cost.kind(),
                        l * base
                    );
                }
            }
        }
    }

    #[test]
    fn expansion_identity() {
        // H(r1, r2) = r1 h(r2/r1) for r1 > 0, and r2 * recession for r1 = 0
        let s = space1();
        let costs = [Cost::ghk(), Cost::hk()];
        for cost in &costs {
            for &(r1, r2) in &[(1.0, 3.0), (0.4, 0.8), (2.0, 0.0)] {
                let y2 = if r2 == 0.0 { ConePoint::vertex() } else { pt(1.3, r2) };
                let direct = cost.eval(&s, &pt(0.0, r1), &y2);
                let via_slice = r1 * cost.reduced(&s, &[0.0], &[1.3], r2 / r1);
                assert!((direct - via_slice).abs() <= 1e-10 * (1.0 + direct.abs()));
            }
            let created = cost.eval(&s, &ConePoint::vertex(), &pt(1.3, 2.0));
            let via_recession = 2.0 * cost.recession(&s, &[0.0], &[1.3]);
            assert!((created - via_recession).abs() <= 1e-10 * (1.0 + created.abs()));
        }
    }

    #[test]
    fn finite_difference_gradients() {
        let s = Space::euclidean(2).unwrap();
        let costs = [Cost::ghk(), Cost::hk()];
        let step = 1e-6;
        for cost in &costs {
            for &(dx, r1, r2) in &[(0.3, 1.0, 2.0), (1.1, 0.5, 0.5), (2.5, 2.0, 0.7)] {
                let x1 = vec![0.1, -0.2];
                let x2 = vec![0.1 + dx, -0.2 + 0.4];
                let y1 = ConePoint::new(x1.clone(), r1).unwrap();
                let y2 = ConePoint::new(x2.clone(), r2).unwrap();
                let dr = cost.partial_r1(&s, &y1, &y2).unwrap();
                let f = |rr: f64| cost.eval(&s, &ConePoint::new(x1.clone(), rr).unwrap(), &y2);
                let fd = (f(r1 + step) - f(r1 - step)) / (2.0 * step);
                assert!((dr - fd).abs() <= 1e-5, "dr1 {dr} vs fd {fd}");
                let grad = cost.partial_x1(&s, &y1, &y2).unwrap();
                for k in 0..2 {
                    let mut xp = x1.clone();
                    let mut xm = x1.clone();
                    xp[k] += step;
                    xm[k] -= step;
                    let fd = (cost.eval(&s, &ConePoint::new(xp, r1).unwrap(), &y2)
                        - cost.eval(&s, &ConePoint::new(xm, r1).unwrap(), &y2))
                        / (2.0 * step);
                    assert!((grad[k] - fd).abs() <= 1e-5, "dx1[{k}] {} vs fd {fd}", grad[k]);
                }
            }
        }
    }

    #[test]
    fn subgradient_examples() {
        let s = space1();
        let g = Cost::ghk();
        let (a, b) = g.radial_subgradient(&s, &pt(0.0, 1.0), &pt(0.0, 1.0)).unwrap();
        assert!(a.abs() < 1e-14 && b.abs() < 1e-14);
        let (a, _) = g.radial_subgradient(&s, &pt(0.0, 1.0), &pt(0.0, 4.0)).unwrap();
        assert!((a + 1.0).abs() < 1e-14);
        assert!(g.radial_subgradient(&s, &pt(0.0, 1.0), &ConePoint::vertex()).is_err());
    }

    #[test]
    fn midpoint_radial_convexity_for_flagged_costs() {
        let s = space1();
        let costs = vec![
            Cost::ghk(),
            Cost::hk(),
            Cost::cone_power(2.0, 2.0, Truncation::HalfPi).unwrap(),
            Cost::perspective(EntropySpec::Power(2.0), EntropySpec::Power(2.0), GroundCost::SquaredDistance).unwrap(),
        ];
        for cost in costs {
            assert!(cost.radially_convex());
            for &(u1, v1, u2, v2) in &[(1.0, 0.2, 0.1, 2.0), (0.5, 0.5, 2.0, 0.1), (1.0, 1.0, 3.0, 0.4)] {
                let f = |r1: f64, r2: f64| cost.eval(&s, &pt(0.0, r1), &pt(0.9, r2));
                let mid = f(0.5 * (u1 + u2), 0.5 * (v1 + v2));
                let avg = 0.5 * (f(u1, v1) + f(u2, v2));
                assert!(mid <= avg + 1e-10, "{mid} > {avg}");
            }
        }
    }

    #[test]
    fn envelope_of_convex_cost_is_itself() {
        let s = space1();
        let g = Cost::ghk();
        let env = radial_cc_envelope(&g, &s, &[0.0], &[0.8], 10_000).unwrap();
        for &(r1, r2) in &[(1.0, 1.0), (0.3, 1.7), (2.0, 0.1), (0.0, 1.0)] {
            let y1 = if r1 == 0.0 { ConePoint::vertex() } else { pt(0.0, r1) };
            let direct = g.eval(&s, &y1, &pt(0.8, r2));
            let e = env.eval(r1, r2);
            assert!((direct - e).abs() <= 1e-3 * (1.0 + direct.abs()), "{direct} vs {e}");
        }
        assert_eq!(env.eval(0.0, 0.0), 0.0);
    }

    #[test]
    fn envelope_truncates_the_cone_power() {
        // at ground distance pi the envelope of the full cone power equals
        // the half-pi truncation: value 2 at (1, 1)
        let s = space1();
        let c = Cost::cone_power(2.0, 2.0, Truncation::Pi).unwrap();
        let env = radial_cc_envelope(&c, &s, &[0.0], &[std::f64::consts::PI], 2048).unwrap();
        assert!((env.eval(1.0, 1.0) - 2.0).abs() <= 1e-3);
    }

    #[test]
    fn envelope_rejects_tiny_resolution() {
        let s = space1();
        assert!(radial_cc_envelope(&Cost::ghk(), &s, &[0.0], &[1.0], 1).is_err());
    }

    #[test]
    fn recession_slopes() {
        let s = space1();
        assert_eq!(Cost::ghk().recession(&s, &[0.0], &[1.0]), 1.0);
        let chi = Cost::perspective(EntropySpec::Chi(1.0), EntropySpec::Chi(1.0), GroundCost::Distance).unwrap();
        assert_eq!(chi.recession(&s, &[0.0], &[1.0]), 1.0);
        let ind = Cost::perspective(
            EntropySpec::Indicator { a: 0.5, b: Some(2.0) },
            EntropySpec::Indicator { a: 0.5, b: Some(2.0) },
            GroundCost::Zero,
        )
        .unwrap();
        assert!(ind.recession(&s, &[0.0], &[1.0]).is_infinite());
    }
}
