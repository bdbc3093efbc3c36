//! Unbalanced optimal transport between discrete non-negative measures.
//!
//! Measures of different total masses are compared by lifting them to the
//! geometric cone over the ground space and minimizing a radially
//! 1-homogeneous cost over homogeneous couplings, or equivalently over
//! semi-coupling matrix pairs. The crate provides the cone data model, a
//! catalogue of costs, a certified primal/dual solver, optimality
//! diagnostics (cyclical monotonicity, walk graphs, potentials), transport-
//! growth maps, and metric utilities.

pub mod cone;
pub mod cost;
pub mod error;
pub mod space;
pub(crate) mod solver;
pub mod primal;
pub mod dual;

pub use cone::{
    barycentric_projection, cone_distance, dilate_normalize, homogeneous_marginal, radial_collapse,
    radial_rescale, ConePoint, CouplingAtom, DiscreteMeasure, HomogeneousCoupling, Side, Truncation,
};
pub use cost::{radial_cc_envelope, Cost, CostKind, DomainCone, EntropySpec, GroundCost, MassBlock, RadialEnvelope};
pub use error::{Result, UotError};
pub use space::{GroundMetric, Position, Space};
