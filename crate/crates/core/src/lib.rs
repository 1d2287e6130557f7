//! Optimal transport on spacetimes for the Lorentzian cost
//! `c_t(x, y) = (tau(y) - tau(x) - d(x, y))^2 / t`.
//!
//! The crate covers the full discrete pipeline: exact Kantorovich solves with
//! dual potentials, dynamical couplings and displacement interpolation,
//! forward/backward Lax-Oleinik operators, the forward-backward regularized
//! pair `(Phi_s, Psi_t)`, and numerical certificates for duality,
//! calibration, semigroup laws and `C^{1,1}` regularity.

// Negated comparisons are the NaN-rejecting guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod instance;
pub mod io;
pub mod lagrangian;
pub mod pipeline;
pub mod semigroup;
pub mod spacetime;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
pub use lagrangian::{CostSuperDifferential, ExtendedCost, SuperlinearityConstant};
pub use spacetime::{
    CausalRelation, Covector, Geometry, GeometrySpec, MinimizerCurve, Minkowski, SpacetimePoint,
    TangentVector,
};
