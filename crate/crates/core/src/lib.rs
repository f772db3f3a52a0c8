//! Return maps near a whiskered circle of a symplectic map.
//!
//! The crate builds a concrete local map `T0` and transition map `T1`,
//! composes first-return maps `T_k = T0^k o T1`, rescales them near the
//! homoclinic anchors, and checks cone fields, the covering property and a
//! few tangency/scattering constructions numerically. Everything here is
//! floating point and sampled: reports are measurements, not proofs.

pub mod blender;
pub mod diophantine;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod hyperbolic;
pub mod model;
pub mod returns;
pub mod scattering;

pub use error::{Error, Result};
pub use geometry::{mod0, Anchor, BoxSpec, PhasePoint, RescaledPoint, Scheme};
pub use model::{MapKind, ModelSpec, PertKind, PerturbationSpec, Support};

/// Version string embedded in every exported artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
