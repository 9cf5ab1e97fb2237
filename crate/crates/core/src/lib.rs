//! Numerical laboratory for weakly coupled Coulomb particle systems on the
//! unit torus: periodic Coulomb kernels (Ewald), spectral fields, a
//! pseudo-spectral 2D Euler solver, symplectic N-body integration, and the
//! modulated-energy diagnostics connecting them.
//!
//! All numerics are generic over the scalar type through [`scalar::Real`]
//! (`f32` or `f64`); the aliases below fix the default `f64` lane.

// Real's special-function methods (erfc etc.) may land in std some day.
#![allow(unstable_name_collisions)]

pub mod calib;
pub mod coulomb;
pub mod energy;
pub mod error;
pub mod euler;
pub mod nbody;
pub mod oracle;
pub mod scalar;
pub mod spectral;
pub mod torus;

pub use error::{Error, Result};
pub use scalar::Real;
pub use torus::Dim;

/// Default scalar for production runs.
pub type Scalar = f64;

pub type TorusPoint = torus::TorusPoint<Scalar>;
pub type Displacement = torus::Displacement<Scalar>;
pub type EwaldSum = coulomb::EwaldSum<Scalar>;
pub type SmearingScale = coulomb::SmearingScale<Scalar>;
pub type ScalarField = spectral::ScalarField<Scalar>;
pub type VectorField = spectral::VectorField<Scalar>;
pub type EulerState = euler::EulerState<Scalar>;
pub type EulerDiagnostics = euler::EulerDiagnostics<Scalar>;
pub type ParticleEnsemble = nbody::ParticleEnsemble<Scalar>;
pub type EnergyBreakdown = energy::EnergyBreakdown<Scalar>;
