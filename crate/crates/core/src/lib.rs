//! Numerics for the classical scattering structure of variable-coefficient
//! Schrödinger operators.
//!
//! The crate computes Hamilton flows and their reduced/asymptotic scattering
//! maps, quantizes symbols on periodic grids (Weyl), propagates quantum
//! states, and checks the correspondence between the two pictures: conjugation
//! of quantized symbols by `W(t) = e^{itH₀}e^{-itH}` against pullback by the
//! classical map, commutator (Beals-type) shell norms, dyadic kernel masses,
//! and Gabor wavefront transport.

pub mod bracket;
pub mod error;
pub mod fit;
pub mod flow;
pub mod model;
pub mod scattering;

pub use error::{Error, Result};
pub use model::{
    Assumption, BoundaryWindow, HamiltonianSpec, MetricFamily, PhasePoint, PotentialFamily, Which,
};
