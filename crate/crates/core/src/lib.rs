//! Normal-form computation engine for the nonlinear Schrödinger equation on
//! the circle, at finite truncation in modes and degree.
//!
//! The crate provides sparse Hamiltonian series on weighted sequence spaces,
//! torus-degree projections, small-divisor homological solvers, a quadratic
//! counter-term iteration (full and lower-dimensional variants), and
//! dynamical verification of the constructed invariant tori.

pub mod divisors;
pub mod dynamics;
pub mod error;
pub mod ham;
pub mod indices;
pub mod kam;
pub mod nls;
pub mod poisson;
pub mod sampling;
pub mod torus;
pub mod verify;

pub use error::{Error, Result};
pub use ham::{FrequencyVector, Hamiltonian, TermKey, WeightParams};
pub use indices::{ModeSet, MultiIndex};
pub use poisson::StateVector;
pub use torus::{CounterTerm, TorusData};
