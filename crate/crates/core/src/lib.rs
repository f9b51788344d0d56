//! Continuous-state branching processes, with and without immigration.
//!
//! Mechanisms are Lévy triplets ([`mechanism`]); their cumulant flow and
//! Laplace transforms live in [`cumulant`], moment calculus and finiteness
//! criteria in [`moments`], path simulation in [`simulator`] and the
//! statistical experiment layer in [`lab`].

pub mod cumulant;
pub mod lab;
pub mod mechanism;
pub mod moments;
pub mod ode;
pub mod quadrature;
pub mod simulator;

pub use mechanism::{BranchingMechanism, Finiteness, ImmigrationMechanism, LevyMeasure};
pub use moments::MomentFunction;
