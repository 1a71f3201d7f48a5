//! Random Hopf normal form with shear: backward Euler discretisation,
//! Lyapunov exponent estimators, the discrete random dynamical system and
//! synchronisation diagnostics.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod integrators;
pub mod lyapunov;
pub mod model;
pub mod noise;
pub mod rds;
pub mod selftest;

pub use error::{Error, Result};
pub use model::{ModelParams, State, Vec2};
