//! Numerics for the nonlinear Schrodinger equation with a slowly varying external
//! potential: ground states, split-step evolution, modulation of solitary waves,
//! the effective point-particle dynamics, and linearized spectra.

pub mod error;
pub mod evolve;
pub mod field;
pub mod grid;
pub mod groundstate;
pub mod mech;
pub mod model;
pub mod modulation;
pub mod spectral;

pub use error::{ConfigIssue, Error, Result};
pub use field::FieldState;
pub use grid::Grid;
pub use rustfft::num_complex::Complex64;
