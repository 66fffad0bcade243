//! Numerical toolkit for geometric commutator / anticommutator algebra on
//! discretized 1-D Hilbert spaces.
//!
//! Operators are dense complex matrices, so purely algebraic identities hold
//! to rounding error while identities that rely on calculus (product rule,
//! canonical commutation) converge at the order of the derivative scheme.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod geobracket;
pub mod geomertainty;
pub mod grid;
pub mod op_algebra;
pub mod scenarios;

pub use error::{QgrError, Result};
pub use num_complex::Complex64;

/// Crate version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
