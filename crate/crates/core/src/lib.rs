//! Sparse spectral line estimation by covariance fitting (SPICE) and the
//! complex Lasso-type problems it is equivalent to.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: dense real/complex kernels and Hermitian factorization.
//! - [`model`]: sinusoidal dictionary, simulation, weights, scaled atoms.
//! - [`spice`]: the SPICE fixed-point iteration and the costs `f` and `g`.
//! - [`sparse_solvers`]: LAD-Lasso, square-root Lasso and real group Lasso.
//! - [`equivalence`]: closed-form Elfving minimizer, power allocation and
//!   the changes of variables linking the Lasso solutions back to powers.
//!
//! Hot loops are dispatched through [`parallel`]; build without the
//! default `parallel` feature for a purely sequential library.

pub mod equivalence;
pub mod error;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod sparse_solvers;
pub mod spice;

pub use error::{Result, SpiceError};
pub use num_complex::Complex64;
pub use parallel::Execution;
