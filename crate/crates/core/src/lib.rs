//! Reversible Gromov-Monge transform sampling.
//!
//! Fits a forward map `F: X → Y` and a backward map `B: Y → X` between two point
//! clouds that may live in different spaces by minimizing an empirical Lagrangian:
//! a quadratic cost-alignment term plus discrepancy penalties (MMD or Sinkhorn)
//! that push `(x, F(x))` and `(B(y), y)` toward the same joint law. Also provides
//! the finite-dimensional convex representer program and Gromov-Wasserstein
//! lower bounds for comparison.

pub mod adam;
pub mod convex;
pub mod discrepancy;
pub mod error;
pub mod experiments;
pub mod gw;
pub mod kernel;
pub mod linalg;
pub mod maps;
pub mod measure;
pub mod objective;
pub mod rng;
pub mod sinkhorn;
pub mod trainer;

pub use error::{Error, Result};
pub use kernel::KernelSpec;
pub use linalg::Matrix;
pub use measure::{DatasetPair, EmpiricalMeasure};
pub use rng::Rng;
