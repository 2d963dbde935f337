//! Flux-jump penalized discontinuous Galerkin solver for
//! `-∇·(K∇u) + u = f` on rectangles with homogeneous Dirichlet data, plus
//! the norms, liftings and stability constants that go with it.

pub mod analysis;
pub mod cli;
pub mod assembly;
pub mod coefficient;
pub mod error;
pub mod mesh;
pub mod norms;
pub mod output;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod study;

pub use error::{DgError, Result};
