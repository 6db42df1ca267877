//! Moment bounds for the spatially homogeneous Boltzmann equation with hard
//! potentials: angular averaging constants, moment hierarchies, comparison
//! ODE envelopes and a particle (DSMC) solver to check them against.

pub mod bounds;
pub mod dsmc;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod moments;
pub mod povzner;
pub mod quadrature;
pub mod suites;
pub mod sum;

pub use error::{Error, Result};
pub use kernel::{make_kernel, make_maxwell_kernel, AngularKernel, AngularProfile};
pub use povzner::{gamma_table, GammaTable};
