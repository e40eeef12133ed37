//! Numerical study of tangentially analytic MHD boundary layers.
//!
//! The crate provides the pieces needed to evolve and certify small,
//! wall-bounded, 2π-periodic shear flows coupled to a tangential magnetic
//! field: a mixed Fourier/finite-difference grid, a shrinking analyticity
//! radius with its multiplier algebra, dyadic paraproducts, Gaussian-weighted
//! anisotropic norms, the good-unknown reformulation of the evolution, an
//! IMEX time stepper with exact tangential damping, weighted energy and
//! dissipation functionals, and a seeded probe battery that measures the
//! inequality constants the whole construction relies on.

pub mod certify;
pub mod clock;
pub mod energy;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod lp;
pub mod norms;
pub mod quad;
pub mod state;

pub use clock::{GevreyClock, Sign};
pub use error::{Error, Result};
pub use grid::{Grid, Parity, SpectralField, C64};
