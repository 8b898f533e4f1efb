//! Spectral toolbox for the long-time dynamics of the 3D vorticity equation
//! in self-similar variables: periodic grids and transforms, the explicit
//! Gaussian eigenbasis of the rescaled linear operator, Biot-Savart
//! reconstruction, exact linear semigroups, nonlinear evolution in both
//! physical and rescaled variables, and the diagnostic functionals (moments,
//! asymptotic coefficients, decay fits, manifold membership tests).

pub mod basis;
pub mod biot_savart;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod fft;
pub mod field;
pub mod fitting;
pub mod grid;
pub mod io;
pub mod manifold;
pub mod operators;
pub mod rand_fields;
pub mod semigroup;
pub mod threading;

pub use error::{CoreError, Result};
pub use field::{ScalarFieldR, VectorFieldK, VectorFieldR, WeightExponent};
pub use grid::Grid3;
