//! Discrete p-adic Laplacian on the finite quotients `X_{m,d}` of a Tate curve:
//! spectrum, Green's function, heat kernel and the mean field equation.

pub mod characters;
pub mod error;
pub mod green;
pub mod linalg;
pub mod mfe;
pub mod padic;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use mfe::{InitialGuess, MfeProblem, MfeSolution, NewtonOptions};
pub use padic::{QuotientPoint, QuotientSpace};
pub use spectral::{build_laplacian, build_level_matrices, LaplacianMatrix, LevelMatrices};
