//! Numerical loop-group engine for constant mean curvature surfaces.
//!
//! Loops are 2x2 complex matrix functions on circles in the spectral plane. The crate
//! provides Iwasawa and Birkhoff factorizations, the DPW construction, dressing by
//! simple factors, monodromy analysis and a regular-singular frame solver.

pub mod error;
pub mod mat2;
pub mod loopcore;
pub mod factorization;
pub mod dpw;
pub mod monodromy;
pub mod dressing;
pub mod surfaces;
pub mod cli;

pub use error::{Error, Result};
pub use mat2::Mat2;
pub use num_complex::Complex64 as C64;
