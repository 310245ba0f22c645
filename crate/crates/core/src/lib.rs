pub mod acceptance;
pub mod error;
pub mod flow;
pub mod hamsys;
pub mod linalg;
pub mod orbits;
pub mod poincare;
pub mod shades;
pub mod spectra;
pub mod splitting;

pub use error::{Error, Result};
