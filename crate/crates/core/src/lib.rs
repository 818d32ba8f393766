//! Numerical solver for major-minor mean field games with common noise on
//! the one-dimensional torus.

pub mod coupled;
pub mod error;
pub mod major;
pub mod model;
pub mod minor;
pub mod torus;
pub mod tree;

pub use error::{Error, Result};
