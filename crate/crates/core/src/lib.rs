//! Exact-arithmetic laboratory for shrinking sets, weak* distances between
//! atomic measures, genericity perturbations and periodic shadowing of maps on
//! the interval and the square.

pub mod error;
pub mod geometry;
pub mod lab;
pub mod maps;
pub mod measures;
pub mod numeric;
pub mod perturb;
pub mod par;
pub mod sampling;
pub mod shadowing;
pub mod shrinking;

pub use error::{Error, Result};
pub use numeric::Rational;
