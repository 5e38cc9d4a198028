//! Hyperspherical VAE bottleneck: Power Spherical distributions on products
//! of unit spheres, a small deterministic tensor autodiff engine, the
//! encoder/decoder pair built on it, loss and diagnostic suites, and a
//! synthetic multi-view dataset generator for desk-scale experiments.

// Negated float comparisons like !(x > 0.0) are deliberate guards:
// they reject NaN together with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod nn;
pub mod opt;
pub mod oracle;
pub mod power_spherical;
pub mod product;
pub mod rng;
pub mod special;
pub mod sphere;
pub mod synthetic;
pub mod train;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
