//! Compressed convolution networks over learned node orderings.

pub mod autodiff;
pub mod convolution;
pub mod error;
pub mod graph;
pub mod harness;
pub mod model;
pub mod permutation;

pub use error::{CocnError, Result};
