pub mod autodiff;
pub mod energy;
pub mod error;
pub mod field;
pub mod metric;
pub mod network;
pub mod sampler;
pub mod solver;
pub mod train;

pub use error::{Error, Result};
