pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scattering;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
