pub mod derivatives;
pub mod distributions;
pub mod emulator;
pub mod error;
pub mod harness;
pub mod model;
pub mod perturb;
pub mod schemes;
pub mod sensitivity;
pub mod testbed;

pub use error::{Error, Result};
