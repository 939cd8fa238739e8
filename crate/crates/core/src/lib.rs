pub mod chaos;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod mean_field;
pub mod numeric;
pub mod pde;
pub mod regression;
pub mod transport;

pub use error::{Error, Result};
