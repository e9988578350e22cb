pub mod bounds;
pub mod error;
pub mod linalg;
pub mod liouvillian;
pub mod monitoring;
pub mod qfi;
pub mod scaling;
pub mod spectrum;
pub mod spin;

pub use error::{Error, Result};
