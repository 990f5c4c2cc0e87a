pub mod error;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod preconditioner;
pub mod tasks;
pub mod theory;

pub use error::{Error, Result};
