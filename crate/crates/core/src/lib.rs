pub mod error;
pub mod meromorphic;
pub mod pointlin;
pub mod bundle;
pub mod grassmodel;
pub mod filtration;
pub mod fixtures;
pub mod twistor;
pub mod verify;

pub use error::{Error, Result};
