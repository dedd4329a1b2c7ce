pub mod acceptance;
pub mod error;
pub mod ldp;
pub mod process;
pub mod rate;
pub mod report;
pub mod sim;
pub mod testkit;
pub mod tilt;

pub use error::{Error, Result};
