pub mod analytics;
pub mod dp;
pub mod error;
pub mod model;
pub mod oracle;
pub mod output;
pub mod policy;
pub mod scenario;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
