pub mod ad;
pub mod arch;
pub mod error;
pub mod forcing;
pub mod gates;
pub mod metrics;
pub mod node;
pub mod runner;
pub mod scaling;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
