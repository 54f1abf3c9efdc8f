pub mod approximator;
pub mod backbone;
pub mod envs;
pub mod error;
pub mod harness;
pub mod optimization;
pub mod oracle;
pub mod projection;
pub mod recovery;
pub mod usl;
pub mod replay;

pub use error::{Error, Result};
