pub mod backward;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod forward;
pub mod gait;
pub mod nn;
pub mod oracle;
pub mod pipeline;

mod binio;

pub use error::{Error, Result};
