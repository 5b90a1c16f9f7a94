pub mod error;
pub mod numerics;
pub mod topic_model;
pub mod encoder;
pub mod coherence;
pub mod capsule;
pub mod checks;
pub mod model;
pub mod pipeline;
mod nn;

pub use error::{Error, Result};
