pub mod advtrain;
pub mod attacks;
pub mod ensemble;
pub mod error;
pub mod hypernet;
pub mod nncore;
pub mod pipeline;
pub mod planner;
pub mod plot;

pub use error::{Error, Result};
