pub mod classifier;
pub mod dataset;
pub mod error;
pub mod features;
pub mod filterbank;
pub mod linalg;
pub mod pipeline;
mod timing;

pub use error::{Error, Phase, Result};
pub use linalg::Matrix;
