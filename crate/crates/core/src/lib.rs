pub mod correlation;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod losses;
pub mod par;
pub mod pipeline;
pub mod regressor;
pub mod tensor;

pub use error::{Error, FormatError, Result};
