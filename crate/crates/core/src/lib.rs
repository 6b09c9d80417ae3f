pub mod colorspace;
pub mod config;
pub mod context;
pub mod data;
pub mod error;
pub mod losses;
pub mod lut3d;
pub mod metrics;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
