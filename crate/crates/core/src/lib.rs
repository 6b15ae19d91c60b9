pub mod ablate;
pub mod augment;
pub mod backbone;
pub mod boostnet;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod image;
pub mod infer;
pub mod metrics;
pub mod model_config;
pub mod pipeline;
pub mod polar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
