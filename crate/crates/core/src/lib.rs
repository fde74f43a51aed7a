pub mod cloud;
pub mod error;
pub mod linalg;
pub mod par;

pub use error::{Error, Result};
pub mod autodiff;
pub mod encoder;
pub mod decoder;
pub mod losses;
pub mod model;
pub mod synth;
pub mod svm;
pub mod classify;
pub mod metrics;
pub mod config;
pub mod train;
pub mod oracle;
pub mod check;
pub mod ablation;
