//! Foveated metamer synthesis, distortion calibration and psychophysics.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assets;
pub mod error;
pub mod exec;
pub mod features;
pub mod geometry;
pub mod iqa;
pub mod optimization;
pub mod psychometrics;
pub mod styletransfer;

pub use error::{Error, Result};
pub use exec::ExecPolicy;
