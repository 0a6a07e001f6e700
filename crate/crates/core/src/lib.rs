//! Mixed-effects and neural models for longitudinal telemonitoring data.

pub mod error;
pub mod gamm;
pub mod gnmm;
pub mod lmm;
pub mod neural;
pub mod nme;
pub mod numeric;
pub mod panel;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
