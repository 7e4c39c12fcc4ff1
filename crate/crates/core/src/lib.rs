//! Armington trade elasticity estimation from import value shares and
//! exchange rates.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod panel;
pub mod pipelines;
pub mod simulator;

pub use error::{Error, Result};
