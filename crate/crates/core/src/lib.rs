//! Hyperspectral unmixing by turbo bilinear approximate message passing.

pub mod baselines;
pub mod bigamp;
pub mod bundle;
pub mod chain;
pub mod data;
pub mod error;
pub mod metrics;
pub mod mos;
pub mod mrf;
pub mod priors;
pub mod special;
pub mod synth;
pub mod turbo;

pub use error::{HutampError, Result};
pub use nalgebra;
