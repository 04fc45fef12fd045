//! Bayesian spatiotemporal count models with autoregressive gamma frailties.

pub mod config;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod gibbs;
pub mod graph;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod predict;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use rng::RandomStream;

#[cfg(test)]
pub(crate) mod testutil;
