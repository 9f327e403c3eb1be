//! Graph-based surrogate for hourly multi-station air-quality forecasting.
//!
//! The crate covers the whole desk-scale pipeline: a station graph with its
//! normalized Laplacian, a synthetic transport–reaction simulator that
//! stands in for observed data, windowed datasets, the forecasting network
//! with a hand-written backward pass, mass-balance penalties, training,
//! evaluation and a command-line front end.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
