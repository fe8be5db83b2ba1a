//! Depth-aware early accident anticipation over per-frame scene graphs and a
//! causal frame graph.
//!
//! The crate is organised bottom-up: [`nn`] holds the differentiable
//! primitives, [`scene`] and [`archive`] the data model, [`depth`],
//! [`interaction`], [`dynamics`] and [`temporal`] the feature branches,
//! [`model`] wires them together, and [`training`] and [`metrics`] cover the
//! objective and the evaluation protocol. [`checkpoint`], [`config`] and
//! [`plot`] are the file formats used by the command-line tool.

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod depth;
pub mod dynamics;
pub mod error;
pub mod interaction;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod scene;
pub mod synth;
pub mod temporal;
pub mod training;

pub use error::{Error, Result};
