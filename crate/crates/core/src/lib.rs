//! Document-level relation extraction: corpus handling, a pluggable document
//! encoder, entity-pair representations with axial attention, adaptive
//! threshold losses, distillation from distant supervision and evaluation.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod io;
pub mod loss;
pub mod model;
pub mod nn;
pub mod pairrep;
pub mod pipeline;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
