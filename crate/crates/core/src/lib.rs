//! Deep SVDD and Deep SAD anomaly detection on limit order book data.
//!
//! The pipeline: load or generate order book snapshots ([`data`]), z-score
//! them per fold, pretrain a ReLU network as an autoencoder ([`nnet`]), fix
//! the hypersphere center at the mean network output, train with the
//! one-class or semi-supervised objective ([`objectives`]), then score rows
//! by their distance to the center and compare models with the ratio and
//! rank tests ([`eval`]). [`harness`] runs the contiguous k-fold experiment.

pub mod data;
pub mod eval;
pub mod harness;
pub mod error;
pub mod nnet;
pub mod objectives;

pub use error::{Error, Result};
