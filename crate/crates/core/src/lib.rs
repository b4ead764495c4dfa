//! Learned aggregation cubes.
//!
//! A compact neural network is trained to answer range-filtered group-by
//! queries over a tabular dataset. The pipeline is:
//!
//! 1. [`schema`] describes attributes and their discretization.
//! 2. [`oracle`] bins the raw records and answers queries exactly.
//! 3. [`datagen`] samples dashboard states and expands them into
//!    query/answer pairs encoded by [`encoding`].
//! 4. [`nn`] holds the per-attribute autoencoder towers and the shared
//!    regressor; [`training`] fits them.
//! 5. [`service`] serves predictions and 2D latent projections over HTTP.

pub mod ablation;
mod bytes;
pub mod datagen;
pub mod encoding;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod schema;
pub mod service;
pub mod state;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
