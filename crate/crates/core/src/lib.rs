pub mod archive;
pub mod atlas;
pub mod autoencoder;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod explain;
pub mod gnn;
pub mod numerics;
pub mod pipeline;
pub mod synth;
pub mod volumes;

pub use error::{Error, Result};
