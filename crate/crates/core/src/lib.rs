//! Skeleton action recognition with adaptive graph convolutions and
//! cross-modal transfer by block freezing.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod network;
pub mod nn;
pub mod rng;
pub mod spatial;
pub mod temporal;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
