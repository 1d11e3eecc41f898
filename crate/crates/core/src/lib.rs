//! Doubly homomorphic secure aggregation.
//!
//! Clients mask quantized model updates with an LWR-based seed-homomorphic
//! PRG; the sum of their masking seeds is agreed ahead of time under compact
//! multi-key BFV, so one broadcast per epoch suffices to unmask the aggregate.

pub mod bfv;
pub mod codec;
pub mod error;
pub mod harness;
pub mod mkbfv;
pub mod protocol;
pub mod ring;
pub mod shprg;
mod wire;

pub use error::{Error, Result};
