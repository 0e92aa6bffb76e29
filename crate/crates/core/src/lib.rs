//! Federated matrix factorization with a server-side meta network.
//!
//! The server holds the meta parameters and generates, per user, a private
//! item-embedding matrix and a small rating-prediction MLP. Devices compute
//! losses and gradients on their own ratings and upload only gradients.

pub mod checkpoint;
pub mod dataset;
pub mod device;
pub mod error;
pub mod fedruntime;
pub mod metanet;
pub mod model;
pub mod numkernel;
mod wire;

pub use error::{Error, Result};
