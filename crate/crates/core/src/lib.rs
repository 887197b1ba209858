//! Copula-driven multimodal representation alignment.
//!
//! Each modality is encoded to an embedding whose marginal is a diagonal
//! Gaussian mixture; a parametric copula over the mixture CDF values couples
//! the modalities. Training minimizes a task loss plus a copula alignment term,
//! and absent modalities are imputed by sampling their learned marginals.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dual;
pub mod copula;
pub mod error;
pub mod fmt;
pub mod gmm;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod quad;
pub mod special;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
