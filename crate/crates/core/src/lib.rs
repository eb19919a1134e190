//! Multivariate time series forecasting with diversity-aware neighbor
//! selection and dynamic multi-scale fusion.
//!
//! The crate carries its own small reverse-mode autodiff engine
//! ([`autodiff`]) in double precision; every layer is written against it.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod tip;
pub mod train;
pub mod trip;

pub use autodiff::{Gradients, OpKind, Tape, Var};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use optim::{adam_step, Adam};
pub use params::ParamStore;
pub use tensor::Tensor;
