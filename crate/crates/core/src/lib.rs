//! Intent-steerable query-focused video summarization.
//!
//! The crate contains the numerical kernel ([`nn`]), the two-granularity
//! temporal feature extractor ([`pathways`]), ego-graph convolution
//! ([`graph`]), the intent and summary modules ([`model`]), the semantic
//! evaluation protocol ([`eval`]), visual query generation ([`querygen`]),
//! a small trainer ([`train`]) and on-disk formats ([`store`]).

pub mod api;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod nn;
pub mod pathways;
pub mod querygen;
pub mod scalar;
pub mod store;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};
pub use tensor::Tensor;
