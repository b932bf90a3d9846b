pub mod config;
pub mod datagen;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod model;
pub mod objective;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = diffcore::Tensor<f64>;
pub type Tensor32 = diffcore::Tensor<f32>;
pub type Graph64 = diffcore::Graph<f64>;
pub type Graph32 = diffcore::Graph<f32>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
