pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};

pub type Graph64 = numerics::Graph<f64>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type Trainer64 = training::Trainer<f64>;
pub type Trainer32 = training::Trainer<f32>;
