//! Dual-level stochastic multiple choice learning for multi-modal vehicle
//! trajectory prediction.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod training;

pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type PredictionSet64 = model::PredictionSet<f64>;
