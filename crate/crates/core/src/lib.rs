//! Adversarial training with gradient approximation (GAAT) alongside
//! regular PGD adversarial training, on a small self-contained
//! reverse-mode autodiff engine.

pub mod attacks;
pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod models;
pub mod tensor;
pub mod training;

pub use attacks::{Adversary, AttackConfig, HessianMode, InitMode};
pub use autodiff::{GradBundle, Objective, Tape, Var};
pub use data::Dataset;
pub use error::{Error, Result};
pub use models::{ModelParams, ModelSpec};
pub use tensor::{Dual, Scalar, Tensor};
pub use training::{Method, TrainConfig};
