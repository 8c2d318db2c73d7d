//! Physics-informed neural networks for plane-strain elasticity and von
//! Mises plasticity: forward solution and material identification.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod elasticity;
pub mod field;
pub mod loss;
pub mod networks;
pub mod plasticity;
pub mod training;
