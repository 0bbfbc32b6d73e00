//! Minimal dense/LSTM toolkit with exact backpropagation through time.

pub mod adam;
pub mod gradcheck;
pub mod linalg;
pub mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use network::{elu, init_network, GradientSet, NetShape, QNetwork, RecurrentState, StepCache, Tensors};
