//! Differentiable-computation facility shared by the detector ensemble, the
//! attacker policy and the twin's residual model: flat named parameters, a
//! reverse-mode tape, dense/GRU/LSTM builders, an adaptive optimizer and
//! finite-difference checking.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use layers::{Activation, GruSpec, LstmSpec, MlpSpec};
pub use optim::{adam_step, AdamHyper, AdamState};
pub use params::{ParamBuilder, ParamVector, TensorShape};
pub use tape::{Gradients, NodeId, Tape};
