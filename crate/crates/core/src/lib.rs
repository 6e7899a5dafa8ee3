//! Core library: reactor digital twin, anomaly-detection ensemble, DRL
//! attacker, adversarial co-evolution loop, federation and explanations.

pub mod blue;
pub mod data;
pub mod error;
pub mod nn;
pub mod plant;

pub use error::{CoreError, Result};
