//! Differentiable ensemble members: an LSTM one-step-ahead predictor scored
//! by prediction error, and a feedforward autoencoder scored by
//! reconstruction error. Both operate on standardized windows and expose
//! graph builders so callers can compose losses or differentiate with
//! respect to the window itself.

use crate::error::{CoreError, Result};
use crate::nn::{Activation, LstmSpec, MlpSpec, NodeId, ParamBuilder, ParamVector, Tape};
use crate::plant::SENSOR_CHANNELS;

/// LSTM sequence predictor; raw score = mean squared one-step error.
#[derive(Debug, Clone)]
pub struct LstmMember {
    pub cell: LstmSpec,
    pub head: MlpSpec,
}

impl LstmMember {
    pub fn new(hidden: usize) -> Self {
        LstmMember {
            cell: LstmSpec::new("blue.lstm", SENSOR_CHANNELS, hidden),
            head: MlpSpec::new(
                "blue.lstm_head",
                &[hidden, SENSOR_CHANNELS],
                Activation::Tanh,
                Activation::Linear,
            ),
        }
    }

    pub fn build_params<R: rand::Rng>(&self, rng: &mut R) -> ParamVector {
        let mut b = ParamBuilder::new();
        self.cell.register(&mut b);
        self.head.register(&mut b);
        let mut p = b.finish();
        self.cell.init(&mut p, rng);
        self.head.init(&mut p, rng);
        p
    }

    /// Raw-score node over per-row nodes (each of `SENSOR_CHANNELS`).
    /// Needs at least two rows; errors otherwise.
    pub fn raw_node(&self, tape: &mut Tape, params: &ParamVector, rows: &[NodeId]) -> Result<NodeId> {
        if rows.len() < 2 {
            return Err(CoreError::DimMismatch(
                "LSTM member needs a window of at least 2 rows".into(),
            ));
        }
        let hs = self.cell.forward_sequence(tape, params, &rows[..rows.len() - 1])?;
        let mut total: Option<NodeId> = None;
        for (t, &h) in hs.iter().enumerate() {
            let pred = self.head.forward(tape, params, h)?;
            let diff = tape.sub(pred, rows[t + 1])?;
            let ss = tape.sum_sq(diff);
            total = Some(match total {
                None => ss,
                Some(acc) => tape.add(acc, ss)?,
            });
        }
        let count = ((rows.len() - 1) * SENSOR_CHANNELS) as f64;
        Ok(tape.scale(total.expect("at least one step"), 1.0 / count))
    }
}

/// Autoencoder over the flattened window; raw score = reconstruction error.
#[derive(Debug, Clone)]
pub struct AeMember {
    pub net: MlpSpec,
    pub input_len: usize,
}

impl AeMember {
    pub fn new(window_len: usize, bottleneck: usize, hidden: usize) -> Self {
        let input_len = window_len * SENSOR_CHANNELS;
        AeMember {
            net: MlpSpec::new(
                "blue.ae",
                &[input_len, hidden, bottleneck, hidden, input_len],
                Activation::Tanh,
                Activation::Linear,
            ),
            input_len,
        }
    }

    pub fn build_params<R: rand::Rng>(&self, rng: &mut R) -> ParamVector {
        let mut b = ParamBuilder::new();
        self.net.register(&mut b);
        let mut p = b.finish();
        self.net.init(&mut p, rng);
        p
    }

    pub fn raw_node(&self, tape: &mut Tape, params: &ParamVector, flat: NodeId) -> Result<NodeId> {
        let recon = self.net.forward(tape, params, flat)?;
        tape.mse(recon, flat)
    }
}
