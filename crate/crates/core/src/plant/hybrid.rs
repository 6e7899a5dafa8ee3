//! Hybrid model: first-principles balances plus a trained GRU correction.
//! The correction reads a short history of channel vectors and emits a
//! bounded two-component state-derivative residual.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{adam_step, AdamHyper, AdamState, Activation, GruSpec, MlpSpec, ParamBuilder, ParamVector, Tape};
use crate::plant::{physics_derivatives, ActuatorVector, PlantParams, ProcessState, SensorVec, SENSOR_CHANNELS};

/// Fixed affine normalization applied to channel vectors before the GRU.
/// Constants are part of the model, not fitted, so a zero parameter vector
/// leaves the hybrid identical to the pure physics model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelNormalizer {
    pub center: SensorVec,
    pub scale: SensorVec,
}

impl ChannelNormalizer {
    pub fn benchmark() -> Self {
        ChannelNormalizer {
            center: [0.5, 350.0, 300.0, 100.0, 1.0],
            scale: [0.5, 25.0, 10.0, 10.0, 0.1],
        }
    }

    pub fn normalize(&self, row: &SensorVec) -> SensorVec {
        let mut out = [0.0; SENSOR_CHANNELS];
        for i in 0..SENSOR_CHANNELS {
            out[i] = (row[i] - self.center[i]) / self.scale[i];
        }
        out
    }
}

/// Physics parameters plus the GRU correction parameters.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub params: PlantParams,
    /// Input history length in sampling steps.
    pub window: usize,
    pub hidden: usize,
    pub gru_theta: ParamVector,
    pub normalizer: ChannelNormalizer,
    /// Residual bound per state channel (mol/(L*min), K/min); the network
    /// output is tanh-squashed and scaled by these, keeping the correction
    /// subordinate to the physics term.
    pub residual_clamp: [f64; 2],
}

impl HybridModel {
    pub fn new(params: PlantParams, window: usize, hidden: usize) -> Self {
        assert!(window >= 1, "history window must be at least 1");
        let (gru, head) = specs(hidden);
        let mut b = ParamBuilder::new();
        gru.register(&mut b);
        head.register(&mut b);
        let gru_theta = b.finish();
        HybridModel {
            params,
            window,
            hidden,
            gru_theta,
            normalizer: ChannelNormalizer::benchmark(),
            residual_clamp: [0.1, 1.0],
        }
    }

    pub fn init_params<R: rand::Rng>(&mut self, rng: &mut R) {
        let (gru, head) = specs(self.hidden);
        gru.init(&mut self.gru_theta, rng);
        head.init(&mut self.gru_theta, rng);
    }

    /// Raw network output in (-1, 1) per state channel for a full history.
    fn residual_raw(&self, history: &[SensorVec]) -> Result<[f64; 2]> {
        let (gru, head) = specs(self.hidden);
        let mut tape = Tape::new(&self.gru_theta);
        let xs: Vec<_> = history
            .iter()
            .map(|row| {
                let n = self.normalizer.normalize(row);
                tape.constant(&n)
            })
            .collect();
        let hs = gru.forward_sequence(&mut tape, &self.gru_theta, &xs)?;
        let last = *hs.last().expect("window >= 1");
        let out = head.forward(&mut tape, &self.gru_theta, last)?;
        let squashed = tape.tanh(out);
        let v = tape.value(squashed);
        Ok([v[0], v[1]])
    }

    /// Bounded residual correction in physical units.
    pub fn residual(&self, history: &[SensorVec]) -> Result<[f64; 2]> {
        let raw = self.residual_raw(history)?;
        Ok([raw[0] * self.residual_clamp[0], raw[1] * self.residual_clamp[1]])
    }

    /// Physics derivatives at the newest history row plus the GRU residual.
    /// The newest row supplies both the state estimate (channels 0..2) and
    /// the actuator readbacks (channels 2..5).
    pub fn hybrid_derivatives(&self, history: &[SensorVec]) -> Result<(f64, f64)> {
        if history.len() != self.window {
            return Err(CoreError::WindowUnderfull {
                have: history.len(),
                need: self.window,
            });
        }
        let last = history[history.len() - 1];
        let state = ProcessState {
            c_a: last[0],
            t: last[1],
        };
        let act = ActuatorVector {
            tc_cmd: last[2],
            f_cmd: last[3],
            caf_cmd: last[4],
        };
        let (d_ca, d_t) = physics_derivatives(&state, &act, &self.params)?;
        let g = self.residual(history)?;
        Ok((d_ca + g[0], d_t + g[1]))
    }
}

fn specs(hidden: usize) -> (GruSpec, MlpSpec) {
    (
        GruSpec::new("twin.gru", SENSOR_CHANNELS, hidden),
        MlpSpec::new("twin.head", &[hidden, 2], Activation::Tanh, Activation::Linear),
    )
}

/// One recorded episode of channel vectors sampled every `h` minutes.
#[derive(Debug, Clone)]
pub struct ResidualEpisode {
    pub rows: Vec<SensorVec>,
}

struct TrainingPair {
    history: Vec<SensorVec>,
    /// Residual target scaled by the clamp bounds (dimensionless).
    target: [f64; 2],
}

fn training_pairs(model: &HybridModel, episodes: &[ResidualEpisode], h: f64) -> Result<Vec<TrainingPair>> {
    let w = model.window;
    let mut pairs = Vec::new();
    for ep in episodes {
        if ep.rows.len() < w + 1 {
            continue;
        }
        for t in (w - 1)..(ep.rows.len() - 1) {
            let history = ep.rows[t + 1 - w..=t].to_vec();
            let cur = ep.rows[t];
            let next = ep.rows[t + 1];
            let state = ProcessState { c_a: cur[0], t: cur[1] };
            let act = ActuatorVector {
                tc_cmd: cur[2],
                f_cmd: cur[3],
                caf_cmd: cur[4],
            };
            let (f_ca, f_t) = physics_derivatives(&state, &act, &model.params)?;
            let resid = [
                ((next[0] - cur[0]) / h - f_ca) / model.residual_clamp[0],
                ((next[1] - cur[1]) / h - f_t) / model.residual_clamp[1],
            ];
            pairs.push(TrainingPair { history, target: resid });
        }
    }
    Ok(pairs)
}

/// Options for residual fitting.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub epochs: usize,
    pub lr: f64,
    /// Cap on training pairs (sub-sampled deterministically by stride).
    pub max_pairs: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            epochs: 120,
            lr: 0.02,
            max_pairs: 1500,
        }
    }
}

/// Fit the GRU residual on recorded episodes. The physics parameters are
/// taken as configured; only the correction is trained. The recorded loss
/// sequence is non-increasing up to 1e-9: a step that would raise the loss
/// is rolled back and retried at a halved learning rate.
pub fn fit_residual(
    model: &HybridModel,
    episodes: &[ResidualEpisode],
    opts: &FitOptions,
) -> Result<(HybridModel, Vec<f64>)> {
    if episodes.is_empty() {
        return Err(CoreError::Empty("residual fitting needs at least one episode".into()));
    }
    let mut pairs = training_pairs(model, episodes, 0.05)?;
    if pairs.is_empty() {
        return Err(CoreError::Empty("episodes too short for the history window".into()));
    }
    if pairs.len() > opts.max_pairs {
        let stride = pairs.len().div_ceil(opts.max_pairs);
        pairs = pairs.into_iter().step_by(stride).collect();
    }

    let (gru, head) = specs(model.hidden);
    let mut fitted = model.clone();
    let mut opt = AdamState::new(fitted.gru_theta.len());
    let mut hyper = AdamHyper::with_lr(opts.lr);
    let mut losses: Vec<f64> = Vec::with_capacity(opts.epochs);
    let mut snapshot = fitted.gru_theta.clone();
    let mut snapshot_opt = opt.clone();
    let mut backoffs = 0usize;

    let mut epoch = 0usize;
    while epoch < opts.epochs {
        let (loss, grads) = batch_loss_and_grads(&fitted, &gru, &head, &pairs)?;
        if !loss.is_finite() {
            return Err(CoreError::Diverged {
                epoch,
                detail: "residual training loss became non-finite".into(),
            });
        }
        if let Some(&prev) = losses.last() {
            if loss > prev + 1e-9 {
                // Roll the step back and retry smaller; accepted steps below
                // let the rate recover, so a rejection is not a dead end.
                if backoffs >= 400 {
                    break;
                }
                backoffs += 1;
                fitted.gru_theta = snapshot.clone();
                opt = snapshot_opt.clone();
                hyper.lr *= 0.5;
                continue;
            }
        }
        losses.push(loss);
        if loss <= 1e-14 {
            break;
        }
        snapshot = fitted.gru_theta.clone();
        snapshot_opt = opt.clone();
        adam_step(&mut fitted.gru_theta, &grads, &mut opt, &hyper)?;
        hyper.lr = (hyper.lr * 1.05).min(opts.lr);
        epoch += 1;
    }
    Ok((fitted, losses))
}

fn batch_loss_and_grads(
    model: &HybridModel,
    gru: &GruSpec,
    head: &MlpSpec,
    pairs: &[TrainingPair],
) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grads = vec![0.0; model.gru_theta.len()];
    let scale = 1.0 / pairs.len() as f64;
    for pair in pairs {
        let mut tape = Tape::new(&model.gru_theta);
        let xs: Vec<_> = pair
            .history
            .iter()
            .map(|row| {
                let n = model.normalizer.normalize(row);
                tape.constant(&n)
            })
            .collect();
        let hs = gru.forward_sequence(&mut tape, &model.gru_theta, &xs)?;
        let last = *hs.last().unwrap();
        let out = head.forward(&mut tape, &model.gru_theta, last)?;
        let squashed = tape.tanh(out);
        let target = tape.constant(&pair.target);
        let loss = tape.mse(squashed, target)?;
        total += tape.scalar(loss) * scale;
        let g = tape.backward(loss)?;
        for (acc, gi) in grads.iter_mut().zip(&g.params) {
            *acc += gi * scale;
        }
    }
    Ok((total, grads))
}

/// Mean squared one-step prediction error of the hybrid (or pure-physics)
/// model over held-out episodes, in normalized residual units.
pub fn one_step_mse(model: &HybridModel, episodes: &[ResidualEpisode], h: f64, use_residual: bool) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ep in episodes {
        if ep.rows.len() < model.window + 1 {
            continue;
        }
        for t in (model.window - 1)..(ep.rows.len() - 1) {
            let history = &ep.rows[t + 1 - model.window..=t];
            let cur = ep.rows[t];
            let next = ep.rows[t + 1];
            let state = ProcessState { c_a: cur[0], t: cur[1] };
            let act = ActuatorVector {
                tc_cmd: cur[2],
                f_cmd: cur[3],
                caf_cmd: cur[4],
            };
            let (mut d_ca, mut d_t) = physics_derivatives(&state, &act, &model.params)?;
            if use_residual {
                let g = model.residual(history)?;
                d_ca += g[0];
                d_t += g[1];
            }
            let e0 = ((next[0] - cur[0]) / h - d_ca) / model.residual_clamp[0];
            let e1 = ((next[1] - cur[1]) / h - d_t) / model.residual_clamp[1];
            total += e0 * e0 + e1 * e1;
            count += 2;
        }
    }
    if count == 0 {
        return Err(CoreError::Empty("no evaluation pairs".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::rk4_general;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn drifted_episode(drift_t: f64, steps: usize, seed: u64) -> ResidualEpisode {
        drifted_episode_with(drift_t, steps, seed, false)
    }

    /// True dynamics = physics + hidden T drift; clean readbacks. Episodes
    /// start near the stable operating point with per-episode actuator
    /// offsets inside the benign band. With `euler` the rows advance by
    /// explicit Euler and drop a settling warmup, which makes the
    /// finite-difference residual target equal the injected drift exactly
    /// on stationary data.
    fn drifted_episode_with(drift_t: f64, steps: usize, seed: u64, euler: bool) -> ResidualEpisode {
        let p = PlantParams::benchmark();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a = ActuatorVector {
            tc_cmd: p.t_c + 0.8 * (rng.random::<f64>() - 0.5),
            f_cmd: p.flow + 0.8 * (rng.random::<f64>() - 0.5),
            caf_cmd: p.c_af + 0.008 * (rng.random::<f64>() - 0.5),
        };
        let op = crate::plant::operating_point(&p, &a, 0.05).unwrap();
        let mut state = [
            op.c_a + 0.01 * (rng.random::<f64>() - 0.5),
            op.t + 1.0 * (rng.random::<f64>() - 0.5),
        ];
        let h = 0.05;
        let warmup = if euler { 400 } else { 0 };
        let mut rows = Vec::with_capacity(steps);
        for i in 0..steps + warmup {
            if i >= warmup {
                rows.push([state[0], state[1], a.tc_cmd, a.f_cmd, a.caf_cmd]);
            }
            let st = ProcessState { c_a: state[0], t: state[1] };
            if euler {
                let (d1, d2) = physics_derivatives(&st, &a, &p).unwrap();
                state = [state[0] + h * d1, state[1] + h * (d2 + drift_t)];
            } else {
                state = rk4_general(state, h, |y| {
                    let st = ProcessState { c_a: y[0], t: y[1] };
                    let (d1, d2) = physics_derivatives(&st, &a, &p)?;
                    Ok([d1, d2 + drift_t])
                })
                .unwrap();
            }
        }
        ResidualEpisode { rows }
    }

    #[test]
    fn zero_theta_matches_physics_exactly() {
        let model = HybridModel::new(PlantParams::benchmark(), 4, 6);
        let row = [0.5, 350.0, 300.0, 100.0, 1.0];
        let history = vec![row; 4];
        let (h_ca, h_t) = model.hybrid_derivatives(&history).unwrap();
        let state = ProcessState { c_a: 0.5, t: 350.0 };
        let act = ActuatorVector {
            tc_cmd: 300.0,
            f_cmd: 100.0,
            caf_cmd: 1.0,
        };
        let (p_ca, p_t) = physics_derivatives(&state, &act, &model.params).unwrap();
        assert_eq!(h_ca.to_bits(), p_ca.to_bits());
        assert_eq!(h_t.to_bits(), p_t.to_bits());
    }

    #[test]
    fn residual_respects_clamp() {
        let mut model = HybridModel::new(PlantParams::benchmark(), 4, 6);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        model.init_params(&mut rng);
        // Blow up a weight tensor to drive the head hard; output must stay bounded.
        for v in model.gru_theta.tensor_mut("twin.head.w0").unwrap() {
            *v = 50.0;
        }
        let history = vec![[0.9, 390.0, 310.0, 110.0, 1.1]; 4];
        let g = model.residual(&history).unwrap();
        assert!(g[0].abs() <= model.residual_clamp[0]);
        assert!(g[1].abs() <= model.residual_clamp[1]);
    }

    #[test]
    fn window_underfull_is_an_error() {
        let model = HybridModel::new(PlantParams::benchmark(), 6, 6);
        let history = vec![[0.5, 350.0, 300.0, 100.0, 1.0]; 3];
        assert!(matches!(
            model.hybrid_derivatives(&history),
            Err(CoreError::WindowUnderfull { .. })
        ));
    }

    #[test]
    fn empty_episode_list_is_an_error() {
        let model = HybridModel::new(PlantParams::benchmark(), 4, 6);
        assert!(fit_residual(&model, &[], &FitOptions::default()).is_err());
    }

    #[test]
    fn zero_residual_data_trains_to_near_zero_output() {
        let mut model = HybridModel::new(PlantParams::benchmark(), 4, 6);
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        model.init_params(&mut rng);
        let episodes: Vec<_> = (0..8)
            .map(|i| drifted_episode_with(0.0, 60, 100 + i, true))
            .collect();
        let opts = FitOptions {
            epochs: 600,
            lr: 0.02,
            max_pairs: 400,
        };
        let (fitted, losses) = fit_residual(&model, &episodes, &opts).unwrap();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss increased: {} -> {}", w[0], w[1]);
        }
        // Trained output magnitude on training inputs stays tiny.
        let ep = &episodes[0];
        for t in 3..20 {
            let g = fitted.residual(&ep.rows[t - 3..=t]).unwrap();
            assert!(g[0].abs() <= 1e-3 * fitted.residual_clamp[0].max(1.0));
            assert!(g[1].abs() <= 1e-3 * fitted.residual_clamp[1].max(1.0) + 1e-3);
        }
    }

    #[test]
    fn hidden_drift_halves_prediction_error() {
        let mut model = HybridModel::new(PlantParams::benchmark(), 4, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        model.init_params(&mut rng);
        let train: Vec<_> = (0..50).map(|i| drifted_episode(0.5, 40, 200 + i)).collect();
        let held_out: Vec<_> = (0..10).map(|i| drifted_episode(0.5, 40, 900 + i)).collect();
        let opts = FitOptions {
            epochs: 150,
            lr: 0.02,
            max_pairs: 600,
        };
        let (fitted, _) = fit_residual(&model, &train, &opts).unwrap();
        let physics_mse = one_step_mse(&fitted, &held_out, 0.05, false).unwrap();
        let hybrid_mse = one_step_mse(&fitted, &held_out, 0.05, true).unwrap();
        assert!(
            hybrid_mse <= 0.5 * physics_mse,
            "hybrid {hybrid_mse} vs physics {physics_mse}"
        );
    }

    #[test]
    fn constant_residual_is_recovered() {
        let mut model = HybridModel::new(PlantParams::benchmark(), 4, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        model.init_params(&mut rng);
        let drift = 0.4; // K/min, inside the 1.0 clamp
        let train: Vec<_> = (0..30)
            .map(|i| drifted_episode_with(drift, 40, 300 + i, true))
            .collect();
        let opts = FitOptions {
            epochs: 400,
            lr: 0.02,
            max_pairs: 600,
        };
        let (fitted, _) = fit_residual(&model, &train, &opts).unwrap();
        let mut sum = 0.0;
        let mut n = 0usize;
        for ep in &train[..5] {
            for t in 3..ep.rows.len() {
                sum += fitted.residual(&ep.rows[t - 3..=t]).unwrap()[1];
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!(
            (mean - drift).abs() <= 0.1 * drift,
            "mean residual {mean} vs drift {drift}"
        );
    }
}
