//! Clipped-surrogate policy optimization over collected trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{adam_step, AdamHyper, AdamState, Tape};
use crate::plant::{ACTUATOR_CHANNELS, SENSOR_CHANNELS};
use crate::red::gae::gae;
use crate::red::policy::{GaussianPolicy, ValueNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub value_lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Environment steps collected per training cycle.
    pub batch_steps: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            lr: 3e-4,
            value_lr: 1e-3,
            epochs: 4,
            minibatch: 64,
            batch_steps: 512,
        }
    }
}

/// One rolled-out episode with everything the update and the window
/// harvester need.
#[derive(Debug, Clone)]
pub struct AttackTrajectory {
    pub observations: Vec<Vec<f64>>,
    pub raw_actions: Vec<[f64; ACTUATOR_CHANNELS]>,
    pub actions: Vec<[f64; ACTUATOR_CHANNELS]>,
    pub rewards: Vec<f64>,
    pub fused_scores: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Value estimates with one bootstrap entry after the last step.
    pub values: Vec<f64>,
    pub sensors: Vec<[f64; SENSOR_CHANNELS]>,
    pub attack_active: Vec<bool>,
    pub disruptions: Vec<f64>,
    pub episode_return: f64,
    /// True when the fused score never crossed the defender threshold.
    pub stealth: bool,
    pub breached: bool,
}

impl AttackTrajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn max_disruption(&self) -> f64 {
        self.disruptions.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PpoDiag {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

struct Sample {
    obs: Vec<f64>,
    raw: [f64; ACTUATOR_CHANNELS],
    log_prob_old: f64,
    advantage: f64,
    ret: f64,
}

/// One PPO update over a batch of trajectories. Advantages are normalized
/// across the whole batch. A non-finite loss aborts the update and restores
/// both networks to their entry state.
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    value: &mut ValueNet,
    trajs: &[AttackTrajectory],
    cfg: &PpoConfig,
    policy_opt: &mut AdamState,
    value_opt: &mut AdamState,
    seed: u64,
) -> Result<PpoDiag> {
    let mut samples: Vec<Sample> = Vec::new();
    for tr in trajs {
        if tr.is_empty() {
            continue;
        }
        let (adv, ret) = gae(&tr.rewards, &tr.values, cfg.gamma, cfg.lambda)?;
        for t in 0..tr.len() {
            samples.push(Sample {
                obs: tr.observations[t].clone(),
                raw: tr.raw_actions[t],
                log_prob_old: tr.log_probs[t],
                advantage: adv[t],
                ret: ret[t],
            });
        }
    }
    if samples.is_empty() {
        return Err(CoreError::Empty("ppo batch".into()));
    }
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / samples.len() as f64;
    let var = samples
        .iter()
        .map(|s| (s.advantage - mean) * (s.advantage - mean))
        .sum::<f64>()
        / samples.len() as f64;
    let std = var.sqrt().max(1e-8);
    for s in &mut samples {
        s.advantage = (s.advantage - mean) / std;
    }

    let policy_snapshot = policy.params.clone();
    let value_snapshot = value.params.clone();
    let popt_snapshot = policy_opt.clone();
    let vopt_snapshot = value_opt.clone();

    let result = run_epochs(policy, value, &samples, cfg, policy_opt, value_opt, seed);
    if result.is_err() {
        policy.params = policy_snapshot;
        value.params = value_snapshot;
        *policy_opt = popt_snapshot;
        *value_opt = vopt_snapshot;
    }
    result
}

fn run_epochs(
    policy: &mut GaussianPolicy,
    value: &mut ValueNet,
    samples: &[Sample],
    cfg: &PpoConfig,
    policy_opt: &mut AdamState,
    value_opt: &mut AdamState,
    seed: u64,
) -> Result<PpoDiag> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let p_hyper = AdamHyper::with_lr(cfg.lr);
    let v_hyper = AdamHyper::with_lr(cfg.value_lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut diag = PpoDiag::default();

    for epoch in 0..cfg.epochs.max(1) {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let last_epoch = epoch + 1 == cfg.epochs.max(1);
        let mut epoch_policy_loss = 0.0;
        let mut epoch_value_loss = 0.0;
        let mut clipped = 0usize;
        let mut kl_sum = 0.0;

        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let scale = 1.0 / chunk.len() as f64;
            let mut pgrads = vec![0.0; policy.params.len()];
            let mut vgrads = vec![0.0; value.params.len()];
            let mut batch_policy_loss = 0.0;
            let mut batch_value_loss = 0.0;

            for &i in chunk {
                let s = &samples[i];
                let mut tape = Tape::new(&policy.params);
                let lp = policy.log_prob_node(&mut tape, &s.obs, &s.raw)?;
                let shifted = tape.offset(lp, -s.log_prob_old);
                let ratio = tape.exp(shifted);
                let unclipped = tape.scale(ratio, s.advantage);
                let clipped_ratio = tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                let clipped_term = tape.scale(clipped_ratio, s.advantage);
                let surrogate = tape.min2(unclipped, clipped_term)?;
                let neg_surr = tape.scale(surrogate, -1.0);
                let entropy = policy.entropy_node(&mut tape)?;
                let neg_ent = tape.scale(entropy, -cfg.entropy_coef);
                let loss = tape.add(neg_surr, neg_ent)?;
                let loss_val = tape.scalar(loss);
                if !loss_val.is_finite() {
                    return Err(CoreError::NonFinite("ppo policy loss".into()));
                }
                batch_policy_loss += loss_val * scale;
                let g = tape.backward(loss)?;
                for (acc, gi) in pgrads.iter_mut().zip(&g.params) {
                    *acc += gi * scale;
                }
                let r = tape.value(ratio)[0];
                if last_epoch {
                    if (r - 1.0).abs() > cfg.clip_eps {
                        clipped += 1;
                    }
                    kl_sum += s.log_prob_old - tape.value(lp)[0];
                }

                let mut vtape = Tape::new(&value.params);
                let v = value.value_node(&mut vtape, &s.obs)?;
                let target = vtape.constant(&[s.ret]);
                let diff = vtape.sub(v, target)?;
                let vloss = vtape.sum_sq(diff);
                let vloss_val = vtape.scalar(vloss);
                if !vloss_val.is_finite() {
                    return Err(CoreError::NonFinite("ppo value loss".into()));
                }
                batch_value_loss += vloss_val * scale;
                let g = vtape.backward(vloss)?;
                for (acc, gi) in vgrads.iter_mut().zip(&g.params) {
                    *acc += gi * scale;
                }
            }
            adam_step(&mut policy.params, &pgrads, policy_opt, &p_hyper)?;
            adam_step(&mut value.params, &vgrads, value_opt, &v_hyper)?;
            epoch_policy_loss += batch_policy_loss;
            epoch_value_loss += batch_value_loss;
        }
        if last_epoch {
            let n_batches = order.chunks(cfg.minibatch.max(1)).count() as f64;
            diag.policy_loss = epoch_policy_loss / n_batches;
            diag.value_loss = epoch_value_loss / n_batches;
            diag.clip_fraction = clipped as f64 / samples.len() as f64;
            diag.approx_kl = kl_sum / samples.len() as f64;
        }
    }
    Ok(diag)
}
