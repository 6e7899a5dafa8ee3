//! Squashed-Gaussian policy and state-value network. The policy emits a
//! mean through a small tanh network with a state-independent log-std; raw
//! samples are tanh-squashed and scaled to the per-channel delta bounds,
//! with the exact change-of-variables correction in the log-density.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Activation, MlpSpec, NodeId, ParamBuilder, ParamVector, Tape};
use crate::plant::ACTUATOR_CHANNELS;

const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// `ln(1 - tanh(u)^2)` computed without catastrophic underflow.
fn ln_one_minus_tanh_sq(u: f64) -> f64 {
    // ln(1 - tanh^2 u) = 2 (ln 2 - u - softplus(-2u)) for any sign of u.
    let softplus = |x: f64| {
        if x > 30.0 {
            x
        } else if x < -30.0 {
            0.0
        } else {
            x.exp().ln_1p()
        }
    };
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub max_delta: [f64; ACTUATOR_CHANNELS],
}

impl GaussianPolicy {
    pub fn new<R: Rng>(obs_dim: usize, hidden: usize, max_delta: [f64; ACTUATOR_CHANNELS], rng: &mut R) -> Self {
        let spec = MlpSpec::new(
            "policy.net",
            &[obs_dim, hidden, hidden, ACTUATOR_CHANNELS],
            Activation::Tanh,
            Activation::Linear,
        );
        let mut b = ParamBuilder::new();
        spec.register(&mut b);
        b.vector("policy.log_std", ACTUATOR_CHANNELS);
        let mut params = b.finish();
        spec.init(&mut params, rng);
        params
            .fill_tensor("policy.log_std", -0.9)
            .expect("log_std registered");
        GaussianPolicy {
            spec,
            params,
            max_delta,
        }
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.spec.forward_values(&self.params, obs)
    }

    pub fn log_std(&self) -> &[f64] {
        self.params.tensor("policy.log_std").expect("registered")
    }

    /// Deterministic action (tanh of the mean, scaled).
    pub fn mean_action(&self, obs: &[f64]) -> Result<[f64; ACTUATOR_CHANNELS]> {
        let mean = self.mean(obs)?;
        let mut a = [0.0; ACTUATOR_CHANNELS];
        for i in 0..ACTUATOR_CHANNELS {
            a[i] = mean[i].tanh() * self.max_delta[i];
        }
        Ok(a)
    }

    /// Sample a raw pre-squash vector and the squashed, scaled action.
    pub fn sample<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<PolicySample> {
        let mean = self.mean(obs)?;
        let log_std = self.log_std().to_vec();
        let mut raw = [0.0; ACTUATOR_CHANNELS];
        let mut action = [0.0; ACTUATOR_CHANNELS];
        for i in 0..ACTUATOR_CHANNELS {
            let eps: f64 = StandardNormal.sample(rng);
            raw[i] = mean[i] + log_std[i].exp() * eps;
            action[i] = raw[i].tanh() * self.max_delta[i];
        }
        let log_prob = self.log_prob_of_raw(&mean, &log_std, &raw);
        Ok(PolicySample {
            raw,
            action,
            log_prob,
        })
    }

    /// Exact log-density of the squashed action identified by its raw
    /// pre-squash vector, including the tanh-and-scale correction.
    pub fn log_prob(&self, obs: &[f64], raw: &[f64; ACTUATOR_CHANNELS]) -> Result<f64> {
        let mean = self.mean(obs)?;
        let log_std = self.log_std().to_vec();
        Ok(self.log_prob_of_raw(&mean, &log_std, raw))
    }

    fn log_prob_of_raw(&self, mean: &[f64], log_std: &[f64], raw: &[f64; ACTUATOR_CHANNELS]) -> f64 {
        let mut lp = 0.0;
        for i in 0..ACTUATOR_CHANNELS {
            let std = log_std[i].exp();
            let z = (raw[i] - mean[i]) / std;
            lp += -0.5 * z * z - log_std[i] - 0.5 * LN_2PI;
            lp -= self.max_delta[i].ln() + ln_one_minus_tanh_sq(raw[i]);
        }
        lp
    }

    /// The squash correction for a raw sample (constant w.r.t. parameters).
    pub fn squash_correction(&self, raw: &[f64; ACTUATOR_CHANNELS]) -> f64 {
        let mut c = 0.0;
        for i in 0..ACTUATOR_CHANNELS {
            c -= self.max_delta[i].ln() + ln_one_minus_tanh_sq(raw[i]);
        }
        c
    }

    /// Tape node for the exact log-density at a stored raw sample. The
    /// Gaussian part is differentiable; the squash correction enters as a
    /// constant offset (it depends only on the sample).
    pub fn log_prob_node(
        &self,
        tape: &mut Tape,
        obs: &[f64],
        raw: &[f64; ACTUATOR_CHANNELS],
    ) -> Result<NodeId> {
        let obs_node = tape.constant(obs);
        let mean = self.spec.forward(tape, &self.params, obs_node)?;
        let log_std = tape.param(&self.params, "policy.log_std")?;
        let raw_node = tape.constant(raw);
        let diff = tape.sub(raw_node, mean)?;
        let neg_log_std = tape.scale(log_std, -1.0);
        let inv_std = tape.exp(neg_log_std);
        let z = tape.mul(diff, inv_std)?;
        let ss = tape.sum_sq(z);
        let half_ss = tape.scale(ss, -0.5);
        let sum_log_std = tape.sum(log_std);
        let neg_sum = tape.scale(sum_log_std, -1.0);
        let gauss = tape.add(half_ss, neg_sum)?;
        let constant = -0.5 * LN_2PI * ACTUATOR_CHANNELS as f64 + self.squash_correction(raw);
        Ok(tape.offset(gauss, constant))
    }

    /// Differentiable entropy of the pre-squash Gaussian.
    pub fn entropy_node(&self, tape: &mut Tape) -> Result<NodeId> {
        let log_std = tape.param(&self.params, "policy.log_std")?;
        let s = tape.sum(log_std);
        Ok(tape.offset(s, 0.5 * (1.0 + LN_2PI) * ACTUATOR_CHANNELS as f64))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    pub raw: [f64; ACTUATOR_CHANNELS],
    pub action: [f64; ACTUATOR_CHANNELS],
    pub log_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueNet {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl ValueNet {
    pub fn new<R: Rng>(obs_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let spec = MlpSpec::new(
            "value.net",
            &[obs_dim, hidden, hidden, 1],
            Activation::Tanh,
            Activation::Linear,
        );
        let mut b = ParamBuilder::new();
        spec.register(&mut b);
        let mut params = b.finish();
        spec.init(&mut params, rng);
        ValueNet { spec, params }
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.spec.forward_values(&self.params, obs)?[0])
    }

    pub fn value_node(&self, tape: &mut Tape, obs: &[f64]) -> Result<NodeId> {
        let obs_node = tape.constant(obs);
        self.spec.forward(tape, &self.params, obs_node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_diff_params, max_relative_error, DEFAULT_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn log_prob_finite_even_for_extreme_raw_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let policy = GaussianPolicy::new(4, 8, [0.3, 0.25, 0.0025], &mut rng);
        let obs = [0.1, -0.2, 0.3, 0.9];
        for raw in [[0.0; 3], [25.0, -25.0, 60.0], [-300.0, 300.0, 0.0]] {
            let lp = policy.log_prob(&obs, &raw).unwrap();
            assert!(lp.is_finite(), "log_prob not finite for raw {raw:?}: {lp}");
        }
    }

    #[test]
    fn squashed_actions_respect_delta_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let max_delta = [0.3, 0.25, 0.0025];
        let policy = GaussianPolicy::new(4, 8, max_delta, &mut rng);
        let obs = [1.0, 1.0, -1.0, 0.2];
        for _ in 0..200 {
            let s = policy.sample(&obs, &mut rng).unwrap();
            for i in 0..3 {
                assert!(s.action[i].abs() <= max_delta[i]);
            }
        }
    }

    #[test]
    fn log_prob_node_matches_direct_and_gradients_check() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let policy = GaussianPolicy::new(3, 6, [0.3, 0.25, 0.0025], &mut rng);
        let obs = [0.4, -0.7, 0.1];
        let raw = [0.2, -0.5, 0.9];

        let mut tape = Tape::new(&policy.params);
        let lp_node = policy.log_prob_node(&mut tape, &obs, &raw).unwrap();
        let direct = policy.log_prob(&obs, &raw).unwrap();
        assert!((tape.scalar(lp_node) - direct).abs() < 1e-10);

        let analytic = tape.backward(lp_node).unwrap().params;
        let numeric = central_diff_params(
            &policy.params,
            |p| {
                let mut pol = policy.clone();
                pol.params = p.clone();
                pol.log_prob(&obs, &raw).unwrap()
            },
            DEFAULT_EPS,
        );
        let err = max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "policy-head gradient error {err}");
    }
}
