//! MDP wrapper: the attacker nudges actuator setpoints on top of benign
//! operation while a frozen defender scores every new window. Episodes end
//! at the horizon or on a safety breach.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::blue::{DetectorEnsemble, SensorWindow, WindowLabel, WindowOrigin};
use crate::error::{CoreError, Result};
use crate::plant::hybrid::ChannelNormalizer;
use crate::plant::sim::{SimConfig, Simulator, StepInputs};
use crate::plant::{ProcessState, SensorVec, ACTUATOR_CHANNELS, SENSOR_CHANNELS};
use crate::red::{disruption, reward, RewardConfig};

/// Observation layout: normalized channel vector, previous fused defender
/// score, normalized time-in-episode.
pub const OBS_DIM: usize = SENSOR_CHANNELS + 2;

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub horizon: usize,
    pub max_delta: [f64; ACTUATOR_CHANNELS],
    pub reward: RewardConfig,
    pub start: ProcessState,
    /// Start-state jitter sigmas (concentration, temperature).
    pub start_jitter: (f64, f64),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if self.horizon == 0 {
            return Err(CoreError::Config("episode horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MdpState {
    pub obs: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub fused: f64,
    pub disruption: f64,
    pub breached: bool,
    pub sensors: SensorVec,
    pub state: ProcessState,
    pub attack_active: bool,
}

pub struct AttackEnv<'d> {
    pub cfg: EnvConfig,
    defender: &'d DetectorEnsemble,
    normalizer: ChannelNormalizer,
    sim: Simulator,
    history: Vec<SensorVec>,
    cum: [f64; ACTUATOR_CHANNELS],
    t: usize,
    prev_fused: f64,
    done: bool,
}

impl<'d> AttackEnv<'d> {
    pub fn new(cfg: EnvConfig, defender: &'d DetectorEnsemble) -> Result<Self> {
        cfg.validate()?;
        let sim = Simulator::new(cfg.sim, cfg.start, 0);
        Ok(AttackEnv {
            cfg,
            defender,
            normalizer: ChannelNormalizer::benchmark(),
            sim,
            history: Vec::new(),
            cum: [0.0; ACTUATOR_CHANNELS],
            t: 0,
            prev_fused: 0.0,
            done: true,
        })
    }

    pub fn window_len(&self) -> usize {
        self.defender.cfg.window_len
    }

    /// Begin a fresh episode: jittered start, then enough benign warmup
    /// steps to fill the scoring window.
    pub fn reset(&mut self, seed: u64) -> Result<MdpState> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let start = Simulator::perturb_start(
            self.cfg.start,
            self.cfg.start_jitter.0,
            self.cfg.start_jitter.1,
            &mut rng,
        );
        self.sim = Simulator::new(self.cfg.sim, start, rng.random::<u64>());
        self.history.clear();
        self.cum = [0.0; ACTUATOR_CHANNELS];
        self.t = 0;
        self.done = false;
        for _ in 0..self.window_len() {
            let s = self.sim.step(&StepInputs::default())?;
            self.history.push(s.sensors);
        }
        self.prev_fused = self.defender.score(&self.current_window())?.fused;
        Ok(self.mdp_state())
    }

    fn current_window(&self) -> SensorWindow {
        let l = self.window_len();
        let rows = self.history[self.history.len() - l..].to_vec();
        SensorWindow::new(rows, WindowLabel::Normal, WindowOrigin::ZNormal)
    }

    fn mdp_state(&self) -> MdpState {
        let last = self.history.last().expect("warmup filled history");
        let norm = self.normalizer.normalize(last);
        let mut obs = norm.to_vec();
        obs.push(self.prev_fused);
        obs.push(self.t as f64 / self.cfg.horizon as f64);
        MdpState { obs }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Apply a bounded setpoint delta, advance one sampling period, score
    /// the new window with the frozen defender and emit the reward.
    pub fn step(&mut self, delta: [f64; ACTUATOR_CHANNELS]) -> Result<(MdpState, f64, bool, StepInfo)> {
        if self.done {
            return Err(CoreError::Invalid("step on a finished episode".into()));
        }
        let base = self.cfg.sim.base.as_array();
        let ranges = self.cfg.sim.ranges.as_arrays();
        for i in 0..ACTUATOR_CHANNELS {
            let d = delta[i].clamp(-self.cfg.max_delta[i], self.cfg.max_delta[i]);
            self.cum[i] = (self.cum[i] + d).clamp(ranges[i][0] - base[i], ranges[i][1] - base[i]);
        }
        let inputs = StepInputs {
            extra_offset: self.cum,
            ..StepInputs::default()
        };
        let s = self.sim.step(&inputs)?;
        self.history.push(s.sensors);
        if self.history.len() > 4 * self.window_len() {
            let cut = self.history.len() - self.window_len();
            self.history.drain(..cut);
        }
        let fused = self.defender.score(&self.current_window())?.fused;
        let (disr, breached) = disruption(&self.cfg.reward, &[s.state.c_a, s.state.t]);
        let r = reward(&self.cfg.reward, disr, fused);
        self.t += 1;
        self.prev_fused = fused;
        self.done = self.t >= self.cfg.horizon || breached;
        let info = StepInfo {
            fused,
            disruption: disr,
            breached,
            sensors: s.sensors,
            state: s.state,
            attack_active: self.cum.iter().any(|c| *c != 0.0),
        };
        Ok((self.mdp_state(), r, self.done, info))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blue::{fit_baseline, BlueConfig};
    use crate::data::{generate_normal_windows, DataGenConfig};
    use crate::plant::operating_point;

    fn tiny_defender() -> DetectorEnsemble {
        let sim = SimConfig::benchmark();
        let cfg = DataGenConfig {
            n_normal_episodes: 3,
            episode_steps: 240,
            ..DataGenConfig::default()
        };
        let normal = generate_normal_windows(&sim, &cfg, 31).unwrap();
        let blue = BlueConfig {
            train_epochs: 3,
            ..BlueConfig::default()
        };
        fit_baseline(&normal, &[], &blue, 5).unwrap().0
    }

    #[test]
    fn zero_action_near_equilibrium_keeps_low_disruption() {
        let defender = tiny_defender();
        let sim = SimConfig::benchmark();
        let start = operating_point(&sim.params, &sim.base, sim.h).unwrap();
        let cfg = EnvConfig {
            sim,
            horizon: 40,
            max_delta: [0.3, 0.25, 0.0025],
            reward: RewardConfig::benchmark([start.c_a, start.t]),
            start,
            start_jitter: (0.002, 0.2),
        };
        let mut env = AttackEnv::new(cfg, &defender).unwrap();
        env.reset(11).unwrap();
        let mut total_disr = 0.0;
        let mut steps = 0;
        loop {
            let (_, _, done, info) = env.step([0.0; 3]).unwrap();
            total_disr += info.disruption;
            steps += 1;
            assert!(!info.attack_active);
            if done {
                break;
            }
        }
        let mean = total_disr / steps as f64;
        assert!(mean < 0.25, "benign mean disruption {mean} too high");
    }

    #[test]
    fn setpoint_clipping_and_horizon() {
        let defender = tiny_defender();
        let sim = SimConfig::benchmark();
        let start = operating_point(&sim.params, &sim.base, sim.h).unwrap();
        let mut reward_cfg = RewardConfig::benchmark([start.c_a, start.t]);
        reward_cfg.vars[1].safety = 1.0e6; // keep the episode alive to the horizon
        reward_cfg.vars[1].halfband = 1.0e5;
        let cfg = EnvConfig {
            sim,
            horizon: 25,
            max_delta: [3.0, 0.25, 0.0025],
            reward: reward_cfg,
            start,
            start_jitter: (0.0, 0.0),
        };
        let mut env = AttackEnv::new(cfg, &defender).unwrap();
        env.reset(13).unwrap();
        let mut steps = 0;
        loop {
            // Push coolant hard downward; the commanded setpoint must clip.
            let (_, _, done, _) = env.step([-3.0, 0.0, 0.0]).unwrap();
            steps += 1;
            if done {
                break;
            }
        }
        assert_eq!(steps, 25);
        assert!(env.step([0.0; 3]).is_err());
    }
}
