//! The attacker: an MDP wrapper around the twin plus frozen defender, a
//! squashed-Gaussian policy with clipped-objective updates, and the
//! disruption-minus-detection reward.

pub mod env;
pub mod gae;
pub mod policy;
pub mod ppo;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// One monitored process variable in the disruption term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitoredVar {
    pub setpoint: f64,
    /// Deviation that saturates the normalized term.
    pub halfband: f64,
    /// Deviation beyond which the safety limit is breached.
    pub safety: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub w_disrupt: f64,
    pub w_detect: f64,
    pub vars: Vec<MonitoredVar>,
    /// One-off bonus added to the disruption term on a safety breach.
    pub breach_bonus: f64,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_disrupt < 0.0 || self.w_detect < 0.0 {
            return Err(CoreError::Config("reward weights must be non-negative".into()));
        }
        for v in &self.vars {
            if !(v.halfband > 0.0) {
                return Err(CoreError::Config("halfband must be positive".into()));
            }
            if v.safety <= v.halfband {
                return Err(CoreError::Config(
                    "safety limit must lie outside the setpoint band".into(),
                ));
            }
            if v.weight < 0.0 {
                return Err(CoreError::Config("variable weights must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Benchmark config monitoring concentration and temperature around the
    /// given operating point.
    pub fn benchmark(setpoints: [f64; 2]) -> Self {
        RewardConfig {
            w_disrupt: 1.0,
            w_detect: 1.0,
            vars: vec![
                MonitoredVar {
                    setpoint: setpoints[0],
                    halfband: 0.08,
                    safety: 0.25,
                    weight: 0.5,
                },
                MonitoredVar {
                    setpoint: setpoints[1],
                    halfband: 5.0,
                    safety: 10.0,
                    weight: 0.5,
                },
            ],
            breach_bonus: 1.0,
        }
    }
}

/// Disruption term: weighted, clipped, normalized setpoint deviations plus
/// the breach bonus. Returns `(value, breached)`.
pub fn disruption(cfg: &RewardConfig, values: &[f64]) -> (f64, bool) {
    debug_assert_eq!(values.len(), cfg.vars.len());
    let mut total = 0.0;
    let mut breached = false;
    for (v, &x) in cfg.vars.iter().zip(values) {
        let dev = (x - v.setpoint).abs();
        total += v.weight * (dev / v.halfband).clamp(0.0, 1.0);
        if dev > v.safety {
            breached = true;
        }
    }
    if breached {
        total += cfg.breach_bonus;
    }
    (total, breached)
}

/// `R = w_disrupt * Disruption - w_detect * DetectionScore`.
pub fn reward(cfg: &RewardConfig, disruption_value: f64, det_score: f64) -> f64 {
    cfg.w_disrupt * disruption_value - cfg.w_detect * det_score
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RewardConfig {
        RewardConfig::benchmark([0.877, 324.5])
    }

    #[test]
    fn zero_weights_zero_reward() {
        let mut c = cfg();
        c.w_disrupt = 0.0;
        c.w_detect = 0.0;
        let (d, _) = disruption(&c, &[5.0, 999.0]);
        assert_eq!(reward(&c, d, 0.77), 0.0);
    }

    #[test]
    fn at_setpoints_with_zero_score_reward_is_zero() {
        let c = cfg();
        let (d, breached) = disruption(&c, &[0.877, 324.5]);
        assert_eq!(d, 0.0);
        assert!(!breached);
        assert_eq!(reward(&c, d, 0.0), 0.0);
    }

    #[test]
    fn direct_substitution() {
        let c = cfg();
        assert!((reward(&c, 0.5, 0.2) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn reward_strictly_decreasing_in_detection_score() {
        let c = cfg();
        let d = 0.7;
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let det = k as f64 / 10.0;
            let r = reward(&c, d, det);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn breach_adds_bonus_once() {
        let c = cfg();
        let (d_in, b_in) = disruption(&c, &[0.877, 324.5 + 9.0]);
        assert!(!b_in);
        let (d_out, b_out) = disruption(&c, &[0.877, 324.5 + 11.0]);
        assert!(b_out);
        // Inside: clipped term only; outside: saturated term plus bonus.
        assert!((d_in - 0.5).abs() < 1e-12);
        assert!((d_out - (0.5 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = cfg();
        c.vars[0].safety = c.vars[0].halfband / 2.0;
        assert!(c.validate().is_err());
        let mut c2 = cfg();
        c2.w_detect = -1.0;
        assert!(c2.validate().is_err());
    }
}
