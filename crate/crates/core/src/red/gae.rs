//! Generalized advantage estimation.

use crate::error::{CoreError, Result};

/// `delta_t = r_t + gamma*V_{t+1} - V_t`, `A_t = sum_k (gamma*lambda)^k
/// delta_{t+k}`, returns `A + V`. `values` carries one bootstrap entry more
/// than `rewards`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(CoreError::DimMismatch(format!(
            "gae needs len(values) == len(rewards)+1, got {} and {}",
            values.len(),
            rewards.len()
        )));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    let returns: Vec<f64> = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn single_step_matches_delta() {
        let (a, r) = gae(&[2.0], &[1.0, 3.0], 0.9, 0.8).unwrap();
        assert!((a[0] - (2.0 + 0.9 * 3.0 - 1.0)).abs() < 1e-15);
        assert!((r[0] - (a[0] + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let rewards = [1.0, -0.5, 0.25];
        let values = [0.2, 0.4, -0.1, 0.9];
        let (a, _) = gae(&rewards, &values, 0.95, 0.0).unwrap();
        for t in 0..3 {
            let delta = rewards[t] + 0.95 * values[t + 1] - values[t];
            assert!((a[t] - delta).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let rewards: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..11).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gamma, lambda) = (0.97, 0.9);
        let (a, _) = gae(&rewards, &values, gamma, lambda).unwrap();
        for t in 0..10 {
            let mut expect = 0.0;
            for k in 0..(10 - t) {
                let delta = rewards[t + k] + gamma * values[t + k + 1] - values[t + k];
                expect += (gamma * lambda).powi(k as i32) * delta;
            }
            assert!((a[t] - expect).abs() < 1e-12, "t={t}: {} vs {expect}", a[t]);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(gae(&[1.0, 2.0], &[0.0, 0.0], 0.9, 0.9).is_err());
    }
}
