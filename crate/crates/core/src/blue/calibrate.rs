//! Score calibration through a continuous empirical CDF. The map is strictly
//! increasing (piecewise linear through the sorted calibration scores, with
//! exponential tails), so heterogeneous members become commensurable under
//! max-fusion while order relations on raw scores survive exactly.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibrator {
    sorted: Vec<f64>,
    tail_scale: f64,
}

impl Calibrator {
    pub fn fit(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(CoreError::Empty("calibration scores".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(CoreError::NonFinite("calibration scores".into()));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        let median = sorted[sorted.len() / 2];
        let max = *sorted.last().expect("non-empty");
        let tail_scale = (max - median).max(1e-12);
        Ok(Calibrator { sorted, tail_scale })
    }

    /// Map a raw score into (0, 1).
    pub fn calibrate(&self, x: f64) -> f64 {
        let n = self.sorted.len();
        let denom = (n + 1) as f64;
        let lo = self.sorted[0];
        let hi = self.sorted[n - 1];
        if x < lo {
            let p_lo = 1.0 / denom;
            return p_lo * ((x - lo) / self.tail_scale).exp();
        }
        if x >= hi {
            let p_hi = n as f64 / denom;
            return 1.0 - (1.0 - p_hi) * (-(x - hi) / self.tail_scale).exp();
        }
        // Index of the last entry <= x; ties collapse to the run's end.
        let upper = self.sorted.partition_point(|&s| s <= x);
        let i = upper - 1;
        let s_i = self.sorted[i];
        let s_next = self.sorted[upper];
        let frac = if s_next > s_i { (x - s_i) / (s_next - s_i) } else { 0.0 };
        (upper as f64 + frac) / denom
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn max_observed(&self) -> f64 {
        *self.sorted.last().expect("non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_sample_scores_get_uniform_ranks() {
        let scores = vec![3.0, 1.0, 2.0, 4.0];
        let c = Calibrator::fit(&scores).unwrap();
        assert!((c.calibrate(1.0) - 1.0 / 5.0).abs() < 1e-12);
        assert!((c.calibrate(2.0) - 2.0 / 5.0).abs() < 1e-12);
        assert!((c.calibrate(4.0) - 4.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn strictly_monotone_including_tails() {
        let scores: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let c = Calibrator::fit(&scores).unwrap();
        let mut prev = f64::NEG_INFINITY;
        let mut x = -0.5;
        while x < 3.0 {
            let p = c.calibrate(x);
            assert!(p > prev, "calibration not strictly increasing at {x}");
            assert!((0.0..1.0).contains(&p));
            prev = p;
            x += 0.01;
        }
    }

    #[test]
    fn identical_data_gives_identical_tables() {
        let scores: Vec<f64> = (0..100).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let a = Calibrator::fit(&scores).unwrap();
        let b = Calibrator::fit(&scores).unwrap();
        for i in 0..200 {
            let x = i as f64 * 0.01 - 0.5;
            assert!((a.calibrate(x) - b.calibrate(x)).abs() < 1e-12);
        }
    }
}
