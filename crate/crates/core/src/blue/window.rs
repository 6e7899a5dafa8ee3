//! The unit of detection and training: a fixed-length window of channel
//! vectors with a ground-truth label and a provenance tag.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::{SensorVec, SENSOR_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Normal,
    Fault,
    Attack,
}

/// Which pipeline produced the window. Hardening rules key off this: the
/// isolation forest must never train on attack-tagged windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowOrigin {
    ZNormal,
    ZFault,
    ZNew,
    ZJsma,
    ZReplay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorWindow {
    pub rows: Vec<SensorVec>,
    pub label: WindowLabel,
    pub origin: WindowOrigin,
    /// Co-evolution epoch that discovered this window (attacks only).
    pub discovery_epoch: Option<usize>,
}

impl SensorWindow {
    pub fn new(rows: Vec<SensorVec>, label: WindowLabel, origin: WindowOrigin) -> Self {
        SensorWindow {
            rows,
            label,
            origin,
            discovery_epoch: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self, window_len: usize) -> Result<()> {
        if self.rows.len() != window_len {
            return Err(CoreError::DimMismatch(format!(
                "window has {} rows, detector expects {window_len}",
                self.rows.len()
            )));
        }
        if self
            .rows
            .iter()
            .any(|r| r.iter().any(|v| !v.is_finite()))
        {
            return Err(CoreError::NonFinite("sensor window entries".into()));
        }
        Ok(())
    }

    /// Row-major flattening (`len * SENSOR_CHANNELS` values).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows.len() * SENSOR_CHANNELS);
        for r in &self.rows {
            out.extend_from_slice(r);
        }
        out
    }

    /// Number of entries differing from `other` (L0 distance).
    pub fn l0_distance(&self, other: &SensorWindow) -> usize {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
            .sum()
    }
}

/// Per-channel affine standardization fitted on normal training windows.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Zscore {
    pub mean: SensorVec,
    pub std: SensorVec,
}

impl Zscore {
    pub fn fit(windows: &[SensorWindow]) -> Result<Self> {
        let mut count = 0usize;
        let mut mean = [0.0; SENSOR_CHANNELS];
        for w in windows {
            for r in &w.rows {
                for c in 0..SENSOR_CHANNELS {
                    mean[c] += r[c];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(CoreError::Empty("standardization data".into()));
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = [0.0; SENSOR_CHANNELS];
        for w in windows {
            for r in &w.rows {
                for c in 0..SENSOR_CHANNELS {
                    let d = r[c] - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let mut std = [0.0; SENSOR_CHANNELS];
        for c in 0..SENSOR_CHANNELS {
            std[c] = (var[c] / count as f64).sqrt().max(1e-9);
        }
        Ok(Zscore { mean, std })
    }

    pub fn apply(&self, row: &SensorVec) -> SensorVec {
        let mut out = [0.0; SENSOR_CHANNELS];
        for c in 0..SENSOR_CHANNELS {
            out[c] = (row[c] - self.mean[c]) / self.std[c];
        }
        out
    }

    /// Summary features for the forest: per channel mean, std, min, max and
    /// last-minus-first over the standardized window.
    pub fn forest_features(&self, w: &SensorWindow) -> Vec<f64> {
        let n = w.rows.len() as f64;
        let mut out = Vec::with_capacity(SENSOR_CHANNELS * 5);
        for c in 0..SENSOR_CHANNELS {
            let vals: Vec<f64> = w.rows.iter().map(|r| (r[c] - self.mean[c]) / self.std[c]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.push(mean);
            out.push(var.sqrt());
            out.push(min);
            out.push(max);
            out.push(vals[vals.len() - 1] - vals[0]);
        }
        out
    }
}
