//! Dataset generation: normal-operation episodes under the benign setpoint
//! walk, and fault episodes with injected sensor/actuator faults, sliced
//! into labeled windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::blue::{SensorWindow, WindowLabel, WindowOrigin};
use crate::error::Result;
use crate::plant::sim::{SimConfig, SimStep, Simulator, StepInputs};
use crate::plant::{apply_fault, operating_point, FaultKind, FaultMemory, FaultSpec, ProcessState, SensorVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataGenConfig {
    pub window_len: usize,
    pub stride: usize,
    pub episode_steps: usize,
    pub n_normal_episodes: usize,
    pub n_fault_episodes: usize,
    /// Step-bias magnitude for generated sensor faults, in noise sigmas.
    pub fault_sigma_multiple: f64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig {
            window_len: 12,
            stride: 3,
            episode_steps: 480,
            n_normal_episodes: 12,
            n_fault_episodes: 18,
            fault_sigma_multiple: 5.0,
        }
    }
}

/// The stable operating point for a simulator configuration.
pub fn nominal_start(sim: &SimConfig) -> Result<ProcessState> {
    operating_point(&sim.params, &sim.base, sim.h)
}

/// One normal-operation episode; returns the observed sensor rows.
pub fn normal_episode(sim_cfg: &SimConfig, start: ProcessState, steps: usize, seed: u64) -> Result<Vec<SensorVec>> {
    let mut sim = Simulator::new(*sim_cfg, start, seed);
    let mut rows = Vec::with_capacity(steps);
    for _ in 0..steps {
        rows.push(sim.step(&StepInputs::default())?.sensors);
    }
    Ok(rows)
}

/// Slice a sensor series into fixed-length windows.
pub fn slice_windows(
    rows: &[SensorVec],
    window_len: usize,
    stride: usize,
    label: WindowLabel,
    origin: WindowOrigin,
) -> Vec<SensorWindow> {
    let mut out = Vec::new();
    if rows.len() < window_len {
        return out;
    }
    let mut start = 0usize;
    while start + window_len <= rows.len() {
        out.push(SensorWindow::new(
            rows[start..start + window_len].to_vec(),
            label,
            origin,
        ));
        start += stride;
    }
    out
}

/// Generate labeled normal windows from fresh episodes.
pub fn generate_normal_windows(sim_cfg: &SimConfig, cfg: &DataGenConfig, seed: u64) -> Result<Vec<SensorWindow>> {
    let start = nominal_start(sim_cfg)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..cfg.n_normal_episodes {
        let ep_seed = rng.random::<u64>();
        let s0 = Simulator::perturb_start(start, 0.004, 0.3, &mut rng);
        let rows = normal_episode(sim_cfg, s0, cfg.episode_steps, ep_seed)?;
        out.extend(slice_windows(
            &rows,
            cfg.window_len,
            cfg.stride,
            WindowLabel::Normal,
            WindowOrigin::ZNormal,
        ));
    }
    Ok(out)
}

/// Generate fault-labeled windows mixing step-bias and ramp faults on the
/// two process-sensor channels. Only windows overlapping the active fault
/// span are returned.
pub fn generate_fault_windows(sim_cfg: &SimConfig, cfg: &DataGenConfig, seed: u64) -> Result<Vec<SensorWindow>> {
    generate_fault_windows_of(sim_cfg, cfg, seed, true)
}

/// Step-bias-only fault windows (the recall benchmark set).
pub fn generate_step_bias_windows(sim_cfg: &SimConfig, cfg: &DataGenConfig, seed: u64) -> Result<Vec<SensorWindow>> {
    generate_fault_windows_of(sim_cfg, cfg, seed, false)
}

fn generate_fault_windows_of(
    sim_cfg: &SimConfig,
    cfg: &DataGenConfig,
    seed: u64,
    include_ramps: bool,
) -> Result<Vec<SensorWindow>> {
    let start = nominal_start(sim_cfg)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in 0..cfg.n_fault_episodes {
        let ep_seed = rng.random::<u64>();
        let s0 = Simulator::perturb_start(start, 0.004, 0.3, &mut rng);
        let fault_start = cfg.episode_steps / 3 + rng.random_range(0..cfg.episode_steps / 4);
        let duration = cfg.episode_steps / 4;
        let channel = k % 2; // C_A or T sensor
        let magnitude = cfg.fault_sigma_multiple
            * sim_cfg.noise_sigma[channel]
            * if k % 4 < 2 { 1.0 } else { -1.0 };
        let ramp = include_ramps && k % 3 == 2;
        let spec = FaultSpec {
            kind: if ramp { FaultKind::RampDrift } else { FaultKind::SensorStepBias },
            channel,
            magnitude: if ramp { 2.0 * magnitude } else { magnitude },
            start_step: fault_start,
            duration,
        };
        let mut sim = Simulator::new(*sim_cfg, s0, ep_seed);
        let mut mem = FaultMemory::default();
        let mut rows: Vec<SensorVec> = Vec::with_capacity(cfg.episode_steps);
        for t in 0..cfg.episode_steps {
            let step: SimStep = sim.step(&StepInputs::default())?;
            let faulted = apply_fault(&step.sensors, &spec, t, &mut mem)?;
            let mut row = [0.0; 5];
            row.copy_from_slice(&faulted);
            rows.push(row);
        }
        let mut pos = 0usize;
        while pos + cfg.window_len <= rows.len() {
            let end = pos + cfg.window_len;
            let overlaps = pos < fault_start + duration && end > fault_start;
            if overlaps {
                out.push(SensorWindow::new(
                    rows[pos..end].to_vec(),
                    WindowLabel::Fault,
                    WindowOrigin::ZFault,
                ));
            }
            pos += cfg.stride;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_have_expected_shape_and_count() {
        let rows: Vec<SensorVec> = (0..30).map(|i| [i as f64; 5]).collect();
        let ws = slice_windows(&rows, 12, 3, WindowLabel::Normal, WindowOrigin::ZNormal);
        assert_eq!(ws.len(), 7);
        assert!(ws.iter().all(|w| w.len() == 12));
        assert_eq!(ws[1].rows[0][0], 3.0);
    }

    #[test]
    fn short_series_yields_no_windows() {
        let rows: Vec<SensorVec> = (0..5).map(|i| [i as f64; 5]).collect();
        assert!(slice_windows(&rows, 12, 3, WindowLabel::Normal, WindowOrigin::ZNormal).is_empty());
    }
}
