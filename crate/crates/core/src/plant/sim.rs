//! Closed-loop plant simulator: benign setpoint walk, attack offsets,
//! scripted overrides, sensor readout. One simulator owns one RNG stream,
//! so runs are reproducible from (config, seed) alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::plant::{
    observe, step_rk4, ActuatorRanges, ActuatorVector, PlantParams, ProcessState, SensorVec,
    ACTUATOR_CHANNELS, SENSOR_CHANNELS,
};

/// Mean-reverting random walk applied to the actuator setpoints during
/// normal operation. This is the benign variation an attacker's slow
/// manipulations hide inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Hard band on the walk offset per actuator channel.
    pub band: [f64; ACTUATOR_CHANNELS],
    /// Innovation standard deviation per channel.
    pub sigma: [f64; ACTUATOR_CHANNELS],
    /// Mean-reversion factor in [0, 1].
    pub revert: f64,
}

impl WalkConfig {
    pub fn benchmark() -> Self {
        WalkConfig {
            band: [1.5, 1.0, 0.01],
            sigma: [0.12, 0.08, 0.0008],
            revert: 0.02,
        }
    }

    pub fn still() -> Self {
        WalkConfig {
            band: [0.0; 3],
            sigma: [0.0; 3],
            revert: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: PlantParams,
    pub ranges: ActuatorRanges,
    pub base: ActuatorVector,
    pub noise_sigma: SensorVec,
    pub walk: WalkConfig,
    /// RK4 integration step in minutes; one step is one sampling period.
    pub h: f64,
    /// Feed-temperature disturbance (left at zero in the standard scenarios).
    pub d_tf: f64,
}

impl SimConfig {
    pub fn benchmark() -> Self {
        let params = PlantParams::benchmark();
        SimConfig {
            params,
            ranges: ActuatorRanges::benchmark(),
            base: ActuatorVector {
                tc_cmd: params.t_c,
                f_cmd: params.flow,
                caf_cmd: params.c_af,
            },
            noise_sigma: [0.008, 0.4, 0.08, 0.08, 0.0015],
            walk: WalkConfig::benchmark(),
            h: 0.05,
            d_tf: 0.0,
        }
    }
}

/// Per-step inputs beyond the benign schedule. All default to "no effect".
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInputs {
    /// Attacker offset added to the benign setpoints before range clamping.
    pub extra_offset: [f64; ACTUATOR_CHANNELS],
    /// Hard setpoint override per channel (applied after the offset).
    pub absolute_cmd: [Option<f64>; ACTUATOR_CHANNELS],
    /// Post-noise replacement of reported sensor values (replay/spoofing).
    pub sensor_override: [Option<f64>; SENSOR_CHANNELS],
}

#[derive(Debug, Clone, Copy)]
pub struct SimStep {
    pub state: ProcessState,
    pub cmd: ActuatorVector,
    pub sensors: SensorVec,
    pub walk_offsets: [f64; ACTUATOR_CHANNELS],
    pub clamped_concentration: bool,
}

pub struct Simulator {
    cfg: SimConfig,
    state: ProcessState,
    walk: [f64; ACTUATOR_CHANNELS],
    rng: ChaCha12Rng,
    step_index: usize,
}

impl Simulator {
    pub fn new(cfg: SimConfig, start: ProcessState, seed: u64) -> Self {
        Simulator {
            cfg,
            state: start,
            walk: [0.0; ACTUATOR_CHANNELS],
            rng: ChaCha12Rng::seed_from_u64(seed),
            step_index: 0,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn state(&self) -> ProcessState {
        self.state
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Commanded setpoints for the given inputs without advancing anything.
    fn command(&self, inputs: &StepInputs) -> ActuatorVector {
        let base = self.cfg.base.as_array();
        let mut cmd = [0.0; ACTUATOR_CHANNELS];
        for i in 0..ACTUATOR_CHANNELS {
            cmd[i] = base[i] + self.walk[i] + inputs.extra_offset[i];
            if let Some(v) = inputs.absolute_cmd[i] {
                cmd[i] = v;
            }
        }
        self.cfg.ranges.clamp(ActuatorVector::from_array(cmd))
    }

    fn advance_walk(&mut self) {
        for i in 0..ACTUATOR_CHANNELS {
            let sigma = self.cfg.walk.sigma[i];
            let innovation = if sigma > 0.0 {
                Normal::new(0.0, sigma).unwrap().sample(&mut self.rng)
            } else {
                0.0
            };
            let w = self.walk[i] * (1.0 - self.cfg.walk.revert) + innovation;
            self.walk[i] = w.clamp(-self.cfg.walk.band[i], self.cfg.walk.band[i]);
        }
    }

    /// Advance one sampling period: update the benign walk, resolve the
    /// commanded setpoints, integrate the plant and read the sensors.
    pub fn step(&mut self, inputs: &StepInputs) -> Result<SimStep> {
        self.advance_walk();
        let cmd = self.command(inputs);
        let integ = step_rk4(&self.state, &cmd, &self.cfg.params, self.cfg.h)?;
        self.state = integ.state;
        let mut sensors = observe(&self.state, &cmd, &self.cfg.noise_sigma, &mut self.rng)?;
        for i in 0..SENSOR_CHANNELS {
            if let Some(v) = inputs.sensor_override[i] {
                sensors[i] = v;
            }
        }
        self.step_index += 1;
        Ok(SimStep {
            state: self.state,
            cmd,
            sensors,
            walk_offsets: self.walk,
            clamped_concentration: integ.clamped,
        })
    }

    /// Draw a perturbed start around `nominal` (used for episode resets).
    pub fn perturb_start<R: Rng>(nominal: ProcessState, c_sigma: f64, t_sigma: f64, rng: &mut R) -> ProcessState {
        let c = Normal::new(nominal.c_a, c_sigma).unwrap().sample(rng);
        let t = Normal::new(nominal.t, t_sigma).unwrap().sample(rng);
        ProcessState {
            c_a: c.max(0.0),
            t,
        }
    }
}
