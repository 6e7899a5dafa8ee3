//! Non-isothermal CSTR simulation: reaction/energy balances, RK4 stepping,
//! noisy sensor readout, fault injection and steady-state location.
//!
//! The monitored channel layout is fixed across the whole system:
//! `[C_A, T, Tc_readback, F_readback, CAf_readback]`.

pub mod hybrid;
pub mod sim;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Number of monitored channels in a sensor vector.
pub const SENSOR_CHANNELS: usize = 5;
/// Number of commandable actuator channels: coolant temperature, feed flow,
/// feed concentration.
pub const ACTUATOR_CHANNELS: usize = 3;

pub type SensorVec = [f64; SENSOR_CHANNELS];

/// Physical constants of the reactor. Heat-transfer and heat-capacity terms
/// are stored pre-combined (`UA`, `rho_Cp`, `E/R`) since the balances only
/// ever use the products/quotients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Volumetric feed flow (L/min).
    pub flow: f64,
    /// Reactor volume (L).
    pub volume: f64,
    /// Feed concentration of reactant A (mol/L).
    pub c_af: f64,
    /// Arrhenius pre-exponential factor (1/min).
    pub k0: f64,
    /// Activation energy over the gas constant (K).
    pub e_over_r: f64,
    /// Feed temperature (K).
    pub t_f: f64,
    /// Heat of reaction (J/mol); negative means exothermic.
    pub dh: f64,
    /// Density times heat capacity (J/(L*K)).
    pub rho_cp: f64,
    /// Heat transfer coefficient times area (J/(min*K)).
    pub ua: f64,
    /// Coolant temperature (K).
    pub t_c: f64,
}

impl PlantParams {
    /// Classic exothermic CSTR operating regime used throughout the tests.
    pub fn benchmark() -> Self {
        PlantParams {
            flow: 100.0,
            volume: 100.0,
            c_af: 1.0,
            k0: 7.2e10,
            e_over_r: 8750.0,
            t_f: 350.0,
            dh: -5.0e4,
            rho_cp: 239.0,
            ua: 5.0e4,
            t_c: 300.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("flow", self.flow),
            ("volume", self.volume),
            ("c_af", self.c_af),
            ("rho_cp", self.rho_cp),
            ("ua", self.ua),
            ("e_over_r", self.e_over_r),
            ("t_f", self.t_f),
            ("t_c", self.t_c),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::Config(format!("plant param {name} must be positive, got {v}")));
            }
        }
        if self.k0 < 0.0 || !self.k0.is_finite() {
            return Err(CoreError::Config(format!("plant param k0 must be >= 0, got {}", self.k0)));
        }
        if !self.dh.is_finite() {
            return Err(CoreError::Config("plant param dh must be finite".into()));
        }
        Ok(())
    }
}

/// Reactor state: concentration of A and temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessState {
    pub c_a: f64,
    pub t: f64,
}

impl ProcessState {
    pub fn new(c_a: f64, t: f64) -> Self {
        ProcessState { c_a, t }
    }
}

/// Actuator setpoints with their operational ranges applied by `clamped`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorVector {
    /// Coolant temperature setpoint (K).
    pub tc_cmd: f64,
    /// Feed flow setpoint (L/min).
    pub f_cmd: f64,
    /// Feed concentration setpoint (mol/L).
    pub caf_cmd: f64,
}

impl ActuatorVector {
    pub fn as_array(&self) -> [f64; ACTUATOR_CHANNELS] {
        [self.tc_cmd, self.f_cmd, self.caf_cmd]
    }

    pub fn from_array(a: [f64; ACTUATOR_CHANNELS]) -> Self {
        ActuatorVector {
            tc_cmd: a[0],
            f_cmd: a[1],
            caf_cmd: a[2],
        }
    }
}

/// Per-channel `[min, max]` operational ranges for the actuators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorRanges {
    pub tc: [f64; 2],
    pub f: [f64; 2],
    pub caf: [f64; 2],
}

impl ActuatorRanges {
    pub fn benchmark() -> Self {
        ActuatorRanges {
            tc: [290.0, 310.0],
            f: [90.0, 110.0],
            caf: [0.9, 1.1],
        }
    }

    pub fn clamp(&self, a: ActuatorVector) -> ActuatorVector {
        ActuatorVector {
            tc_cmd: a.tc_cmd.clamp(self.tc[0], self.tc[1]),
            f_cmd: a.f_cmd.clamp(self.f[0], self.f[1]),
            caf_cmd: a.caf_cmd.clamp(self.caf[0], self.caf[1]),
        }
    }

    pub fn contains(&self, a: &ActuatorVector) -> bool {
        let eps = 1e-12;
        a.tc_cmd >= self.tc[0] - eps
            && a.tc_cmd <= self.tc[1] + eps
            && a.f_cmd >= self.f[0] - eps
            && a.f_cmd <= self.f[1] + eps
            && a.caf_cmd >= self.caf[0] - eps
            && a.caf_cmd <= self.caf[1] + eps
    }

    pub fn as_arrays(&self) -> [[f64; 2]; ACTUATOR_CHANNELS] {
        [self.tc, self.f, self.caf]
    }
}

/// External disturbance inputs. Only the feed-temperature offset is modeled;
/// the co-evolution scenarios leave it at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceVector {
    pub d_tf: f64,
    pub d_noise_seed: u64,
}

impl Default for DisturbanceVector {
    fn default() -> Self {
        DisturbanceVector {
            d_tf: 0.0,
            d_noise_seed: 0,
        }
    }
}

/// Fault kinds injected into sensor or actuator channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    SensorStepBias,
    StuckActuator,
    RampDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub channel: usize,
    pub magnitude: f64,
    pub start_step: usize,
    pub duration: usize,
}

impl FaultSpec {
    pub fn active_at(&self, t: usize) -> bool {
        t >= self.start_step && t < self.start_step + self.duration
    }
}

/// Memory for stateful fault kinds (a stuck actuator must remember the value
/// it observed when the fault began).
#[derive(Debug, Default, Clone)]
pub struct FaultMemory {
    frozen: Option<f64>,
}

/// Apply a fault to a channel vector at step `t`. Outside the active window
/// this is the identity.
pub fn apply_fault(vec: &[f64], f: &FaultSpec, t: usize, mem: &mut FaultMemory) -> Result<Vec<f64>> {
    if f.channel >= vec.len() {
        return Err(CoreError::InvalidChannel {
            channel: f.channel,
            n_channels: vec.len(),
        });
    }
    let mut out = vec.to_vec();
    if !f.active_at(t) {
        return Ok(out);
    }
    match f.kind {
        FaultKind::SensorStepBias => out[f.channel] += f.magnitude,
        FaultKind::StuckActuator => {
            let frozen = *mem.frozen.get_or_insert(vec[f.channel]);
            out[f.channel] = frozen;
        }
        FaultKind::RampDrift => {
            out[f.channel] += f.magnitude * (t - f.start_step) as f64 / f.duration as f64;
        }
    }
    Ok(out)
}

/// Right-hand sides of the reactant mass balance and the reactor energy
/// balance, with actuator commands substituting for the corresponding
/// parameters. Returns `(dC_A/dt, dT/dt)`.
pub fn physics_derivatives(s: &ProcessState, a: &ActuatorVector, p: &PlantParams) -> Result<(f64, f64)> {
    physics_derivatives_disturbed(s, a, p, 0.0)
}

/// Same balances with a feed-temperature disturbance offset.
pub fn physics_derivatives_disturbed(
    s: &ProcessState,
    a: &ActuatorVector,
    p: &PlantParams,
    d_tf: f64,
) -> Result<(f64, f64)> {
    if s.t < 100.0 {
        return Err(CoreError::NonFinite(format!(
            "temperature {} K below the Arrhenius guard (state C_A={}, T={})",
            s.t, s.c_a, s.t
        )));
    }
    let arg = -p.e_over_r / s.t;
    if arg > 700.0 {
        return Err(CoreError::NonFinite(format!(
            "Arrhenius exponent {arg} overflows (state C_A={}, T={})",
            s.c_a, s.t
        )));
    }
    let rate = p.k0 * arg.exp();
    let dilution = a.f_cmd / p.volume;
    let d_ca = dilution * (a.caf_cmd - s.c_a) - rate * s.c_a;
    let d_t = dilution * (p.t_f + d_tf - s.t) + (-p.dh / p.rho_cp) * rate * s.c_a
        - (p.ua / (p.rho_cp * p.volume)) * (s.t - a.tc_cmd);
    if !d_ca.is_finite() || !d_t.is_finite() {
        return Err(CoreError::NonFinite(format!(
            "plant derivatives at C_A={}, T={}",
            s.c_a, s.t
        )));
    }
    Ok((d_ca, d_t))
}

/// One classical fourth-order Runge-Kutta step for an arbitrary 2-state RHS.
pub fn rk4_general<F>(y: [f64; 2], h: f64, mut rhs: F) -> Result<[f64; 2]>
where
    F: FnMut([f64; 2]) -> Result<[f64; 2]>,
{
    let k1 = rhs(y)?;
    let k2 = rhs([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]])?;
    let k3 = rhs([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]])?;
    let k4 = rhs([y[0] + h * k3[0], y[1] + h * k3[1]])?;
    let out = [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ];
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(CoreError::NonFinite("RK4 intermediate state".into()))
    }
}

/// Result of one integration step. `clamped` records that the raw step drove
/// the concentration negative and it was floored at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk4Step {
    pub state: ProcessState,
    pub clamped: bool,
}

/// Advance the plant by one RK4 step of size `h` minutes.
pub fn step_rk4(s: &ProcessState, a: &ActuatorVector, p: &PlantParams, h: f64) -> Result<Rk4Step> {
    if !(h > 0.0) {
        return Err(CoreError::Invalid(format!("step size must be positive, got {h}")));
    }
    let next = rk4_general([s.c_a, s.t], h, |y| {
        let st = ProcessState { c_a: y[0], t: y[1] };
        physics_derivatives(&st, a, p).map(|(d1, d2)| [d1, d2])
    })?;
    let clamped = next[0] < 0.0;
    Ok(Rk4Step {
        state: ProcessState {
            c_a: next[0].max(0.0),
            t: next[1],
        },
        clamped,
    })
}

/// Noisy readout of the full channel vector:
/// `[C_A, T, Tc_readback, F_readback, CAf_readback]` plus independent
/// Gaussian noise with the given per-channel sigmas.
pub fn observe<R: Rng>(
    s: &ProcessState,
    a: &ActuatorVector,
    noise_sigma: &SensorVec,
    rng: &mut R,
) -> Result<SensorVec> {
    let clean = [s.c_a, s.t, a.tc_cmd, a.f_cmd, a.caf_cmd];
    let mut out = [0.0; SENSOR_CHANNELS];
    for i in 0..SENSOR_CHANNELS {
        if noise_sigma[i] < 0.0 {
            return Err(CoreError::Invalid(format!(
                "noise sigma for channel {i} must be >= 0"
            )));
        }
        out[i] = if noise_sigma[i] == 0.0 {
            clean[i]
        } else {
            let n = Normal::new(clean[i], noise_sigma[i])
                .map_err(|e| CoreError::Invalid(format!("noise distribution: {e}")))?;
            n.sample(rng)
        };
    }
    Ok(out)
}

/// Locate every steady state of the balances under the given actuators by
/// scanning the reduced temperature residual for sign changes and bisecting
/// each bracket. At a steady state the mass balance pins
/// `C_A = (F/V * CAf) / (F/V + k(T))`; substituting into the energy balance
/// leaves a scalar residual in `T`.
pub fn steady_states(p: &PlantParams, a: &ActuatorVector) -> Result<Vec<ProcessState>> {
    let residual = |t: f64| -> Result<f64> {
        let c_a = reduced_concentration(p, a, t)?;
        let st = ProcessState { c_a, t };
        Ok(physics_derivatives(&st, a, p)?.1)
    };
    let (lo, hi, n) = (250.0_f64, 520.0_f64, 2700);
    let step = (hi - lo) / n as f64;
    let mut roots: Vec<f64> = Vec::new();
    let mut prev_t = lo;
    let mut prev_r = residual(lo)?;
    for i in 1..=n {
        let t = lo + i as f64 * step;
        let r = residual(t)?;
        if prev_r == 0.0 {
            roots.push(prev_t);
        } else if prev_r * r < 0.0 {
            let (mut a_t, mut b_t, mut a_r) = (prev_t, t, prev_r);
            for _ in 0..200 {
                let mid = 0.5 * (a_t + b_t);
                let mr = residual(mid)?;
                if a_r * mr <= 0.0 {
                    b_t = mid;
                } else {
                    a_t = mid;
                    a_r = mr;
                }
                if (b_t - a_t).abs() < 1e-12 * b_t.abs() {
                    break;
                }
            }
            roots.push(0.5 * (a_t + b_t));
        }
        prev_t = t;
        prev_r = r;
    }
    roots
        .into_iter()
        .map(|t| {
            let c_a = reduced_concentration(p, a, t)?;
            Ok(ProcessState { c_a, t })
        })
        .collect()
}

/// The stable operating point reached from a cold start (feed concentration
/// at coolant temperature): integrate long enough to settle, then snap to
/// the nearest steady-state root.
pub fn operating_point(p: &PlantParams, a: &ActuatorVector, h: f64) -> Result<ProcessState> {
    let mut s = ProcessState {
        c_a: a.caf_cmd,
        t: a.tc_cmd,
    };
    for _ in 0..4000 {
        s = step_rk4(&s, a, p, h)?.state;
    }
    let roots = steady_states(p, a)?;
    roots
        .into_iter()
        .min_by(|x, y| {
            let dx = (x.t - s.t).abs();
            let dy = (y.t - s.t).abs();
            dx.partial_cmp(&dy).expect("finite root distances")
        })
        .ok_or_else(|| CoreError::Invalid("no steady state found for the configured plant".into()))
}

fn reduced_concentration(p: &PlantParams, a: &ActuatorVector, t: f64) -> Result<f64> {
    if t < 100.0 {
        return Err(CoreError::NonFinite(format!("temperature {t} below guard")));
    }
    let rate = p.k0 * (-p.e_over_r / t).exp();
    let dilution = a.f_cmd / p.volume;
    Ok(dilution * a.caf_cmd / (dilution + rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_kinetics() -> (PlantParams, ActuatorVector) {
        let mut p = PlantParams::benchmark();
        p.k0 = 0.0;
        let a = ActuatorVector {
            tc_cmd: p.t_f,
            f_cmd: p.flow,
            caf_cmd: p.c_af,
        };
        (p, a)
    }

    #[test]
    fn all_terms_vanish_at_trivial_fixed_point() {
        let (p, a) = zero_kinetics();
        let s = ProcessState::new(p.c_af, p.t_f);
        let (d1, d2) = physics_derivatives(&s, &a, &p).unwrap();
        assert_eq!(d1, 0.0);
        assert_eq!(d2, 0.0);
    }

    #[test]
    fn pure_inflow_term() {
        // k0 = 0, C_A = 0, C_Af = 1, F/V = 1 -> dC_A/dt = 1.
        let (mut p, mut a) = zero_kinetics();
        p.flow = 100.0;
        p.volume = 100.0;
        a.f_cmd = 100.0;
        a.caf_cmd = 1.0;
        let s = ProcessState::new(0.0, p.t_f);
        let (d1, _) = physics_derivatives(&s, &a, &p).unwrap();
        assert!((d1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn arrhenius_guard_fires() {
        let p = PlantParams::benchmark();
        let a = ActuatorVector {
            tc_cmd: 300.0,
            f_cmd: 100.0,
            caf_cmd: 1.0,
        };
        let s = ProcessState::new(0.5, 50.0);
        assert!(physics_derivatives(&s, &a, &p).is_err());
    }

    #[test]
    fn trivial_fixed_point_is_stationary_under_rk4() {
        let (p, a) = zero_kinetics();
        let mut s = ProcessState::new(p.c_af, p.t_f);
        for _ in 0..500 {
            let out = step_rk4(&s, &a, &p, 0.05).unwrap();
            assert!(!out.clamped);
            s = out.state;
        }
        assert_eq!(s.c_a, p.c_af);
        assert_eq!(s.t, p.t_f);
    }

    #[test]
    fn benchmark_has_multiple_steady_states() {
        let p = PlantParams::benchmark();
        let a = ActuatorVector {
            tc_cmd: p.t_c,
            f_cmd: p.flow,
            caf_cmd: p.c_af,
        };
        let roots = steady_states(&p, &a).unwrap();
        assert!(!roots.is_empty());
        for r in &roots {
            let (d1, d2) = physics_derivatives(r, &a, &p).unwrap();
            assert!(d1.abs() < 1e-6, "dC_A/dt = {d1} at {r:?}");
            assert!(d2.abs() < 1e-6, "dT/dt = {d2} at {r:?}");
        }
    }

    #[test]
    fn fault_identity_outside_window() {
        let spec = FaultSpec {
            kind: FaultKind::SensorStepBias,
            channel: 1,
            magnitude: 0.5,
            start_step: 10,
            duration: 5,
        };
        let v = [1.0, 2.0, 3.0];
        let mut mem = FaultMemory::default();
        assert_eq!(apply_fault(&v, &spec, 3, &mut mem).unwrap(), v.to_vec());
        assert_eq!(apply_fault(&v, &spec, 15, &mut mem).unwrap(), v.to_vec());
        let hit = apply_fault(&v, &spec, 12, &mut mem).unwrap();
        assert_eq!(hit, vec![1.0, 2.5, 3.0]);
    }

    #[test]
    fn ramp_drift_formula() {
        let spec = FaultSpec {
            kind: FaultKind::RampDrift,
            channel: 0,
            magnitude: 2.0,
            start_step: 4,
            duration: 8,
        };
        let v = [0.0];
        let mut mem = FaultMemory::default();
        let at_last = apply_fault(&v, &spec, 4 + 7, &mut mem).unwrap();
        assert!((at_last[0] - 2.0 * 7.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn stuck_actuator_freezes_first_seen_value() {
        let spec = FaultSpec {
            kind: FaultKind::StuckActuator,
            channel: 0,
            magnitude: 0.0,
            start_step: 2,
            duration: 4,
        };
        let mut mem = FaultMemory::default();
        let first = apply_fault(&[7.5], &spec, 2, &mut mem).unwrap();
        assert_eq!(first, vec![7.5]);
        let later = apply_fault(&[9.9], &spec, 4, &mut mem).unwrap();
        assert_eq!(later, vec![7.5]);
    }

    #[test]
    fn invalid_channel_rejected() {
        let spec = FaultSpec {
            kind: FaultKind::SensorStepBias,
            channel: 9,
            magnitude: 1.0,
            start_step: 0,
            duration: 1,
        };
        let mut mem = FaultMemory::default();
        assert!(apply_fault(&[1.0, 2.0], &spec, 0, &mut mem).is_err());
    }

    #[test]
    fn observe_exact_with_zero_sigma() {
        use rand::SeedableRng;
        let p = PlantParams::benchmark();
        let s = ProcessState::new(0.5, 350.0);
        let a = ActuatorVector {
            tc_cmd: p.t_c,
            f_cmd: p.flow,
            caf_cmd: p.c_af,
        };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let v = observe(&s, &a, &[0.0; 5], &mut rng).unwrap();
        assert_eq!(v, [0.5, 350.0, 300.0, 100.0, 1.0]);
    }

    #[test]
    fn observe_deterministic_for_same_rng_state() {
        use rand::SeedableRng;
        let p = PlantParams::benchmark();
        let s = ProcessState::new(0.5, 350.0);
        let a = ActuatorVector {
            tc_cmd: p.t_c,
            f_cmd: p.flow,
            caf_cmd: p.c_af,
        };
        let sig = [0.01, 0.5, 0.1, 0.1, 0.003];
        let mut r1 = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let mut r2 = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let v1 = observe(&s, &a, &sig, &mut r1).unwrap();
        let v2 = observe(&s, &a, &sig, &mut r2).unwrap();
        assert_eq!(v1, v2);
    }
}
