//! The defender: LSTM predictor + autoencoder + isolation forest with
//! per-member calibration, max-fusion and a quantile threshold. Hardening
//! applies a hinge loss on attack windows to the two differentiable members;
//! the forest only ever refits on normal data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::blue::calibrate::Calibrator;
use crate::blue::iforest::{ForestConfig, IsolationForest};
use crate::blue::members::{AeMember, LstmMember};
use crate::blue::window::{SensorWindow, WindowLabel, Zscore};
use crate::error::{CoreError, Result};
use crate::nn::{adam_step, AdamHyper, AdamState, NodeId, ParamVector, Tape};
use crate::plant::{SensorVec, SENSOR_CHANNELS};

pub const MEMBER_COUNT: usize = 3;
pub const MEMBER_NAMES: [&str; MEMBER_COUNT] = ["lstm", "autoencoder", "iforest"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberMask {
    pub lstm: bool,
    pub ae: bool,
    pub iforest: bool,
}

impl Default for MemberMask {
    fn default() -> Self {
        MemberMask {
            lstm: true,
            ae: true,
            iforest: true,
        }
    }
}

impl MemberMask {
    pub fn as_array(&self) -> [bool; MEMBER_COUNT] {
        [self.lstm, self.ae, self.iforest]
    }

    pub fn any(&self) -> bool {
        self.lstm || self.ae || self.iforest
    }
}

/// Raw member scores, their calibrated images and the max-fused result.
#[derive(Debug, Clone, Copy)]
pub struct AnomalyScore {
    pub raw: [f64; MEMBER_COUNT],
    pub calibrated: [f64; MEMBER_COUNT],
    pub fused: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlueConfig {
    pub window_len: usize,
    pub lstm_hidden: usize,
    pub ae_hidden: usize,
    pub ae_bottleneck: usize,
    /// Threshold quantile over held-out fused normal scores.
    pub quantile: f64,
    /// Consecutive over-threshold steps required to raise an alarm.
    pub consecutive: usize,
    /// Hardening margin as a multiple of the median normal raw error.
    pub margin_factor: f64,
    pub forest: ForestConfig,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_lr: f64,
}

impl Default for BlueConfig {
    fn default() -> Self {
        BlueConfig {
            window_len: 12,
            lstm_hidden: 16,
            ae_hidden: 24,
            ae_bottleneck: 6,
            quantile: 0.995,
            consecutive: 3,
            margin_factor: 3.0,
            forest: ForestConfig::default(),
            train_epochs: 30,
            train_batch: 16,
            train_lr: 0.004,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorEnsemble {
    pub cfg: BlueConfig,
    pub zscore: Zscore,
    pub lstm_params: ParamVector,
    pub ae_params: ParamVector,
    pub iforest: IsolationForest,
    pub calibrators: [Calibrator; MEMBER_COUNT],
    pub threshold: f64,
    pub member_mask: MemberMask,
    /// Hinge margins for the two differentiable members.
    pub margins: [f64; 2],
}

/// Gradients of the hardening loss for both differentiable members.
#[derive(Debug, Clone)]
pub struct HardeningGrads {
    pub loss: f64,
    pub lstm: Vec<f64>,
    pub ae: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BaselineReport {
    pub heldout_fpr: f64,
    pub fault_recall: Option<f64>,
    pub train_windows: usize,
    pub calib_windows: usize,
}

impl DetectorEnsemble {
    fn lstm_member(&self) -> LstmMember {
        LstmMember::new(self.cfg.lstm_hidden)
    }

    fn ae_member(&self) -> AeMember {
        AeMember::new(self.cfg.window_len, self.cfg.ae_bottleneck, self.cfg.ae_hidden)
    }

    fn standardized_rows(&self, w: &SensorWindow) -> Vec<SensorVec> {
        w.rows.iter().map(|r| self.zscore.apply(r)).collect()
    }

    /// Raw scores `[lstm, autoencoder, iforest]`.
    pub fn raw_scores(&self, w: &SensorWindow) -> Result<[f64; MEMBER_COUNT]> {
        w.validate(self.cfg.window_len)?;
        let zrows = self.standardized_rows(w);

        let lstm = self.lstm_member();
        let mut tape = Tape::new(&self.lstm_params);
        let row_nodes: Vec<NodeId> = zrows.iter().map(|r| tape.constant(r)).collect();
        let raw_node = lstm.raw_node(&mut tape, &self.lstm_params, &row_nodes)?;
        let lstm_raw = tape.scalar(raw_node);

        let ae = self.ae_member();
        let mut tape = Tape::new(&self.ae_params);
        let flat: Vec<f64> = zrows.iter().flatten().copied().collect();
        let flat_node = tape.constant(&flat);
        let raw_node = ae.raw_node(&mut tape, &self.ae_params, flat_node)?;
        let ae_raw = tape.scalar(raw_node);

        let features = self.zscore.forest_features(w);
        let forest_raw = self.iforest.score(&features)?;

        Ok([lstm_raw, ae_raw, forest_raw])
    }

    /// Full scoring pipeline: raw, calibrated, fused (max over active members).
    pub fn score(&self, w: &SensorWindow) -> Result<AnomalyScore> {
        if !self.member_mask.any() {
            return Err(CoreError::Invalid("every ensemble member is masked off".into()));
        }
        let raw = self.raw_scores(w)?;
        let mut calibrated = [0.0; MEMBER_COUNT];
        for i in 0..MEMBER_COUNT {
            calibrated[i] = self.calibrators[i].calibrate(raw[i]);
        }
        let mask = self.member_mask.as_array();
        let fused = calibrated
            .iter()
            .zip(mask)
            .filter(|(_, on)| *on)
            .map(|(c, _)| *c)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(AnomalyScore {
            raw,
            calibrated,
            fused,
        })
    }

    /// Fused score for each sliding window over a sensor series. Entry `k`
    /// scores the window ending at step `k` (the first `window_len - 1`
    /// entries are zero: not enough history yet).
    pub fn fused_series(&self, rows: &[SensorVec]) -> Result<Vec<f64>> {
        let l = self.cfg.window_len;
        let mut out = vec![0.0; rows.len()];
        if rows.len() < l {
            return Ok(out);
        }
        for end in (l - 1)..rows.len() {
            let w = SensorWindow::new(
                rows[end + 1 - l..=end].to_vec(),
                WindowLabel::Normal,
                crate::blue::window::WindowOrigin::ZNormal,
            );
            out[end] = self.score(&w)?.fused;
        }
        Ok(out)
    }

    /// First step at which `consecutive` fused scores in a row exceed the
    /// threshold, if any.
    pub fn first_alarm(&self, fused: &[f64]) -> Option<usize> {
        let need = self.cfg.consecutive;
        let mut run = 0usize;
        for (i, &s) in fused.iter().enumerate() {
            if s > self.threshold {
                run += 1;
                if run >= need {
                    return Some(i);
                }
            } else {
                run = 0;
            }
        }
        None
    }

    /// Hardening loss over a labeled batch. Normal windows contribute their
    /// self-supervised error; attack and fault windows contribute
    /// `max(0, margin - raw_error)` per differentiable member. The forest is
    /// not differentiable and takes no part.
    pub fn hardening_loss(&self, batch: &[SensorWindow]) -> Result<HardeningGrads> {
        if batch.is_empty() {
            return Err(CoreError::Empty("hardening batch".into()));
        }
        let lstm = self.lstm_member();
        let ae = self.ae_member();
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut lstm_grads = vec![0.0; self.lstm_params.len()];
        let mut ae_grads = vec![0.0; self.ae_params.len()];

        for w in batch {
            w.validate(self.cfg.window_len)?;
            let zrows = self.standardized_rows(w);
            let attack = !matches!(w.label, WindowLabel::Normal);

            let mut tape = Tape::new(&self.lstm_params);
            let row_nodes: Vec<NodeId> = zrows.iter().map(|r| tape.constant(r)).collect();
            let raw = lstm.raw_node(&mut tape, &self.lstm_params, &row_nodes)?;
            let loss = if attack {
                let neg = tape.scale(raw, -1.0);
                let shifted = tape.offset(neg, self.margins[0]);
                tape.relu(shifted)
            } else {
                raw
            };
            total += tape.scalar(loss) * scale;
            let g = tape.backward(loss)?;
            for (acc, gi) in lstm_grads.iter_mut().zip(&g.params) {
                *acc += gi * scale;
            }

            let mut tape = Tape::new(&self.ae_params);
            let flat: Vec<f64> = zrows.iter().flatten().copied().collect();
            let flat_node = tape.constant(&flat);
            let raw = ae.raw_node(&mut tape, &self.ae_params, flat_node)?;
            let loss = if attack {
                let neg = tape.scale(raw, -1.0);
                let shifted = tape.offset(neg, self.margins[1]);
                tape.relu(shifted)
            } else {
                raw
            };
            total += tape.scalar(loss) * scale;
            let g = tape.backward(loss)?;
            for (acc, gi) in ae_grads.iter_mut().zip(&g.params) {
                *acc += gi * scale;
            }
        }
        Ok(HardeningGrads {
            loss: total,
            lstm: lstm_grads,
            ae: ae_grads,
        })
    }

    /// Combined raw score of the active differentiable members plus its
    /// gradient with respect to every window entry (in original channel
    /// units). The forest is excluded: it has no gradient.
    pub fn differentiable_raw_and_saliency(&self, w: &SensorWindow) -> Result<(f64, Vec<f64>)> {
        if !self.member_mask.lstm && !self.member_mask.ae {
            return Err(CoreError::Invalid(
                "saliency needs at least one differentiable member active".into(),
            ));
        }
        w.validate(self.cfg.window_len)?;
        let zrows = self.standardized_rows(w);
        let n = self.cfg.window_len * SENSOR_CHANNELS;
        let mut combined = 0.0;
        let mut grad = vec![0.0; n];

        if self.member_mask.lstm {
            let lstm = self.lstm_member();
            let mut tape = Tape::new(&self.lstm_params);
            let row_nodes: Vec<NodeId> = zrows.iter().map(|r| tape.input(r)).collect();
            let raw = lstm.raw_node(&mut tape, &self.lstm_params, &row_nodes)?;
            combined += tape.scalar(raw);
            let g = tape.backward(raw)?;
            for (t, rg) in g.inputs.iter().enumerate() {
                for c in 0..SENSOR_CHANNELS {
                    grad[t * SENSOR_CHANNELS + c] += rg[c] / self.zscore.std[c];
                }
            }
        }
        if self.member_mask.ae {
            let ae = self.ae_member();
            let mut tape = Tape::new(&self.ae_params);
            let flat: Vec<f64> = zrows.iter().flatten().copied().collect();
            let flat_node = tape.input(&flat);
            let raw = ae.raw_node(&mut tape, &self.ae_params, flat_node)?;
            combined += tape.scalar(raw);
            let g = tape.backward(raw)?;
            for (i, gi) in g.inputs[0].iter().enumerate() {
                grad[i] += gi / self.zscore.std[i % SENSOR_CHANNELS];
            }
        }
        Ok((combined, grad))
    }

    /// Refit the isolation forest on normal windows only. Windows carrying
    /// an attack or fault label are rejected outright.
    pub fn refit_iforest(&mut self, z_normal: &[SensorWindow], seed: u64) -> Result<()> {
        if z_normal.is_empty() {
            return Err(CoreError::Empty("forest refit data".into()));
        }
        if z_normal.iter().any(|w| w.label != WindowLabel::Normal) {
            return Err(CoreError::Invalid(
                "non-normal window offered to the isolation forest".into(),
            ));
        }
        let feats: Vec<Vec<f64>> = z_normal.iter().map(|w| self.zscore.forest_features(w)).collect();
        self.iforest = IsolationForest::fit(&feats, &self.cfg.forest, seed)?;
        Ok(())
    }

    /// Rebuild the calibration tables, threshold and hardening margins from
    /// held-out normal windows. Required after every hardening phase.
    pub fn recalibrate(&mut self, held_out: &[SensorWindow]) -> Result<()> {
        if held_out.is_empty() {
            return Err(CoreError::Empty("recalibration data".into()));
        }
        let mut raws: [Vec<f64>; MEMBER_COUNT] = Default::default();
        for w in held_out {
            let r = self.raw_scores(w)?;
            for i in 0..MEMBER_COUNT {
                raws[i].push(r[i]);
            }
        }
        for i in 0..MEMBER_COUNT {
            self.calibrators[i] = Calibrator::fit(&raws[i])?;
        }
        for m in 0..2 {
            self.margins[m] = self.cfg.margin_factor * median(&raws[m]);
        }
        let mut fused: Vec<f64> = Vec::with_capacity(held_out.len());
        for w in held_out {
            fused.push(self.score(w)?.fused);
        }
        self.threshold = quantile(&mut fused, self.cfg.quantile).clamp(1e-9, 1.0 - 1e-9);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Concatenated differentiable parameters (LSTM then autoencoder); the
    /// vector exchanged by federation clients.
    pub fn differentiable_params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.lstm_params.len() + self.ae_params.len());
        out.extend_from_slice(self.lstm_params.data());
        out.extend_from_slice(self.ae_params.data());
        out
    }

    pub fn apply_differentiable_delta(&mut self, delta: &[f64]) -> Result<()> {
        let nl = self.lstm_params.len();
        if delta.len() != nl + self.ae_params.len() {
            return Err(CoreError::DimMismatch(format!(
                "delta length {} vs parameter count {}",
                delta.len(),
                nl + self.ae_params.len()
            )));
        }
        for (p, d) in self.lstm_params.data_mut().iter_mut().zip(&delta[..nl]) {
            *p += d;
        }
        for (p, d) in self.ae_params.data_mut().iter_mut().zip(&delta[nl..]) {
            *p += d;
        }
        Ok(())
    }
}

/// Train the initial defender on normal data; fault windows are used only to
/// report recall, never to fit anything.
pub fn fit_baseline(
    z_normal: &[SensorWindow],
    z_fault: &[SensorWindow],
    cfg: &BlueConfig,
    seed: u64,
) -> Result<(DetectorEnsemble, BaselineReport)> {
    if z_normal.is_empty() {
        return Err(CoreError::Empty("baseline training needs normal windows".into()));
    }
    for w in z_normal {
        w.validate(cfg.window_len)?;
    }
    // Deterministic 2:1 train/calibration split.
    let mut train: Vec<&SensorWindow> = Vec::new();
    let mut calib: Vec<SensorWindow> = Vec::new();
    for (i, w) in z_normal.iter().enumerate() {
        if i % 3 == 2 {
            calib.push(w.clone());
        } else {
            train.push(w);
        }
    }
    if calib.is_empty() {
        calib.push(z_normal[z_normal.len() - 1].clone());
    }
    let train_owned: Vec<SensorWindow> = train.iter().map(|w| (*w).clone()).collect();
    let zscore = Zscore::fit(&train_owned)?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let lstm = LstmMember::new(cfg.lstm_hidden);
    let ae = AeMember::new(cfg.window_len, cfg.ae_bottleneck, cfg.ae_hidden);
    let lstm_params = lstm.build_params(&mut rng);
    let ae_params = ae.build_params(&mut rng);

    let mut ens = DetectorEnsemble {
        cfg: *cfg,
        zscore,
        lstm_params,
        ae_params,
        iforest: IsolationForest::fit(
            &train_owned.iter().map(|w| zscore.forest_features(w)).collect::<Vec<_>>(),
            &cfg.forest,
            rng.random::<u64>(),
        )?,
        calibrators: [
            Calibrator::fit(&[0.0])?,
            Calibrator::fit(&[0.0])?,
            Calibrator::fit(&[0.0])?,
        ],
        threshold: 0.5,
        member_mask: MemberMask::default(),
        margins: [1.0, 1.0],
    };

    train_members(&mut ens, &train_owned, cfg, rng.random::<u64>())?;
    ens.recalibrate(&calib)?;

    let mut fp = 0usize;
    for w in &calib {
        if ens.score(w)?.fused > ens.threshold {
            fp += 1;
        }
    }
    let mut report = BaselineReport {
        heldout_fpr: fp as f64 / calib.len() as f64,
        fault_recall: None,
        train_windows: train_owned.len(),
        calib_windows: calib.len(),
    };
    if !z_fault.is_empty() {
        let mut caught = 0usize;
        for w in z_fault {
            if ens.score(w)?.fused > ens.threshold {
                caught += 1;
            }
        }
        report.fault_recall = Some(caught as f64 / z_fault.len() as f64);
    }
    Ok((ens, report))
}

/// Self-supervised minibatch training of both differentiable members.
fn train_members(
    ens: &mut DetectorEnsemble,
    train: &[SensorWindow],
    cfg: &BlueConfig,
    seed: u64,
) -> Result<()> {
    let lstm = LstmMember::new(cfg.lstm_hidden);
    let ae = AeMember::new(cfg.window_len, cfg.ae_bottleneck, cfg.ae_hidden);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let hyper = AdamHyper::with_lr(cfg.train_lr);
    let mut lstm_opt = AdamState::new(ens.lstm_params.len());
    let mut ae_opt = AdamState::new(ens.ae_params.len());

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.train_epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(cfg.train_batch) {
            let scale = 1.0 / chunk.len() as f64;
            let mut lstm_grads = vec![0.0; ens.lstm_params.len()];
            let mut ae_grads = vec![0.0; ens.ae_params.len()];
            for &i in chunk {
                let zrows: Vec<SensorVec> =
                    train[i].rows.iter().map(|r| ens.zscore.apply(r)).collect();

                let mut tape = Tape::new(&ens.lstm_params);
                let nodes: Vec<NodeId> = zrows.iter().map(|r| tape.constant(r)).collect();
                let raw = lstm.raw_node(&mut tape, &ens.lstm_params, &nodes)?;
                let g = tape.backward(raw)?;
                for (acc, gi) in lstm_grads.iter_mut().zip(&g.params) {
                    *acc += gi * scale;
                }

                let mut tape = Tape::new(&ens.ae_params);
                let flat: Vec<f64> = zrows.iter().flatten().copied().collect();
                let fnode = tape.constant(&flat);
                let raw = ae.raw_node(&mut tape, &ens.ae_params, fnode)?;
                let g = tape.backward(raw)?;
                for (acc, gi) in ae_grads.iter_mut().zip(&g.params) {
                    *acc += gi * scale;
                }
            }
            adam_step(&mut ens.lstm_params, &lstm_grads, &mut lstm_opt, &hyper)?;
            adam_step(&mut ens.ae_params, &ae_grads, &mut ae_opt, &hyper)?;
        }
    }
    Ok(())
}

fn shuffle<R: Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    if v.is_empty() {
        return 0.0;
    }
    if v.len() % 2 == 1 {
        v[v.len() / 2]
    } else {
        0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
    }
}

pub(crate) fn quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        values[lo]
    } else {
        let frac = pos - lo as f64;
        values[lo] * (1.0 - frac) + values[hi] * frac
    }
}
