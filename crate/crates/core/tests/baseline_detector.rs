//! Baseline defender quality on freshly generated data: false positives on
//! held-out normal windows, recall on injected faults, calibration behavior.

use arc_core::blue::{fit_baseline, BlueConfig, MemberMask, SensorWindow, WindowLabel, WindowOrigin};
use arc_core::data::{generate_step_bias_windows, generate_normal_windows, DataGenConfig};
use arc_core::plant::sim::SimConfig;

fn setup() -> (
    arc_core::blue::DetectorEnsemble,
    arc_core::blue::BaselineReport,
    Vec<SensorWindow>,
    Vec<SensorWindow>,
) {
    let sim = SimConfig::benchmark();
    let data_cfg = DataGenConfig::default();
    let normal = generate_normal_windows(&sim, &data_cfg, 1001).expect("normal data");
    let faults = generate_step_bias_windows(&sim, &data_cfg, 2002).expect("fault data");
    let cfg = BlueConfig::default();
    let (ens, report) = fit_baseline(&normal, &faults, &cfg, 42).expect("baseline fit");
    let fresh_normal = generate_normal_windows(&sim, &data_cfg, 777).expect("fresh normal");
    (ens, report, fresh_normal, faults)
}

#[test]
fn baseline_quality_and_calibration() {
    let (ens, report, fresh_normal, faults) = setup();

    // Threshold quantile 0.995 keeps held-out normal FPR within [0, 0.015].
    let mut fp = 0usize;
    for w in &fresh_normal {
        if ens.score(w).unwrap().fused > ens.threshold {
            fp += 1;
        }
    }
    let fpr = fp as f64 / fresh_normal.len() as f64;
    assert!(fpr <= 0.015, "fresh-normal FPR {fpr} exceeds 0.015");

    // 5-sigma step-bias faults are caught nearly always.
    let recall = report.fault_recall.expect("fault windows were provided");
    assert!(recall >= 0.95, "fault recall {recall} below 0.95");

    // Probability-integral-transform of the empirical CDF: with a single
    // member active, the fused score equals that member's calibrated score
    // and is approximately uniform on normal windows (mean in [0.4, 0.6]).
    for member in 0..3 {
        let mut masked = ens.clone();
        masked.member_mask = MemberMask {
            lstm: member == 0,
            ae: member == 1,
            iforest: member == 2,
        };
        let take = fresh_normal.len().min(1000);
        let mut mean = 0.0;
        for w in fresh_normal.iter().take(take) {
            mean += masked.score(w).unwrap().fused;
        }
        mean /= take as f64;
        assert!(
            (0.4..=0.6).contains(&mean),
            "member {member} calibrated mean {mean} outside [0.4, 0.6] over {take} windows"
        );
    }
    // Max-fusion over all three members can only shift the mean upward.
    let take = fresh_normal.len().min(1000);
    let mut fused_mean = 0.0;
    for w in fresh_normal.iter().take(take) {
        fused_mean += ens.score(w).unwrap().fused;
    }
    fused_mean /= take as f64;
    assert!(
        (0.4..=0.8).contains(&fused_mean),
        "full-ensemble fused mean {fused_mean} outside [0.4, 0.8]"
    );

    // Masking members never raises the fused score.
    let full = ens.clone();
    let mut lstm_only = ens.clone();
    lstm_only.member_mask = MemberMask {
        lstm: true,
        ae: false,
        iforest: false,
    };
    for w in fresh_normal.iter().take(50).chain(faults.iter().take(50)) {
        let f_full = full.score(w).unwrap();
        let f_sub = lstm_only.score(w).unwrap();
        assert!(f_sub.fused <= f_full.fused + 1e-15);
        assert_eq!(f_sub.fused, f_sub.calibrated[0]);
    }
}

#[test]
fn empty_fault_set_is_fine_and_empty_normal_errors() {
    let sim = SimConfig::benchmark();
    let mut data_cfg = DataGenConfig::default();
    data_cfg.n_normal_episodes = 3;
    let normal = generate_normal_windows(&sim, &data_cfg, 5).unwrap();
    let cfg = BlueConfig {
        train_epochs: 2,
        ..BlueConfig::default()
    };
    let (ens, report) = fit_baseline(&normal, &[], &cfg, 7).expect("faults are validation-only");
    assert!(report.fault_recall.is_none());
    assert!(ens.threshold > 0.0 && ens.threshold < 1.0);
    assert!(fit_baseline(&[], &[], &cfg, 7).is_err());
}

#[test]
fn ensemble_round_trips_through_json() {
    let sim = SimConfig::benchmark();
    let mut data_cfg = DataGenConfig::default();
    data_cfg.n_normal_episodes = 3;
    let normal = generate_normal_windows(&sim, &data_cfg, 5).unwrap();
    let cfg = BlueConfig {
        train_epochs: 2,
        ..BlueConfig::default()
    };
    let (ens, _) = fit_baseline(&normal, &[], &cfg, 7).unwrap();
    let back = arc_core::blue::DetectorEnsemble::from_json(&ens.to_json()).unwrap();
    let w = SensorWindow::new(
        normal[0].rows.clone(),
        WindowLabel::Normal,
        WindowOrigin::ZNormal,
    );
    let a = ens.score(&w).unwrap();
    let b = back.score(&w).unwrap();
    assert_eq!(a.fused.to_bits(), b.fused.to_bits());
    assert_eq!(a.raw, b.raw);
}
