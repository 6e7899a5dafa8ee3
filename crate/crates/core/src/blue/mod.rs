//! The defender ensemble and its parts.

pub mod calibrate;
pub mod ensemble;
pub mod iforest;
pub mod members;
pub mod window;

pub use calibrate::Calibrator;
pub use ensemble::{
    fit_baseline, AnomalyScore, BaselineReport, BlueConfig, DetectorEnsemble, HardeningGrads,
    MemberMask, MEMBER_COUNT, MEMBER_NAMES,
};
pub use iforest::{ForestConfig, IsolationForest};
pub use window::{SensorWindow, WindowLabel, WindowOrigin, Zscore};
