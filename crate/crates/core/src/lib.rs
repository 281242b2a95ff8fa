//! Degradation monitoring for episodic signals.
//!
//! An episodic signal is a stream cut into length-`T` episodes that are
//! i.i.d. across episodes but arbitrarily correlated within one. The crate
//! estimates the per-episode mean and covariance from reference data, tests
//! windows of the stream with covariance-aware statistics against an
//! episode-level bootstrap, and runs them sequentially with a false-alarm
//! rate calibrated by simulating the whole sequential procedure.

mod error;
mod par;
pub mod rng;

pub mod bfar;
#[cfg(feature = "cli")]
pub mod cli_io;
pub mod episodic_model;
pub mod individual_test;
pub mod monitor;
pub mod statistics;
pub mod synthetic_lab;

pub use bfar::{bfar_tune, far_verify, MonitorPlan, TestResult, TunedMonitor};
pub use episodic_model::{decompose_index, downsample, EpisodeParams, ReferenceDataset};
pub use error::{Error, Result};
pub use individual_test::{individual_test, p_value, BootstrapStore, ReferenceBank, TestOutcome};
pub use monitor::{run_block, DetectionRecord, MonitorState, TestPoint};
pub use statistics::{SignalWindow, StatisticKind};
pub use synthetic_lab::{Scenario, ScenarioKind};
