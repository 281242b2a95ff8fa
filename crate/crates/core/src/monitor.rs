//! Online sequential degradation monitor.
//!
//! Consumes one downsampled sample at a time. Once `h_max` whole episodes
//! have been seen, every test-point runs the full `(horizon, statistic)`
//! battery against the tuned threshold and the first p-value below it fires
//! a one-shot detection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bfar::{TestResult, TunedMonitor};
use crate::episodic_model::decompose_index;
use crate::error::{Error, Result};
use crate::statistics::Episode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// Detection time in downsampled steps, `k * T + tau`.
    pub t: usize,
    /// Detection time in raw steps, `t * d`.
    pub raw_t: usize,
    /// Completed episodes before the detecting one.
    pub episode: usize,
    /// Offset within the detecting episode.
    pub offset: usize,
    pub horizon: usize,
    pub statistic: String,
    pub p: f64,
}

/// Result of one test-point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub t: usize,
    pub raw_t: usize,
    pub tests: Vec<TestResult>,
    pub fired: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionRecord>,
}

impl TestPoint {
    pub fn min_p(&self) -> f64 {
        self.tests.iter().map(|r| r.p).fold(1.0, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct MonitorState<'m> {
    tuned: &'m TunedMonitor,
    history: VecDeque<Episode>,
    current: Vec<f64>,
    pending_raw: Vec<f64>,
    t: usize,
    fired: Option<DetectionRecord>,
}

impl<'m> MonitorState<'m> {
    pub fn new(tuned: &'m TunedMonitor) -> Self {
        let t = tuned.params.episode_len();
        Self {
            tuned,
            history: VecDeque::with_capacity(tuned.plan.h_max() + 1),
            current: Vec::with_capacity(t),
            pending_raw: Vec::with_capacity(tuned.params.downsample_factor()),
            t: 0,
            fired: None,
        }
    }

    pub fn tuned(&self) -> &'m TunedMonitor {
        self.tuned
    }

    /// Downsampled steps ingested so far.
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn fired(&self) -> Option<&DetectionRecord> {
        self.fired.as_ref()
    }

    /// Clears everything, including the warm-up.
    pub fn reset(&mut self) {
        self.history.clear();
        self.current.clear();
        self.pending_raw.clear();
        self.t = 0;
        self.fired = None;
    }

    /// Samples currently buffered (whole past episodes plus current partial).
    pub fn buffered(&self) -> usize {
        self.history.len() * self.tuned.params.episode_len() + self.current.len()
    }

    /// Feeds one downsampled sample; returns the test-point result if `t` is one.
    pub fn observe(&mut self, sample: f64) -> Result<Option<TestPoint>> {
        if self.fired.is_some() {
            return Err(Error::TerminalState);
        }
        if !sample.is_finite() {
            return Err(Error::data(format!("non-finite sample at step {}", self.t + 1)));
        }
        let params = &self.tuned.params;
        let plan = &self.tuned.plan;
        let episode_len = params.episode_len();
        self.t += 1;
        self.current.push(sample);
        let idx = decompose_index(self.t, episode_len)?;

        let mut point = None;
        if idx.k >= plan.h_max() && idx.tau % plan.spacing(episode_len) == 0 {
            let history: Vec<&Episode> = self.history.iter().collect();
            let tests = self.tuned.battery(&history, &self.current)?;
            let d = params.downsample_factor();
            let detection = tests
                .iter()
                .filter(|r| r.p < self.tuned.p_threshold)
                .min_by(|a, b| a.p.total_cmp(&b.p))
                .map(|r| DetectionRecord {
                    t: self.t,
                    raw_t: self.t * d,
                    episode: idx.k,
                    offset: idx.tau,
                    horizon: r.h,
                    statistic: r.stat.clone(),
                    p: r.p,
                });
            self.fired = detection.clone();
            point = Some(TestPoint {
                t: self.t,
                raw_t: self.t * d,
                fired: detection.is_some(),
                tests,
                detection,
            });
        }

        if idx.tau == episode_len {
            let values = std::mem::replace(&mut self.current, Vec::with_capacity(episode_len));
            self.history.push_back(Episode::new(values, params)?);
            while self.history.len() > plan.h_max() {
                self.history.pop_front();
            }
        }
        Ok(point)
    }

    /// Feeds one downsampled sample; returns the detection if it fired.
    pub fn monitor_step(&mut self, sample: f64) -> Result<Option<DetectionRecord>> {
        Ok(self.observe(sample)?.and_then(|p| p.detection))
    }

    /// Feeds one raw sample, averaging every `d` of them into one step.
    pub fn observe_raw(&mut self, sample: f64) -> Result<Option<TestPoint>> {
        if self.fired.is_some() {
            return Err(Error::TerminalState);
        }
        if !sample.is_finite() {
            return Err(Error::data("non-finite raw sample"));
        }
        let d = self.tuned.params.downsample_factor();
        self.pending_raw.push(sample);
        if self.pending_raw.len() < d {
            return Ok(None);
        }
        let mean = self.pending_raw.iter().sum::<f64>() / d as f64;
        self.pending_raw.clear();
        self.observe(mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub min_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub detection: Option<DetectionRecord>,
    pub trace: Vec<TracePoint>,
}

/// Feeds downsampled `samples` in order, stopping at the first detection.
pub fn run_block(state: &mut MonitorState<'_>, samples: &[f64]) -> Result<BlockReport> {
    let mut trace = Vec::new();
    for &x in samples {
        if let Some(point) = state.observe(x)? {
            trace.push(TracePoint {
                t: point.t,
                min_p: point.min_p(),
            });
            if let Some(det) = point.detection {
                return Ok(BlockReport {
                    detection: Some(det),
                    trace,
                });
            }
        }
    }
    Ok(BlockReport { detection: None, trace })
}
