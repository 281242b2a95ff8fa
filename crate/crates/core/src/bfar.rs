//! Bootstrap for false-alarm-rate control (BFAR).
//!
//! Simulates complete sequential tests on resampled H0 episodes and picks the
//! per-test p-value threshold so that only `alpha0` of the simulated runs
//! raise an alarm within `h_tilde` episodes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::episodic_model::{EpisodeParams, ReferenceDataset};
use crate::error::{Error, Result};
use crate::individual_test::{p_value, quantile, BootstrapStore, ReferenceBank};
use crate::monitor::{run_block, MonitorState};
use crate::par::map_indices;
use crate::rng::{substream, Domain};
use crate::statistics::{evaluate, Episode, StatisticKind, WindowView};

/// Everything the sequential test needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorPlan {
    pub statistics: Vec<StatisticKind>,
    /// Lookback horizons in whole episodes, strictly increasing.
    pub horizons: Vec<usize>,
    /// Test-points per episode. Must divide the (downsampled) episode length.
    pub test_frequency: usize,
    /// Length in episodes of the stretch over which FAR is controlled.
    pub h_tilde: usize,
    pub alpha0: f64,
    pub b_outer: usize,
    pub b_inner: usize,
    pub seed: u64,
}

impl MonitorPlan {
    pub fn h_max(&self) -> usize {
        self.horizons.last().copied().unwrap_or(0)
    }

    pub fn validate(&self, episode_len: usize) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.statistics.is_empty() {
            return cfg("plan needs at least one statistic".into());
        }
        if self.horizons.is_empty() || self.horizons[0] == 0 {
            return cfg("horizons must be non-empty and positive".into());
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return cfg("horizons must be strictly increasing".into());
        }
        if self.test_frequency == 0 || !episode_len.is_multiple_of(self.test_frequency) {
            return cfg(format!(
                "test frequency {} must divide the episode length {episode_len}",
                self.test_frequency
            ));
        }
        if self.h_tilde == 0 {
            return cfg("h_tilde must be positive".into());
        }
        if !(self.alpha0 > 0.0 && self.alpha0 < 1.0) {
            return cfg(format!("alpha0 must lie in (0, 1), got {}", self.alpha0));
        }
        if self.b_outer == 0 || self.b_inner == 0 {
            return cfg("bootstrap sizes must be positive".into());
        }
        if self.alpha0 * (self.b_outer as f64) < 1.0 - 1e-9 {
            return cfg(format!(
                "alpha0 * b_outer = {} < 1: too few outer repetitions",
                self.alpha0 * self.b_outer as f64
            ));
        }
        Ok(())
    }

    /// Samples between consecutive test-points.
    pub fn spacing(&self, episode_len: usize) -> usize {
        episode_len / self.test_frequency
    }

    /// Offsets within an episode at which the battery runs.
    pub fn test_offsets(&self, episode_len: usize) -> Vec<usize> {
        let d = self.spacing(episode_len);
        (1..=self.test_frequency).map(|j| j * d).collect()
    }

    /// Every window length the monitor will ever request: `h * T + tau`.
    pub fn window_lengths(&self, episode_len: usize) -> Vec<usize> {
        let offsets = self.test_offsets(episode_len);
        let set: BTreeSet<usize> = self
            .horizons
            .iter()
            .flat_map(|h| offsets.iter().map(move |tau| h * episode_len + tau))
            .collect();
        set.into_iter().collect()
    }
}

/// One `(statistic, horizon)` test result at a test-point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub stat: String,
    pub h: usize,
    pub p: f64,
}

/// A calibrated monitor: plan, H0 parameters, shared store and threshold.
#[derive(Debug, Clone)]
pub struct TunedMonitor {
    pub plan: MonitorPlan,
    pub params: EpisodeParams,
    pub store: BootstrapStore,
    pub p_threshold: f64,
    pub min_p_distribution: Vec<f64>,
}

impl TunedMonitor {
    /// Copy with the threshold replaced, bypassing the resolution guard.
    pub fn with_threshold(mut self, p_threshold: f64) -> Self {
        self.p_threshold = p_threshold;
        self
    }

    /// Runs every `(horizon, statistic)` test at one test-point.
    ///
    /// `history` holds the completed episodes before the current one (most
    /// recent last, at least `h_max` of them); `tail` is the current episode
    /// up to and including the test-point.
    pub fn battery(&self, history: &[&Episode], tail: &[f64]) -> Result<Vec<TestResult>> {
        battery(&self.plan, &self.params, &self.store, history, tail)
    }
}

pub(crate) fn battery(
    plan: &MonitorPlan,
    params: &EpisodeParams,
    store: &BootstrapStore,
    history: &[&Episode],
    tail: &[f64],
) -> Result<Vec<TestResult>> {
    let t = params.episode_len();
    let mut out = Vec::with_capacity(plan.horizons.len() * plan.statistics.len());
    for &h in &plan.horizons {
        if history.len() < h {
            return Err(Error::invalid(format!(
                "horizon {h} needs {h} past episodes, only {} available",
                history.len()
            )));
        }
        let view = WindowView {
            episodes: &history[history.len() - h..],
            tail,
        };
        let n = h * t + tail.len();
        for kind in &plan.statistics {
            let y = evaluate(kind, params, view, Some(store))?;
            out.push(TestResult {
                stat: kind.name(),
                h,
                p: p_value(store.get(kind, n)?, y),
            });
        }
    }
    Ok(out)
}

/// Episode sequence of outer repetition `b`, chronological.
///
/// The `h_tilde` test-region episodes are drawn first and the warm-up
/// episodes after them, nearest first, so enlarging `h_max` only prepends
/// older episodes and leaves every window of a smaller plan unchanged.
fn repetition_sequence<'b>(bank: &'b ReferenceBank<'_>, plan: &MonitorPlan, b: usize) -> Vec<&'b Episode> {
    let mut rng = substream(plan.seed, Domain::Sequential, plan.h_tilde as u64, b as u64);
    let test: Vec<&Episode> = (0..plan.h_tilde).map(|_| bank.draw(&mut rng)).collect();
    let mut warm: Vec<&Episode> = (0..plan.h_max()).map(|_| bank.draw(&mut rng)).collect();
    warm.reverse();
    warm.extend(test);
    warm
}

/// Raw stream of outer repetition `b`: `h_max + h_tilde` whole episodes.
pub fn repetition_stream(
    reference: &ReferenceDataset,
    params: &EpisodeParams,
    plan: &MonitorPlan,
    b: usize,
) -> Result<Vec<f64>> {
    let bank = ReferenceBank::new(reference, params)?;
    Ok(repetition_sequence(&bank, plan, b)
        .into_iter()
        .flat_map(|e| e.values().iter().copied())
        .collect())
}

fn repetition_min_p(bank: &ReferenceBank<'_>, store: &BootstrapStore, plan: &MonitorPlan, b: usize) -> Result<f64> {
    let params = bank.params();
    let t = params.episode_len();
    let seq = repetition_sequence(bank, plan, b);
    let h_max = plan.h_max();
    let mut min_p = 1.0f64;
    for k in 0..plan.h_tilde {
        let history = &seq[..h_max + k];
        let current = seq[h_max + k].values();
        for tau in plan.test_offsets(t) {
            for r in battery(plan, params, store, history, &current[..tau])? {
                min_p = min_p.min(r.p);
            }
        }
    }
    Ok(min_p)
}

/// Builds the shared inner store for every window length the plan needs.
pub fn build_store(bank: &ReferenceBank<'_>, plan: &MonitorPlan) -> Result<BootstrapStore> {
    let t = bank.params().episode_len();
    plan.validate(t)?;
    let mut store = BootstrapStore::new(plan.b_inner, plan.seed)?;
    store.ensure_all(bank, &plan.statistics, &plan.window_lengths(t))?;
    Ok(store)
}

/// Minimal p-value of every outer repetition, in repetition order.
pub fn min_p_values(bank: &ReferenceBank<'_>, store: &BootstrapStore, plan: &MonitorPlan) -> Result<Vec<f64>> {
    map_indices(plan.b_outer, |b| repetition_min_p(bank, store, plan, b))
}

/// Calibrates the per-test p-value threshold for a family-wise false-alarm
/// rate of `alpha0` per `h_tilde` episodes.
pub fn bfar_tune(reference: &ReferenceDataset, params: &EpisodeParams, plan: &MonitorPlan) -> Result<TunedMonitor> {
    plan.validate(params.episode_len())?;
    let bank = ReferenceBank::new(reference, params)?;
    let store = build_store(&bank, plan)?;
    let mut min_p = min_p_values(&bank, &store, plan)?;
    min_p.sort_by(f64::total_cmp);
    let p_threshold = quantile(&min_p, plan.alpha0);
    let floor = store.resolution();
    if p_threshold <= floor * (1.0 + 1e-12) {
        return Err(Error::Resolution {
            threshold: p_threshold,
            floor,
        });
    }
    Ok(TunedMonitor {
        plan: plan.clone(),
        params: params.clone(),
        store,
        p_threshold,
        min_p_distribution: min_p,
    })
}

/// Fraction of `runs` H0 streams on which the monitor fires.
///
/// `generator(r)` must return the raw stream for run `r`: `h_max + h_tilde`
/// episodes at engine resolution.
pub fn far_verify<G>(tuned: &TunedMonitor, generator: G, runs: usize) -> Result<f64>
where
    G: Fn(usize) -> Vec<f64> + Sync + Send,
{
    if runs == 0 {
        return Ok(0.0);
    }
    let fired = map_indices(runs, |r| {
        let mut state = MonitorState::new(tuned);
        let report = run_block(&mut state, &generator(r))?;
        Ok(usize::from(report.detection.is_some()))
    })?;
    Ok(fired.iter().sum::<usize>() as f64 / runs as f64)
}
