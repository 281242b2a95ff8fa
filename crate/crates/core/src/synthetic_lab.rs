//! Gaussian episodic signal generator, degradation scenarios, and the
//! closed-form power and moment formulas used to check the tests.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::bfar::TunedMonitor;
use crate::episodic_model::EpisodeParams;
use crate::error::{Error, Result};
use crate::monitor::{run_block, DetectionRecord, MonitorState};
use crate::par::map_indices;
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    H0,
    /// Every offset's mean drops by `epsilon`.
    Uniform { epsilon: f64 },
    /// Only the listed 1-based offsets drop by `epsilon`.
    Partial { epsilon: f64, offsets: Vec<usize> },
    /// Uniform drop of `epsilon / sqrt(k)`.
    ScaledUniform { epsilon: f64, k: usize },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub base: EpisodeParams,
    pub kind: ScenarioKind,
    pub seed: u64,
}

impl Scenario {
    pub fn new(base: EpisodeParams, kind: ScenarioKind, seed: u64) -> Result<Self> {
        let t = base.episode_len();
        let bad_eps = |e: f64| !(e.is_finite() && e >= 0.0);
        match &kind {
            ScenarioKind::H0 => {}
            ScenarioKind::Uniform { epsilon } => {
                if bad_eps(*epsilon) {
                    return Err(Error::invalid("epsilon must be finite and non-negative"));
                }
            }
            ScenarioKind::Partial { epsilon, offsets } => {
                if bad_eps(*epsilon) {
                    return Err(Error::invalid("epsilon must be finite and non-negative"));
                }
                if offsets.is_empty() {
                    return Err(Error::invalid("partial degradation needs at least one offset"));
                }
                if let Some(o) = offsets.iter().find(|o| **o == 0 || **o > t) {
                    return Err(Error::invalid(format!("offset {o} outside 1..={t}")));
                }
            }
            ScenarioKind::ScaledUniform { epsilon, k } => {
                if bad_eps(*epsilon) {
                    return Err(Error::invalid("epsilon must be finite and non-negative"));
                }
                if *k == 0 {
                    return Err(Error::invalid("K must be positive"));
                }
            }
        }
        Ok(Self { base, kind, seed })
    }

    pub fn h0(base: EpisodeParams, seed: u64) -> Self {
        Self {
            base,
            kind: ScenarioKind::H0,
            seed,
        }
    }

    /// Per-offset mean shift (non-positive) applied by the scenario.
    pub fn shift(&self) -> Vec<f64> {
        let t = self.base.episode_len();
        match &self.kind {
            ScenarioKind::H0 => vec![0.0; t],
            ScenarioKind::Uniform { epsilon } => vec![-epsilon; t],
            ScenarioKind::ScaledUniform { epsilon, k } => vec![-epsilon / (*k as f64).sqrt(); t],
            ScenarioKind::Partial { epsilon, offsets } => {
                let mut s = vec![0.0; t];
                for &o in offsets {
                    s[o - 1] = -epsilon;
                }
                s
            }
        }
    }

    /// Mean vector actually sampled from.
    pub fn mean(&self) -> Vec<f64> {
        self.base.mean().iter().zip(self.shift()).map(|(m, s)| m + s).collect()
    }

    /// Episodes `start..start + count` of this scenario's stream.
    ///
    /// Row `i` depends only on `(seed, i)`, so any slice can be produced
    /// without generating the rows before it.
    pub fn episodes(&self, start: usize, count: usize) -> Result<Vec<Vec<f64>>> {
        let mean = DVector::from_vec(self.mean());
        let lower = self.base.cov_lower();
        map_indices(count, |j| {
            let mut rng = substream(self.seed, Domain::Synthetic, 0, (start + j) as u64);
            let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            Ok((&mean + lower * z).as_slice().to_vec())
        })
    }

    /// `count` episodes concatenated into one stream.
    pub fn stream(&self, start: usize, count: usize) -> Result<Vec<f64>> {
        Ok(self.episodes(start, count)?.concat())
    }
}

/// `count` i.i.d. episodes from the scenario, rows `0..count`.
pub fn generate_episodes(scenario: &Scenario, count: usize) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::invalid("episode count must be positive"));
    }
    scenario.episodes(0, count)
}

/// `Q diag(lambda) Q^T` with `Q` orthogonal (QR of a Gaussian matrix) and
/// eigenvalues spanning exactly `[1, cond]`, interior ones log-uniform.
pub fn random_spd(t: usize, cond: f64, seed: u64) -> Result<DMatrix<f64>> {
    if t == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(cond.is_finite() && cond >= 1.0) {
        return Err(Error::invalid(format!("condition number must be >= 1, got {cond}")));
    }
    let mut rng = substream(seed, Domain::Spd, t as u64, 0);
    let g = DMatrix::from_fn(t, t, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let log_max = cond.ln();
    let lambda: Vec<f64> = (0..t)
        .map(|i| match i {
            0 => 1.0,
            1 => cond,
            _ => (rng.random::<f64>() * log_max).exp(),
        })
        .collect();
    let m = &q * DMatrix::from_diagonal(&DVector::from_vec(lambda)) * q.transpose();
    Ok((&m + m.transpose()) * 0.5)
}

/// G^2 computed two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerGain {
    pub direct: f64,
    pub spectral: f64,
}

/// `(1^T S^-1 1)(1^T S 1) / T^2`, directly and as
/// `1 + sum_ij w_ij (l_i - l_j)^2` from the eigendecomposition.
pub fn power_gain(params: &EpisodeParams) -> Result<PowerGain> {
    let t = params.episode_len() as f64;
    let direct = params.quad_inv() * params.quad_cov() / (t * t);
    let eig = SymmetricEigen::new(params.cov().clone());
    let lambda = &eig.eigenvalues;
    if lambda.iter().any(|l| *l <= 0.0) {
        return Err(Error::invalid("covariance is not positive definite"));
    }
    let u = eig.eigenvectors.transpose() * DVector::from_element(lambda.len(), 1.0);
    let mut extra = 0.0;
    for i in 0..lambda.len() {
        for j in 0..lambda.len() {
            let w = (u[i] * u[j]).powi(2) / (2.0 * t * t * lambda[i] * lambda[j]);
            extra += w * (lambda[i] - lambda[j]).powi(2);
        }
    }
    Ok(PowerGain {
        direct,
        spectral: 1.0 + extra,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPower {
    pub mean: f64,
    pub udt: f64,
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Standard normal quantile, polished with Newton steps on the CDF.
pub fn normal_quantile(p: f64) -> f64 {
    let n = std_normal();
    let mut q = n.inverse_cdf(p);
    if q.is_finite() {
        for _ in 0..2 {
            q -= (n.cdf(q) - p) / n.pdf(q);
        }
    }
    q
}

/// Large-K power of the Mean and UDT tests against a uniform drop of
/// `epsilon / sqrt(K)` per step.
pub fn asymptotic_power(params: &EpisodeParams, epsilon: f64, alpha: f64) -> Result<AsymptoticPower> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be finite and non-negative"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = std_normal();
    let q = normal_quantile(alpha);
    let t = params.episode_len() as f64;
    Ok(AsymptoticPower {
        mean: n.cdf(q + epsilon * t / params.quad_cov().sqrt()),
        udt: n.cdf(q + epsilon * params.quad_inv().sqrt()),
    })
}

/// `epsilon` giving asymptotic UDT power `target` at level `alpha`.
pub fn epsilon_for_power(params: &EpisodeParams, target: f64, alpha: f64) -> Result<f64> {
    if !(target > alpha && target < 1.0) {
        return Err(Error::invalid("target power must lie in (alpha, 1)"));
    }
    Ok((normal_quantile(target) - normal_quantile(alpha)) / params.quad_inv().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub estimate: f64,
    pub exact: f64,
    /// Monte-Carlo standard error of `estimate`.
    pub std_error: f64,
    pub rel_error: f64,
}

impl MomentCheck {
    fn new(estimate: f64, exact: f64, std_error: f64) -> Self {
        let rel_error = if exact == 0.0 {
            estimate.abs()
        } else {
            ((estimate - exact) / exact).abs()
        };
        Self {
            estimate,
            exact,
            std_error,
            rel_error,
        }
    }
}

/// Simple sum and UDT sum over a K-episode window: sample moments against
/// the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub k: usize,
    pub draws: usize,
    pub mean_simple: MomentCheck,
    pub mean_udt: MomentCheck,
    pub var_simple: MomentCheck,
    pub var_udt: MomentCheck,
}

fn sample_moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let var = m2 / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    // standard errors of the mean and of the sample variance
    let se_mean = (var / n).sqrt();
    let se_var = ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    (mean, var, se_mean, se_var)
}

/// Monte-Carlo check of the expectation and variance of both sums over
/// `draws` windows of `k` episodes drawn from `scenario`.
pub fn moment_oracle(scenario: &Scenario, k: usize, draws: usize) -> Result<MomentReport> {
    if k == 0 || draws < 2 {
        return Err(Error::invalid("moment oracle needs K >= 1 and at least 2 draws"));
    }
    let params = &scenario.base;
    let w = params.weights();
    let rows = scenario.episodes(0, k * draws)?;
    let (simple, udt): (Vec<f64>, Vec<f64>) = rows
        .chunks(k)
        .map(|window| {
            window.iter().fold((0.0, 0.0), |(s, u), x| {
                (s + x.iter().sum::<f64>(), u + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            })
        })
        .unzip();
    let mu = scenario.mean();
    let kf = k as f64;
    let exact_simple = kf * mu.iter().sum::<f64>();
    let exact_udt = kf * mu.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let (ms, vs, se_ms, se_vs) = sample_moments(&simple);
    let (mu_, vu, se_mu, se_vu) = sample_moments(&udt);
    Ok(MomentReport {
        k,
        draws,
        mean_simple: MomentCheck::new(ms, exact_simple, se_ms),
        mean_udt: MomentCheck::new(mu_, exact_udt, se_mu),
        var_simple: MomentCheck::new(vs, kf * params.quad_cov(), se_vs),
        var_udt: MomentCheck::new(vu, kf * params.quad_inv(), se_vu),
    })
}

/// Outcome of running a tuned monitor over independent blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStudy {
    pub blocks: usize,
    pub episodes: usize,
    pub detections: usize,
    pub fraction: f64,
    /// Per block, the detection (if any). Times are relative to the block start.
    pub records: Vec<Option<DetectionRecord>>,
}

/// Runs `blocks` independent monitors. Each block is `h_max` warm-up
/// episodes from `warmup` followed by `episodes` episodes from `test`; the
/// two scenarios draw disjoint rows of their streams.
pub fn run_blocks(
    tuned: &TunedMonitor,
    warmup: &Scenario,
    test: &Scenario,
    blocks: usize,
    episodes: usize,
) -> Result<BlockStudy> {
    if blocks == 0 || episodes == 0 {
        return Err(Error::invalid("need at least one block of at least one episode"));
    }
    let t = tuned.params.episode_len();
    for s in [warmup, test] {
        if s.base.episode_len() != t {
            return Err(Error::invalid("scenario episode length differs from the monitor's"));
        }
    }
    let h_max = tuned.plan.h_max();
    let len = h_max + episodes;
    let records = map_indices(blocks, |b| {
        let mut samples = warmup.stream(b * len, h_max)?;
        samples.extend(test.stream(b * len + h_max, episodes)?);
        let mut state = MonitorState::new(tuned);
        Ok(run_block(&mut state, &samples)?.detection)
    })?;
    let detections = records.iter().filter(|r| r.is_some()).count();
    Ok(BlockStudy {
        blocks,
        episodes,
        detections,
        fraction: detections as f64 / blocks as f64,
        records,
    })
}
