//! Degradation statistics over a window of the episodic stream.
//!
//! Every window the engine looks at starts on an episode boundary, so it is
//! `K` whole episodes followed by a prefix of `tau0` samples of one more
//! episode (`1 <= tau0 <= T`). Statistics are oriented so that a LOW value is
//! evidence of degradation; a single `s < kappa` rule serves all of them.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::episodic_model::{decompose_index, EpisodeParams};
use crate::error::{Error, Result};
use crate::individual_test::{p_value, BootstrapStore};

/// Test statistic selector.
#[derive(Debug, Clone, PartialEq)]
pub enum StatisticKind {
    Mean,
    Udt,
    /// Partial degradation mean over the `ceil(p * T)` lowest offsets.
    Pdt(f64),
    Hotelling,
    /// Lower one-sided CUSUM with reference value `k`.
    Cusum(f64),
    /// Minimum of the component p-values.
    Mixed(Vec<StatisticKind>),
}

impl StatisticKind {
    pub fn pdt(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("PDT fraction p must lie in (0, 1], got {p}")));
        }
        Ok(Self::Pdt(p))
    }

    pub fn cusum(k_ref: f64) -> Result<Self> {
        if !k_ref.is_finite() || k_ref < 0.0 {
            return Err(Error::invalid(format!("CUSUM reference value must be finite and >= 0, got {k_ref}")));
        }
        Ok(Self::Cusum(k_ref))
    }

    pub fn mixed(components: Vec<StatisticKind>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::invalid("a mixed statistic needs at least two components"));
        }
        if components.iter().any(|c| matches!(c, Self::Mixed(_))) {
            return Err(Error::invalid("mixed statistics cannot be nested"));
        }
        Ok(Self::Mixed(components))
    }

    /// Mean, Hotelling and PDT(0.9) run together (MDT).
    pub fn mdt() -> Self {
        Self::Mixed(vec![Self::Mean, Self::Hotelling, Self::Pdt(0.9)])
    }

    /// Mean and PDT(0.9).
    pub fn mean_pdt() -> Self {
        Self::Mixed(vec![Self::Mean, Self::Pdt(0.9)])
    }

    pub fn components(&self) -> &[StatisticKind] {
        match self {
            Self::Mixed(c) => c,
            _ => std::slice::from_ref(self),
        }
    }

    pub fn is_mixed(&self) -> bool {
        matches!(self, Self::Mixed(_))
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mean => f.write_str("mean"),
            Self::Udt => f.write_str("udt"),
            Self::Pdt(p) => write!(f, "pdt:{p}"),
            Self::Hotelling => f.write_str("hotelling"),
            Self::Cusum(k) => write!(f, "cusum:{k}"),
            Self::Mixed(parts) => {
                f.write_str("mixed:")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

fn parse_param(name: &str, arg: Option<&str>, default: f64) -> Result<f64> {
    match arg {
        None => Ok(default),
        Some(a) => a
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad parameter `{a}` for statistic `{name}`"))),
    }
}

fn parse_simple(s: &str) -> Result<StatisticKind> {
    let (head, arg) = match s.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (s, None),
    };
    let no_arg = |kind: StatisticKind| match arg {
        None => Ok(kind),
        Some(_) => Err(Error::Config(format!("statistic `{head}` takes no parameter"))),
    };
    match head {
        "mean" => no_arg(StatisticKind::Mean),
        "udt" => no_arg(StatisticKind::Udt),
        "hotelling" => no_arg(StatisticKind::Hotelling),
        "pdt" => StatisticKind::pdt(parse_param(head, arg, 0.9)?).map_err(|e| Error::Config(e.to_string())),
        "cusum" => StatisticKind::cusum(parse_param(head, arg, 0.5)?).map_err(|e| Error::Config(e.to_string())),
        other => Err(Error::Config(format!("unknown statistic `{other}`"))),
    }
}

impl FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "mdt" => return Ok(Self::mdt()),
            "mixed" => return Ok(Self::mean_pdt()),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("mixed:") {
            let parts = rest.split('+').map(parse_simple).collect::<Result<Vec<_>>>()?;
            return Self::mixed(parts).map_err(|e| Error::Config(e.to_string()));
        }
        parse_simple(s)
    }
}

impl serde::Serialize for StatisticKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for StatisticKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One whole episode with the per-episode quantities statistics reuse.
#[derive(Debug, Clone)]
pub struct Episode {
    values: Vec<f64>,
    sum: f64,
    weighted: f64,
    whitened: Vec<f64>,
}

impl Episode {
    pub fn new(values: Vec<f64>, params: &EpisodeParams) -> Result<Self> {
        if values.len() != params.episode_len() {
            return Err(Error::invalid(format!(
                "episode has {} samples, expected {}",
                values.len(),
                params.episode_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite sample in episode"));
        }
        let sum = values.iter().sum();
        let weighted = dot(params.weights(), &values);
        let centered = DVector::from_iterator(values.len(), values.iter().zip(params.mean()).map(|(x, m)| x - m));
        let whitened = (params.cov_inv() * centered).as_slice().to_vec();
        Ok(Self {
            values,
            sum,
            weighted,
            whitened,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `W0 * x`.
    pub fn weighted(&self) -> f64 {
        self.weighted
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Borrowed window: whole episodes (oldest first) plus a prefix tail.
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    pub episodes: &'a [&'a Episode],
    pub tail: &'a [f64],
}

impl WindowView<'_> {
    pub fn len(&self, episode_len: usize) -> usize {
        self.episodes.len() * episode_len + self.tail.len()
    }

    fn check(&self, params: &EpisodeParams) -> Result<()> {
        if self.tail.is_empty() || self.tail.len() > params.episode_len() {
            return Err(Error::invalid(format!(
                "window tail must hold 1..={} samples, got {}",
                params.episode_len(),
                self.tail.len()
            )));
        }
        Ok(())
    }
}

/// A contiguous slice of the monitored stream starting at an episode boundary.
#[derive(Debug, Clone)]
pub struct SignalWindow<'p> {
    params: &'p EpisodeParams,
    episodes: Vec<Episode>,
    tail: Vec<f64>,
}

impl<'p> SignalWindow<'p> {
    pub fn new(values: &[f64], params: &'p EpisodeParams) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty window"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite sample in window"));
        }
        let t = params.episode_len();
        let idx = decompose_index(values.len(), t)?;
        let episodes = values[..idx.k * t]
            .chunks_exact(t)
            .map(|c| Episode::new(c.to_vec(), params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            episodes,
            tail: values[idx.k * t..].to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.episodes.len() * self.params.episode_len() + self.tail.len()
    }

    /// Within-episode position of the last sample.
    pub fn phase(&self) -> usize {
        self.tail.len()
    }

    pub fn params(&self) -> &'p EpisodeParams {
        self.params
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.episodes.iter().flat_map(|e| e.values.iter().copied()).collect();
        v.extend_from_slice(&self.tail);
        v
    }

    /// Calls `f` with a borrowed view of this window.
    pub fn with_view<R>(&self, f: impl FnOnce(WindowView<'_>) -> R) -> R {
        let refs: Vec<&Episode> = self.episodes.iter().collect();
        f(WindowView {
            episodes: &refs,
            tail: &self.tail,
        })
    }

    pub fn evaluate(&self, kind: &StatisticKind, store: Option<&BootstrapStore>) -> Result<f64> {
        self.with_view(|v| evaluate(kind, self.params, v, store))
    }
}

pub fn stat_mean(w: &SignalWindow) -> Result<f64> {
    w.evaluate(&StatisticKind::Mean, None)
}

pub fn stat_udt(w: &SignalWindow) -> Result<f64> {
    w.evaluate(&StatisticKind::Udt, None)
}

pub fn stat_pdt(w: &SignalWindow, p: f64) -> Result<f64> {
    w.evaluate(&StatisticKind::pdt(p)?, None)
}

pub fn stat_hotelling(w: &SignalWindow) -> Result<f64> {
    w.evaluate(&StatisticKind::Hotelling, None)
}

pub fn stat_cusum(w: &SignalWindow, k_ref: f64) -> Result<f64> {
    w.evaluate(&StatisticKind::cusum(k_ref)?, None)
}

pub fn stat_mixed(w: &SignalWindow, components: &[StatisticKind], store: &BootstrapStore) -> Result<f64> {
    w.evaluate(&StatisticKind::mixed(components.to_vec())?, Some(store))
}

/// Evaluates `kind` on a window. `store` is required only for mixed statistics.
pub fn evaluate(
    kind: &StatisticKind,
    params: &EpisodeParams,
    window: WindowView<'_>,
    store: Option<&BootstrapStore>,
) -> Result<f64> {
    window.check(params)?;
    let value = match kind {
        StatisticKind::Mean => mean(params, window),
        StatisticKind::Udt => udt(params, window),
        StatisticKind::Pdt(p) => pdt(params, window, *p),
        StatisticKind::Hotelling => -hotelling_q(params, window),
        StatisticKind::Cusum(k) => -cusum(params, window, *k)?,
        StatisticKind::Mixed(parts) => {
            let store = store.ok_or_else(|| Error::NotTuned {
                kind: kind.name(),
                n: window.len(params.episode_len()),
            })?;
            let n = window.len(params.episode_len());
            let mut best = f64::INFINITY;
            for part in parts {
                let y = evaluate(part, params, window, None)?;
                best = best.min(p_value(store.get(part, n)?, y));
            }
            best
        }
    };
    if !value.is_finite() {
        return Err(Error::data(format!("statistic `{kind}` is not finite on this window")));
    }
    Ok(value)
}

fn mean(params: &EpisodeParams, w: WindowView<'_>) -> f64 {
    let total: f64 = w.episodes.iter().map(|e| e.sum).sum::<f64>() + w.tail.iter().sum::<f64>();
    total / w.len(params.episode_len()) as f64
}

fn udt(params: &EpisodeParams, w: WindowView<'_>) -> f64 {
    let full: f64 = w.episodes.iter().map(|e| e.weighted).sum();
    full + dot(&params.tail(w.tail.len()).weights, w.tail)
}

/// `Sigma_tau^-1 (x - mu_tau)` for a partial episode.
fn whiten_tail(params: &EpisodeParams, tail: &[f64]) -> Vec<f64> {
    let tau = tail.len();
    let centered = DVector::from_iterator(tau, tail.iter().zip(params.mean()).map(|(x, m)| x - m));
    (&params.tail(tau).inverse * centered).as_slice().to_vec()
}

/// Number of offsets selected by a PDT with fraction `p` over `t` offsets.
pub fn pdt_subset_size(p: f64, t: usize) -> usize {
    // guard against 0.7 * 10 = 7.000000000000001
    ((p * t as f64) - 1e-9).ceil().max(1.0) as usize
}

fn pdt(params: &EpisodeParams, w: WindowView<'_>, p: f64) -> f64 {
    let t = params.episode_len();
    let mut per_offset = vec![0.0; t];
    for e in w.episodes {
        for (s, v) in per_offset.iter_mut().zip(&e.whitened) {
            *s += v;
        }
    }
    for (s, v) in per_offset.iter_mut().zip(whiten_tail(params, w.tail)) {
        *s += v;
    }
    let present = if w.episodes.is_empty() { w.tail.len() } else { t };
    per_offset.truncate(present);
    per_offset.sort_by(f64::total_cmp);
    let m = pdt_subset_size(p, t).min(present);
    per_offset[..m].iter().sum()
}

/// Quadratic form `u^T M u` with `u_tau = sqrt(c_tau) * (mean_tau - mu_tau)`,
/// `c_tau` the number of occurrences of offset `tau` in the window.
fn hotelling_q(params: &EpisodeParams, w: WindowView<'_>) -> f64 {
    let k = w.episodes.len();
    let tau0 = w.tail.len();
    let present = if k == 0 { tau0 } else { params.episode_len() };
    let mut sums = vec![0.0; present];
    for e in w.episodes {
        for (s, v) in sums.iter_mut().zip(&e.values) {
            *s += v;
        }
    }
    for (s, v) in sums.iter_mut().zip(w.tail) {
        *s += v;
    }
    let mu = params.mean();
    let u = DVector::from_iterator(
        present,
        sums.iter().enumerate().map(|(i, s)| {
            let c = (k + usize::from(i < tau0)) as f64;
            (s - c * mu[i]) / c.sqrt()
        }),
    );
    let m = if k == 0 { &params.tail(tau0).inverse } else { params.cov_inv() };
    u.dot(&(m * &u))
}

fn cusum(params: &EpisodeParams, w: WindowView<'_>, k_ref: f64) -> Result<f64> {
    let t = params.episode_len();
    let mu = params.mean();
    let mut inv_std = Vec::with_capacity(t);
    for tau in 1..=t {
        let s = params.step_std(tau);
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::DegenerateVariance { offset: tau });
        }
        inv_std.push(1.0 / s);
    }
    let mut c = 0.0f64;
    let mut feed = |xs: &[f64]| {
        for (i, x) in xs.iter().enumerate() {
            c = (c + (mu[i] - x) * inv_std[i] - k_ref).max(0.0);
        }
    };
    for e in w.episodes {
        feed(&e.values);
    }
    feed(w.tail);
    Ok(c)
}
