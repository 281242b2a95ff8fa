//! Episode-level bootstrap of a statistic's null distribution and the
//! single-window threshold test built on it.
//!
//! Resampled windows are keyed by `(seed, n, b)` only, not by the statistic,
//! so every statistic at a given window length is evaluated on the same `B`
//! synthetic windows. Mixed statistics rely on this: their component p-values
//! are looked up in distributions built from the very same resamples.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episodic_model::{decompose_index, EpisodeParams, ReferenceDataset};
use crate::error::{Error, Result};
use crate::par::map_indices;
use crate::rng::{substream, Domain};
use crate::statistics::{evaluate, Episode, SignalWindow, StatisticKind, WindowView};

/// Reference episodes with their per-episode features precomputed.
#[derive(Debug, Clone)]
pub struct ReferenceBank<'p> {
    params: &'p EpisodeParams,
    episodes: Vec<Episode>,
}

impl<'p> ReferenceBank<'p> {
    pub fn new(reference: &ReferenceDataset, params: &'p EpisodeParams) -> Result<Self> {
        if reference.episode_len() != params.episode_len() {
            return Err(Error::invalid(format!(
                "reference episodes have length {} but params have T = {}",
                reference.episode_len(),
                params.episode_len()
            )));
        }
        let episodes = reference
            .episodes()
            .iter()
            .map(|row| Episode::new(row.clone(), params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, episodes })
    }

    pub fn params(&self) -> &'p EpisodeParams {
        self.params
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> &Episode {
        &self.episodes[rng.random_range(0..self.episodes.len())]
    }
}

/// Cached null distributions, keyed by statistic name and window length.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapStore {
    reps: usize,
    seed: u64,
    entries: BTreeMap<(String, usize), Vec<f64>>,
}

/// `(1 + #{S_b <= y}) / (1 + B)` against a sorted distribution.
pub fn p_value(sorted: &[f64], y: f64) -> f64 {
    let count = sorted.partition_point(|s| *s <= y);
    (1 + count) as f64 / (1 + sorted.len()) as f64
}

/// 1-based rank of the empirical `alpha`-quantile: `max(1, ceil(alpha * B))`.
pub fn quantile_rank(alpha: f64, reps: usize) -> usize {
    let r = ((alpha * reps as f64) - 1e-9).ceil();
    (r.max(1.0) as usize).min(reps)
}

/// Lower empirical `alpha`-quantile of a sorted sample.
pub fn quantile(sorted: &[f64], alpha: f64) -> f64 {
    sorted[quantile_rank(alpha, sorted.len()) - 1]
}

/// `alpha` rounded to the store resolution: `reject` holds exactly when
/// `p < rounded_alpha(alpha, B)`.
pub fn rounded_alpha(alpha: f64, reps: usize) -> f64 {
    (quantile_rank(alpha, reps) + 1) as f64 / (reps + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub reject: bool,
    pub p: f64,
    pub statistic: f64,
    pub threshold: f64,
}

/// Threshold test of a statistic value against its null distribution.
pub fn threshold_test(sorted: &[f64], y: f64, alpha: f64) -> Result<TestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if sorted.is_empty() {
        return Err(Error::invalid("empty bootstrap distribution"));
    }
    let threshold = quantile(sorted, alpha);
    Ok(TestOutcome {
        reject: y < threshold,
        p: p_value(sorted, y),
        statistic: y,
        threshold,
    })
}

/// Individual degradation test of one window against a tuned store.
pub fn individual_test(
    window: &SignalWindow<'_>,
    kind: &StatisticKind,
    store: &BootstrapStore,
    alpha: f64,
) -> Result<TestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let sorted = store.get(kind, window.n())?;
    let y = window.evaluate(kind, Some(store))?;
    threshold_test(sorted, y, alpha)
}

/// Same as [`individual_test`], filling a missing distribution first.
pub fn individual_test_lazy(
    window: &SignalWindow<'_>,
    kind: &StatisticKind,
    store: &mut BootstrapStore,
    bank: &ReferenceBank<'_>,
    alpha: f64,
) -> Result<TestOutcome> {
    store.ensure(bank, kind, window.n())?;
    individual_test(window, kind, store, alpha)
}

fn resample_window<'b>(bank: &'b ReferenceBank<'_>, n: usize, seed: u64, b: usize, buf: &mut Vec<&'b Episode>) -> &'b [f64] {
    let idx = decompose_index(n, bank.params().episode_len()).expect("n >= 1");
    let mut rng = substream(seed, Domain::Bootstrap, n as u64, b as u64);
    buf.clear();
    for _ in 0..idx.k {
        buf.push(bank.draw(&mut rng));
    }
    &bank.draw(&mut rng).values()[..idx.tau]
}

/// Bootstraps every statistic in `kinds` at window length `n` on one shared
/// set of `reps` resampled windows. Mixed kinds read component p-values from
/// `store`, which must already hold the components at `n`.
fn bootstrap_many(
    bank: &ReferenceBank<'_>,
    kinds: &[&StatisticKind],
    n: usize,
    reps: usize,
    seed: u64,
    store: Option<&BootstrapStore>,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 || reps == 0 {
        return Err(Error::invalid("bootstrap needs n >= 1 and B >= 1"));
    }
    if bank.is_empty() {
        return Err(Error::InsufficientData("empty reference bank".into()));
    }
    let rows = map_indices(reps, |b| {
        let mut buf = Vec::new();
        let tail = resample_window(bank, n, seed, b, &mut buf);
        let view = WindowView { episodes: &buf, tail };
        kinds
            .iter()
            .map(|k| evaluate(k, bank.params(), view, store))
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut columns: Vec<Vec<f64>> = (0..kinds.len()).map(|_| Vec::with_capacity(reps)).collect();
    for row in rows {
        for (col, v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
    }
    for col in &mut columns {
        col.sort_by(f64::total_cmp);
    }
    Ok(columns)
}

/// Sorted bootstrap distribution of `kind` over windows of `n` samples.
pub fn bootstrap_distribution(
    reference: &ReferenceDataset,
    params: &EpisodeParams,
    kind: &StatisticKind,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let bank = ReferenceBank::new(reference, params)?;
    let mut store = BootstrapStore::new(reps, seed)?;
    store.ensure(&bank, kind, n)?;
    Ok(store.get(kind, n)?.to_vec())
}

impl BootstrapStore {
    pub fn new(reps: usize, seed: u64) -> Result<Self> {
        if reps == 0 {
            return Err(Error::invalid("bootstrap size B must be positive"));
        }
        Ok(Self {
            reps,
            seed,
            entries: BTreeMap::new(),
        })
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Smallest attainable p-value, `1 / (B + 1)`.
    pub fn resolution(&self) -> f64 {
        1.0 / (self.reps + 1) as f64
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, kind: &StatisticKind, n: usize) -> bool {
        self.entries.contains_key(&(kind.name(), n))
    }

    pub fn get(&self, kind: &StatisticKind, n: usize) -> Result<&[f64]> {
        self.entries
            .get(&(kind.name(), n))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NotTuned { kind: kind.name(), n })
    }

    /// Iterates `(kind name, n, sorted values)`.
    pub fn entries(&self) -> impl Iterator<Item = (&str, usize, &[f64])> {
        self.entries.iter().map(|((k, n), v)| (k.as_str(), *n, v.as_slice()))
    }

    /// Inserts a distribution, sorting it. Rejects wrong sizes and non-finite values.
    pub fn insert(&mut self, kind: &StatisticKind, n: usize, mut values: Vec<f64>) -> Result<()> {
        self.insert_named(kind.name(), n, &mut values)?;
        Ok(())
    }

    fn insert_named(&mut self, name: String, n: usize, values: &mut Vec<f64>) -> Result<()> {
        if values.len() != self.reps {
            return Err(Error::data(format!(
                "distribution for `{name}` at n={n} has {} values, expected B = {}",
                values.len(),
                self.reps
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite bootstrap value for `{name}` at n={n}")));
        }
        values.sort_by(f64::total_cmp);
        self.entries.insert((name, n), std::mem::take(values));
        Ok(())
    }

    /// Fills the distribution for `(kind, n)` (and its components) if missing.
    pub fn ensure(&mut self, bank: &ReferenceBank<'_>, kind: &StatisticKind, n: usize) -> Result<()> {
        self.ensure_all(bank, std::slice::from_ref(kind), &[n])
    }

    /// Fills every missing `(kind, n)` pair. Plain statistics are computed
    /// first, mixed ones afterwards from the plain distributions.
    pub fn ensure_all(&mut self, bank: &ReferenceBank<'_>, kinds: &[StatisticKind], lengths: &[usize]) -> Result<()> {
        let mut plain: Vec<&StatisticKind> = Vec::new();
        let mut mixed: Vec<&StatisticKind> = Vec::new();
        for kind in kinds {
            if kind.is_mixed()
                && !mixed.contains(&kind) {
                    mixed.push(kind);
                }
            for part in kind.components() {
                if !plain.contains(&part) {
                    plain.push(part);
                }
            }
        }
        for &n in lengths {
            let missing: Vec<&StatisticKind> = plain.iter().copied().filter(|k| !self.contains(k, n)).collect();
            if !missing.is_empty() {
                let cols = bootstrap_many(bank, &missing, n, self.reps, self.seed, None)?;
                for (k, mut col) in missing.into_iter().zip(cols) {
                    self.insert_named(k.name(), n, &mut col)?;
                }
            }
            let missing: Vec<&StatisticKind> = mixed.iter().copied().filter(|k| !self.contains(k, n)).collect();
            if !missing.is_empty() {
                let cols = bootstrap_many(bank, &missing, n, self.reps, self.seed, Some(self))?;
                for (k, mut col) in missing.into_iter().zip(cols) {
                    self.insert_named(k.name(), n, &mut col)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> StoreFile {
        StoreFile {
            format_version: STORE_FORMAT_VERSION,
            b: self.reps,
            seed: self.seed,
            entries: self
                .entries
                .iter()
                .map(|((kind, n), values)| StoreEntry {
                    kind: kind.clone(),
                    n: *n,
                    values: values.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: StoreFile) -> Result<Self> {
        if file.format_version != STORE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported store format_version {}",
                file.format_version
            )));
        }
        let mut store = Self::new(file.b, file.seed)?;
        for mut e in file.entries {
            let kind: StatisticKind = e.kind.parse()?;
            store.insert_named(kind.name(), e.n, &mut e.values)?;
        }
        Ok(store)
    }
}

pub const STORE_FORMAT_VERSION: u32 = 1;

/// On-disk form of a [`BootstrapStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreFile {
    pub format_version: u32,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub entries: Vec<StoreEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub kind: String,
    pub n: usize,
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn toy() -> (ReferenceDataset, EpisodeParams) {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let a = ((i * 37 + 11) % 17) as f64 / 4.0;
                vec![a, 0.5 * a + ((i * 13) % 7) as f64 / 3.0, 1.0 - a / 2.0 + (i % 3) as f64]
            })
            .collect();
        let reference = ReferenceDataset::new(rows).unwrap();
        let params = EpisodeParams::estimate(&reference).unwrap();
        (reference, params)
    }

    #[test]
    fn p_value_and_quantile_conventions() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(p_value(&s, 0.0), 0.2);
        assert_eq!(p_value(&s, 2.0), 0.6);
        assert_eq!(p_value(&s, 9.0), 1.0);
        assert_eq!(quantile_rank(0.05, 2000), 100);
        assert_eq!(quantile_rank(0.05, 10), 1);
        assert_eq!(quantile(&s, 0.5), 2.0);
        assert_eq!(quantile(&s, 0.01), 1.0);
    }

    #[test]
    fn extreme_values() {
        let s: Vec<f64> = (0..99).map(f64::from).collect();
        let low = threshold_test(&s, -1.0, 0.05).unwrap();
        assert_eq!(low.p, 0.01);
        assert!(low.reject);
        let high = threshold_test(&s, 1000.0, 0.05).unwrap();
        assert_eq!(high.p, 1.0);
        assert!(!high.reject);
        assert!(threshold_test(&s, 0.0, 0.0).is_err());
        assert!(threshold_test(&s, 0.0, 1.0).is_err());
    }

    #[test]
    fn ties_do_not_reject() {
        let s = [1.0, 1.0, 1.0, 2.0];
        let out = threshold_test(&s, 1.0, 0.25).unwrap();
        assert!(!out.reject);
    }

    #[test]
    fn single_episode_reference_is_deterministic() {
        let (_, params) = toy();
        let one = ReferenceDataset::new(vec![vec![0.1, 0.2, 0.3]]).unwrap();
        let d = bootstrap_distribution(&one, &params, &StatisticKind::Mean, 3, 1, 5).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0] - 0.2).abs() < 1e-15);
        let d = bootstrap_distribution(&one, &params, &StatisticKind::Udt, 5, 4, 5).unwrap();
        assert!(d.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let (reference, params) = toy();
        for kind in [StatisticKind::Udt, StatisticKind::Hotelling, StatisticKind::mdt()] {
            let a = bootstrap_distribution(&reference, &params, &kind, 7, 64, 99).unwrap();
            let b = bootstrap_distribution(&reference, &params, &kind, 7, 64, 99).unwrap();
            assert_eq!(a, b);
            assert!(a.windows(2).all(|w| w[0] <= w[1]));
            let c = bootstrap_distribution(&reference, &params, &kind, 7, 64, 100).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn store_lookup_and_lazy_fill() {
        let (reference, params) = toy();
        let bank = ReferenceBank::new(&reference, &params).unwrap();
        let mut store = BootstrapStore::new(50, 1).unwrap();
        let window = SignalWindow::new(&[0.0, 0.0, 0.0, 1.0], &params).unwrap();
        assert!(matches!(
            individual_test(&window, &StatisticKind::Udt, &store, 0.05),
            Err(Error::NotTuned { .. })
        ));
        let out = individual_test_lazy(&window, &StatisticKind::mdt(), &mut store, &bank, 0.05).unwrap();
        assert!(out.p >= 1.0 / 51.0 && out.p <= 1.0);
        // components were filled too
        for part in StatisticKind::mdt().components() {
            assert!(store.contains(part, 4));
        }
        assert!(matches!(
            individual_test(&window, &StatisticKind::Udt, &store, 1.5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn store_file_round_trip_and_validation() {
        let (reference, params) = toy();
        let bank = ReferenceBank::new(&reference, &params).unwrap();
        let mut store = BootstrapStore::new(20, 3).unwrap();
        store.ensure_all(&bank, &[StatisticKind::Udt, StatisticKind::Cusum(0.5)], &[2, 5]).unwrap();
        let json = serde_json::to_string(&store.to_file()).unwrap();
        assert!(json.contains("\"B\":20"));
        let back = BootstrapStore::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, store);

        let mut bad = store.to_file();
        bad.entries[0].values.pop();
        assert!(BootstrapStore::from_file(bad).is_err());
        let mut bad = store.to_file();
        bad.entries[0].kind = "nope".into();
        assert!(BootstrapStore::from_file(bad).is_err());
    }

    #[test]
    fn bank_rejects_mismatched_length() {
        let params = EpisodeParams::new(vec![0.0; 2], DMatrix::identity(2, 2)).unwrap();
        let reference = ReferenceDataset::new(vec![vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(ReferenceBank::new(&reference, &params).is_err());
    }
}
