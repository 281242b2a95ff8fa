//! Episodic signal model.
//!
//! A monitored stream is a sequence of i.i.d. episodes of fixed length `T`.
//! Samples inside an episode may be correlated and non-identically
//! distributed, so the null model is the per-episode mean vector and the
//! `T x T` covariance. The covariance of any window of the stream is block
//! diagonal with copies of the episode covariance (the last block cropped to
//! its upper-left corner), which is what lets every statistic here work on
//! `T`-sized blocks instead of the full window.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Position of a 1-based global step inside the episodic stream.
///
/// `t = k * T + tau` with `1 <= tau <= T`; `k` counts completed episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexDecomposition {
    pub t: usize,
    pub episode_len: usize,
    pub k: usize,
    pub tau: usize,
}

pub fn decompose_index(t: usize, episode_len: usize) -> Result<IndexDecomposition> {
    if t == 0 || episode_len == 0 {
        return Err(Error::invalid(format!(
            "index decomposition needs t >= 1 and T >= 1 (got t={t}, T={episode_len})"
        )));
    }
    let k = (t - 1) / episode_len;
    Ok(IndexDecomposition {
        t,
        episode_len,
        k,
        tau: t - k * episode_len,
    })
}

/// Replaces every block of `d` consecutive samples by its mean.
pub fn downsample(raw: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::invalid("downsample factor must be positive"));
    }
    if !raw.len().is_multiple_of(d) {
        return Err(Error::invalid(format!(
            "downsample factor {d} does not divide episode length {}",
            raw.len()
        )));
    }
    if d == 1 {
        return Ok(raw.to_vec());
    }
    Ok(raw
        .chunks_exact(d)
        .map(|block| block.iter().sum::<f64>() / d as f64)
        .collect())
}

/// Recorded H0 episodes after downsampling, one row per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDataset {
    episodes: Vec<Vec<f64>>,
    episode_len: usize,
    downsample: usize,
}

impl ReferenceDataset {
    /// Builds a dataset from episodes that are already at engine resolution.
    pub fn new(episodes: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_downsample(episodes, 1)
    }

    fn with_downsample(episodes: Vec<Vec<f64>>, downsample: usize) -> Result<Self> {
        let episode_len = match episodes.first() {
            Some(row) if !row.is_empty() => row.len(),
            Some(_) => return Err(Error::data("reference episodes are empty")),
            None => return Err(Error::InsufficientData("reference dataset has no episodes".into())),
        };
        for (i, row) in episodes.iter().enumerate() {
            if row.len() != episode_len {
                return Err(Error::data(format!(
                    "episode {} has length {} but episode 0 has length {episode_len}",
                    i,
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::data(format!("non-finite sample at episode {i}, step {}", j + 1)));
            }
        }
        Ok(Self {
            episodes,
            episode_len,
            downsample,
        })
    }

    /// Downsamples raw recorded episodes by `d` before storing them.
    pub fn from_raw(raw: Vec<Vec<f64>>, d: usize) -> Result<Self> {
        let rows = raw
            .iter()
            .map(|row| downsample(row, d))
            .collect::<Result<Vec<_>>>()?;
        Self::with_downsample(rows, d)
    }

    pub fn episodes(&self) -> &[Vec<f64>] {
        &self.episodes
    }

    pub fn episode(&self, i: usize) -> &[f64] {
        &self.episodes[i]
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn downsample_factor(&self) -> usize {
        self.downsample
    }
}

/// Inverse and weight row of one upper-left block of the episode covariance.
#[derive(Debug, Clone)]
pub struct TailBlock {
    pub inverse: DMatrix<f64>,
    /// `1^T * inverse`, the UDT weights for a partial episode of this length.
    pub weights: Vec<f64>,
}

/// H0 parameters of one episode: mean vector and covariance.
#[derive(Debug, Clone)]
pub struct EpisodeParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    cov_lower: DMatrix<f64>,
    weights: Vec<f64>,
    downsample: usize,
    ridge: Option<f64>,
    tails: Vec<OnceLock<TailBlock>>,
}

const IDENTITY_TOL: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-9;

/// Cholesky-based inverse that also enforces the `A * A^-1 ~ I` bound.
fn spd_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let chol = m.clone().cholesky()?;
    let inv = chol.inverse();
    let residual = (m * &inv - DMatrix::identity(m.nrows(), m.ncols())).amax();
    if !residual.is_finite() || residual > IDENTITY_TOL {
        return None;
    }
    Some((inv, chol.unpack()))
}

fn row_sums(m: &DMatrix<f64>) -> Vec<f64> {
    // symmetric, so column sums equal 1^T * m
    (0..m.ncols()).map(|j| m.column(j).sum()).collect()
}

impl EpisodeParams {
    /// Validates and caches a (mean, covariance) pair. No regularization.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::build(mean, cov, 1, None)
    }

    fn build(mean: Vec<f64>, cov: DMatrix<f64>, downsample: usize, ridge: Option<f64>) -> Result<Self> {
        let t = mean.len();
        if t == 0 {
            return Err(Error::invalid("episode length must be positive"));
        }
        if cov.nrows() != t || cov.ncols() != t {
            return Err(Error::invalid(format!(
                "covariance is {}x{} but the mean has length {t}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite entry in episode parameters"));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        let (cov_inv, cov_lower) =
            spd_inverse(&cov).ok_or(Error::NotPositiveDefinite { lambda: ridge.unwrap_or(0.0) })?;
        let weights = row_sums(&cov_inv);
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            cov_inv,
            cov_lower,
            weights,
            downsample,
            ridge,
            tails: (0..t).map(|_| OnceLock::new()).collect(),
        })
    }

    /// Unbiased sample mean and covariance of the reference episodes.
    ///
    /// A rank-deficient estimate gets a ridge `lambda * I`, starting at
    /// `1e-8 * trace / T` and growing tenfold up to `1e-2 * trace / T`.
    pub fn estimate(reference: &ReferenceDataset) -> Result<Self> {
        let n = reference.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "covariance estimation needs at least 2 episodes, got {n}"
            )));
        }
        let t = reference.episode_len();
        let mut mean = vec![0.0; t];
        for row in reference.episodes() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = DMatrix::<f64>::zeros(t, t);
        let mut centered = vec![0.0; t];
        for row in reference.episodes() {
            for ((c, x), m) in centered.iter_mut().zip(row).zip(&mean) {
                *c = x - m;
            }
            for i in 0..t {
                let ci = centered[i];
                for j in i..t {
                    cov[(i, j)] += ci * centered[j];
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..t {
            for j in i..t {
                let v = cov[(i, j)] / denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }

        let d = reference.downsample_factor();
        if spd_inverse(&cov).is_some() {
            return Self::build(mean, cov, d, None);
        }
        let base = cov.trace() / t as f64;
        let mut lambda = 1e-8 * base;
        while lambda <= 1e-2 * base * (1.0 + 1e-9) && lambda > 0.0 {
            let ridged = &cov + DMatrix::<f64>::identity(t, t) * lambda;
            if spd_inverse(&ridged).is_some() {
                return Self::build(mean, ridged, d, Some(lambda));
            }
            lambda *= 10.0;
        }
        Err(Error::NotPositiveDefinite { lambda: 1e-2 * base })
    }

    /// Replaces the recorded downsample factor (used when loading params files).
    pub fn with_downsample(mut self, d: usize) -> Self {
        self.downsample = d;
        self
    }

    /// Records the ridge that was already added to the covariance.
    pub fn with_ridge(mut self, ridge: Option<f64>) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn episode_len(&self) -> usize {
        self.mean.len()
    }

    pub fn downsample_factor(&self) -> usize {
        self.downsample
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cov_inv(&self) -> &DMatrix<f64> {
        &self.cov_inv
    }

    /// Lower Cholesky factor `L` with `L * L^T = cov`.
    pub fn cov_lower(&self) -> &DMatrix<f64> {
        &self.cov_lower
    }

    /// Ridge that was added during estimation, if any.
    pub fn ridge(&self) -> Option<f64> {
        self.ridge
    }

    /// `W0 = 1^T * cov^-1`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Per-step standard deviation at 1-based offset `tau`.
    pub fn step_std(&self, tau: usize) -> f64 {
        self.cov[(tau - 1, tau - 1)].max(0.0).sqrt()
    }

    /// Inverse of the upper-left `tau x tau` block, computed on first use.
    pub fn tail(&self, tau: usize) -> &TailBlock {
        assert!(tau >= 1 && tau <= self.episode_len(), "tail length {tau} out of range");
        self.tails[tau - 1].get_or_init(|| {
            if tau == self.episode_len() {
                return TailBlock {
                    inverse: self.cov_inv.clone(),
                    weights: self.weights.clone(),
                };
            }
            let block = self.cov.view((0, 0), (tau, tau)).into_owned();
            // principal sub-blocks of an SPD matrix are SPD; the inverse always exists
            let inverse = block
                .cholesky()
                .expect("principal block of SPD matrix")
                .inverse();
            let weights = row_sums(&inverse);
            TailBlock { inverse, weights }
        })
    }

    /// UDT weight vector `1^T * Sigma^-1` for a window of `n` samples
    /// starting at an episode boundary. Built block by block.
    pub fn expand_covariance_weights(&self, n: usize) -> Result<Vec<f64>> {
        let idx = decompose_index(n, self.episode_len())?;
        let mut w = Vec::with_capacity(n);
        for _ in 0..idx.k {
            w.extend_from_slice(&self.weights);
        }
        w.extend_from_slice(&self.tail(idx.tau).weights);
        Ok(w)
    }

    /// `1^T * cov * 1`.
    pub fn quad_cov(&self) -> f64 {
        self.cov.sum()
    }

    /// `1^T * cov^-1 * 1`.
    pub fn quad_inv(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn condition_number(&self) -> f64 {
        let eig = SymmetricEigen::new(self.cov.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        max / min
    }

    /// Mean per-step standard deviation `sqrt(trace / T)`.
    pub fn mean_step_std(&self) -> f64 {
        (self.cov.trace() / self.episode_len() as f64).sqrt()
    }

    /// Copy of these parameters with every mean entry shifted.
    pub fn shifted_mean(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.episode_len() {
            return Err(Error::invalid("mean shift length must equal T"));
        }
        let mean = self.mean.iter().zip(shift).map(|(m, s)| m + s).collect();
        Self::build(mean, self.cov.clone(), self.downsample, self.ridge)
    }
}
