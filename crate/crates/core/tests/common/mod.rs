#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use epimon::episodic_model::{EpisodeParams, ReferenceDataset};
use epimon::synthetic_lab::{random_spd, Scenario};

pub fn params(mean: Vec<f64>, cov: DMatrix<f64>) -> EpisodeParams {
    EpisodeParams::new(mean, cov).unwrap()
}

pub fn diag(mean: Vec<f64>, var: &[f64]) -> EpisodeParams {
    params(mean, DMatrix::from_diagonal(&DVector::from_row_slice(var)))
}

pub fn spd_params(t: usize, cond: f64, seed: u64) -> EpisodeParams {
    let mean = (0..t).map(|i| (i as f64 * 0.7).cos()).collect();
    params(mean, random_spd(t, cond, seed).unwrap())
}

pub fn reference(truth: &EpisodeParams, n: usize, seed: u64) -> ReferenceDataset {
    ReferenceDataset::new(Scenario::h0(truth.clone(), seed).episodes(0, n).unwrap()).unwrap()
}

/// Random SPD parameters: dimension, condition number and seed.
pub fn arb_params(max_t: usize) -> impl Strategy<Value = EpisodeParams> {
    (1..=max_t, 0.0..3.0f64, any::<u64>()).prop_map(|(t, lc, seed)| spd_params(t, 10f64.powf(lc), seed))
}
