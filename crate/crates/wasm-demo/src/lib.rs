//! Browser bindings for the interactive demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no generated glue beyond `wasm-bindgen`'s own.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use epimon::episodic_model::{EpisodeParams, ReferenceDataset};
use epimon::monitor::run_block;
use epimon::synthetic_lab::{asymptotic_power, power_gain, random_spd, Scenario, ScenarioKind};
use epimon::{bfar_tune, MonitorPlan, MonitorState, StatisticKind};

fn demo_params(t: usize, cond: f64, seed: u64) -> epimon::Result<EpisodeParams> {
    let mean = (0..t).map(|i| (i as f64 / t as f64 * std::f64::consts::PI).sin()).collect();
    EpisodeParams::new(mean, random_spd(t, cond, seed)?)
}

#[derive(Serialize)]
struct CurvePoint {
    epsilon: f64,
    mean: f64,
    udt: f64,
}

#[derive(Serialize)]
struct Curves {
    gain: f64,
    curve: Vec<CurvePoint>,
}

pub fn power_curves_json(t: usize, cond: f64, seed: u64, alpha: f64, points: usize) -> Result<String, String> {
    let params = demo_params(t, cond, seed).map_err(|e| e.to_string())?;
    let gain = power_gain(&params).map_err(|e| e.to_string())?.direct;
    // span until the Mean test is past 99% power
    let eps_max = 5.0 * params.quad_cov().sqrt() / t as f64;
    let points = points.max(2);
    let curve = (0..points)
        .map(|i| {
            let epsilon = eps_max * i as f64 / (points - 1) as f64;
            let p = asymptotic_power(&params, epsilon, alpha)?;
            Ok(CurvePoint {
                epsilon,
                mean: p.mean,
                udt: p.udt,
            })
        })
        .collect::<epimon::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&Curves { gain, curve }).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Weights {
    weights: Vec<f64>,
    std: Vec<f64>,
    condition: f64,
}

pub fn udt_weights_json(t: usize, cond: f64, seed: u64) -> Result<String, String> {
    let params = demo_params(t, cond, seed).map_err(|e| e.to_string())?;
    let out = Weights {
        weights: params.weights().to_vec(),
        std: (0..t).map(|i| params.cov()[(i, i)].sqrt()).collect(),
        condition: params.condition_number(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Trace {
    threshold: f64,
    episode_len: usize,
    onset: usize,
    samples: Vec<f64>,
    points: Vec<(usize, f64)>,
    detection: Option<epimon::DetectionRecord>,
}

/// Tunes a small UDT + Mean monitor and runs it over one stream whose mean
/// drops by `epsilon_sigma` step deviations from episode `onset` on.
pub fn monitor_trace_json(
    t: usize,
    cond: f64,
    seed: u64,
    epsilon_sigma: f64,
    onset: usize,
    episodes: usize,
) -> Result<String, String> {
    let run = || -> epimon::Result<Trace> {
        let truth = demo_params(t, cond, seed)?;
        let reference = ReferenceDataset::new(Scenario::h0(truth.clone(), seed ^ 1).episodes(0, 300)?)?;
        let params = EpisodeParams::estimate(&reference)?;
        let plan = MonitorPlan {
            statistics: vec![StatisticKind::Mean, StatisticKind::Udt],
            horizons: vec![1, 3],
            test_frequency: if t % 2 == 0 { 2 } else { 1 },
            h_tilde: episodes.max(1),
            alpha0: 0.1,
            b_outer: 200,
            b_inner: 4999,
            seed,
        };
        let tuned = bfar_tune(&reference, &params, &plan)?;
        let h0 = Scenario::h0(truth.clone(), seed ^ 2);
        let drop = Scenario::new(
            truth.clone(),
            ScenarioKind::Uniform {
                epsilon: epsilon_sigma * truth.mean_step_std(),
            },
            seed ^ 2,
        )?;
        let total = plan.h_max() + episodes;
        let onset = onset.min(total);
        let mut samples = h0.stream(0, onset)?;
        samples.extend(drop.stream(onset, total - onset)?);
        let mut state = MonitorState::new(&tuned);
        let report = run_block(&mut state, &samples)?;
        Ok(Trace {
            threshold: tuned.p_threshold,
            episode_len: t,
            onset,
            samples,
            points: report.trace.iter().map(|p| (p.t, p.min_p)).collect(),
            detection: report.detection,
        })
    };
    let trace = run().map_err(|e| e.to_string())?;
    serde_json::to_string(&trace).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn power_curves(t: usize, cond: f64, seed: u32, alpha: f64, points: usize) -> Result<String, JsValue> {
    power_curves_json(t, cond, seed as u64, alpha, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn udt_weights(t: usize, cond: f64, seed: u32) -> Result<String, JsValue> {
    udt_weights_json(t, cond, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn monitor_trace(
    t: usize,
    cond: f64,
    seed: u32,
    epsilon_sigma: f64,
    onset: usize,
    episodes: usize,
) -> Result<String, JsValue> {
    monitor_trace_json(t, cond, seed as u64, epsilon_sigma, onset, episodes).map_err(|e| JsValue::from_str(&e))
}
