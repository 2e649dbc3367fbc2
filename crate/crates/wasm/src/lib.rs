//! Browser bindings for the interactive demo in `www/`.
//!
//! Every export builds a synthetic queue scene from a seed, runs the tracker
//! on it and hands back a JSON string, so the page never has to know about
//! the Rust types. The functions without a `_json` suffix are plain Rust and
//! are what the tests exercise.

use faceqsort::metrics::{annotate_gt_ids, distribution_iou, score_distributions, score_histograms, ScoreSource};
use faceqsort::synth::{generate, Scenario, ScenarioSpec};
use faceqsort::tracker::run_sequence_detailed;
use faceqsort::harness::Study;
use faceqsort::{LambdaSetting, Result, TrackerConfig, TrackerEngine};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub assa: f64,
    pub idf1: f64,
    pub idsw_norm: f64,
}

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub source: &'static str,
    pub hi: f64,
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
    pub iou: f64,
}

#[derive(Debug, Serialize)]
pub struct ThetaPoint {
    pub theta: f64,
    pub assre: f64,
    pub asspr: f64,
}

fn scene(seed: u64, identities: usize, frames: u32, calibrated: bool) -> Result<Scenario> {
    let base = if calibrated { ScenarioSpec::calibrated(seed) } else { ScenarioSpec { seed, ..ScenarioSpec::default() } };
    generate(&ScenarioSpec { identities, frames, ..base })
}

/// AssA, IDF1 and normalised IDSW for `steps + 1` evenly spaced lambdas.
pub fn lambda_sweep(seed: u64, identities: usize, frames: u32, steps: usize) -> Result<Vec<SweepPoint>> {
    let s = scene(seed, identities, frames, false)?;
    let cfg = TrackerConfig::default();
    let steps = steps.max(1);
    let lambdas: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    let rows = Study::new(&s.frames, &s.gt, &cfg).sweep_fixed_lambda(&lambdas)?;
    Ok(lambdas
        .iter()
        .zip(rows)
        .map(|(&lambda, r)| SweepPoint {
            lambda,
            assa: r.report.hota.assa,
            idf1: r.report.idf1,
            idsw_norm: r.report.idsw_norm,
        })
        .collect())
}

/// Genuine and imposter cost histograms for the face, appearance and fused
/// costs the tracker actually computed at `lambda`.
pub fn score_histogram(seed: u64, identities: usize, frames: u32, lambda: f64, bins: usize) -> Result<Vec<Histogram>> {
    let s = scene(seed, identities, frames, false)?;
    let cfg = TrackerConfig { lambda: LambdaSetting::Fixed(lambda), ..TrackerConfig::default() };
    let mut engine = TrackerEngine::new(cfg)?;
    engine.enable_trace();
    let run = run_sequence_detailed(&mut engine, &s.frames)?;
    let ids = annotate_gt_ids(&s.frames, &s.gt, faceqsort::metrics::DEFAULT_ALPHA)?;
    [("bio", ScoreSource::Bio), ("app", ScoreSource::App), ("fused", ScoreSource::Fused)]
        .into_iter()
        .map(|(source, src)| {
            let d = score_distributions(&run.trace, &ids, src)?;
            let h = score_histograms(&d, bins)?;
            Ok(Histogram { source, hi: h.hi, genuine: h.genuine, imposter: h.imposter, iou: distribution_iou(&d, bins)? })
        })
        .collect()
}

/// Association recall and precision as the cost threshold moves, face cost only.
pub fn theta_trade(seed: u64, identities: usize, frames: u32, thetas: &[f64]) -> Result<Vec<ThetaPoint>> {
    let s = scene(seed, identities, frames, true)?;
    let cfg = TrackerConfig::default();
    let grid = Study::new(&s.frames, &s.gt, &cfg).theta_lambda_grid(thetas, &[1.0])?;
    Ok(grid
        .recall_precision_trace(1.0)
        .into_iter()
        .map(|(theta, assre, asspr)| ThetaPoint { theta, assre, asspr })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = lambdaSweep)]
pub fn lambda_sweep_json(seed: u32, identities: u32, frames: u32, steps: u32) -> std::result::Result<String, JsValue> {
    to_js(lambda_sweep(seed.into(), identities as usize, frames, steps as usize))
}

#[wasm_bindgen(js_name = scoreHistogram)]
pub fn score_histogram_json(
    seed: u32,
    identities: u32,
    frames: u32,
    lambda: f64,
    bins: u32,
) -> std::result::Result<String, JsValue> {
    to_js(score_histogram(seed.into(), identities as usize, frames, lambda, bins as usize))
}

#[wasm_bindgen(js_name = thetaTrade)]
pub fn theta_trade_json(seed: u32, identities: u32, frames: u32, thetas: Vec<f64>) -> std::result::Result<String, JsValue> {
    to_js(theta_trade(seed.into(), identities as usize, frames, &thetas))
}
