//! Browser bindings for the replica-access toolkit.
//!
//! Each exported function takes plain numbers and returns a JSON string, so
//! the page in `www/` needs no generated TypeScript glue beyond the loader.

use std::sync::Arc;

use replica_access::asymptotics::{h1_limit, hk_limit, stability_boundary, KSelection};
use replica_access::engine::{run, SystemConfig};
use replica_access::occupancy::{build_policy_table, optimal_replicas, prob_success_recursive, SuccessParams};
use replica_access::policies::Algorithm;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_CHANNELS: u32 = 256;
const MAX_SLOTS: u64 = 200_000;
const SERIES_POINTS: usize = 400;

#[derive(Debug, Serialize)]
pub struct SuccessCurve {
    pub replicas: Vec<u32>,
    pub success_prob: Vec<f64>,
    pub best_replicas: u32,
}

/// Delivery probability for every replica count `1..=M`.
pub fn success_curve(n_devices: u32, n_channels: u32, erasure_prob: f64) -> Result<SuccessCurve, String> {
    if n_channels == 0 || n_channels > MAX_CHANNELS {
        return Err(format!("M must lie in [1, {MAX_CHANNELS}]"));
    }
    let mut success_prob = Vec::with_capacity(n_channels as usize);
    for k in 1..=n_channels {
        let p = SuccessParams::new(n_devices, n_channels, erasure_prob, k).map_err(|e| e.to_string())?;
        success_prob.push(prob_success_recursive(&p));
    }
    let best = optimal_replicas(n_devices, n_channels, erasure_prob).map_err(|e| e.to_string())?;
    Ok(SuccessCurve { replicas: (1..=n_channels).collect(), success_prob, best_replicas: best.replicas })
}

#[derive(Debug, Serialize)]
pub struct BoundCurves {
    pub boundary: f64,
    pub load: Vec<f64>,
    pub h1: Vec<Option<f64>>,
    pub hk: Vec<Option<f64>>,
    pub hk_replicas: Vec<Option<u32>>,
}

/// Many-channel backlog limits on `points` loads up to the stability boundary.
pub fn bound_curves(erasure_prob: f64, k_max: u32, points: u32) -> Result<BoundCurves, String> {
    if !(0.0..1.0).contains(&erasure_prob) {
        return Err("gamma must lie in [0, 1)".into());
    }
    let points = points.clamp(2, 500);
    let boundary = stability_boundary(erasure_prob);
    let load: Vec<f64> = (1..=points).map(|i| boundary * f64::from(i) / f64::from(points + 1)).collect();
    let mut out = BoundCurves { boundary, load: load.clone(), h1: vec![], hk: vec![], hk_replicas: vec![] };
    for &l in &load {
        out.h1.push(h1_limit(l, erasure_prob).ok().map(|r| r.eta_star));
        let hk = hk_limit(l, erasure_prob, k_max.max(1), KSelection::MinBacklog).ok();
        out.hk.push(hk.map(|r| r.eta_star));
        out.hk_replicas.push(hk.map(|r| r.k_star));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub algorithm: String,
    pub mean_backlog_per_channel: f64,
    pub ci95: f64,
    pub mean_delay_slots: f64,
    pub throughput_per_channel: f64,
    pub mean_replicas: f64,
    pub bound: Option<f64>,
    /// Backlog per channel averaged over equal windows of the run.
    pub series: Vec<f64>,
}

/// One run of `algorithm` (`h1`, `hk`, `a1`, `ak` or `ak_mod`).
pub fn simulate(
    algorithm: &str,
    n_channels: u32,
    load: f64,
    erasure_prob: f64,
    slots: u64,
    seed: u64,
) -> Result<SimulationSummary, String> {
    let algorithm: Algorithm = algorithm.parse().map_err(|e: replica_access::policies::PolicyError| e.to_string())?;
    if n_channels == 0 || n_channels > MAX_CHANNELS {
        return Err(format!("M must lie in [1, {MAX_CHANNELS}]"));
    }
    let slots = slots.clamp(100, MAX_SLOTS);
    let mut cfg = SystemConfig::new(n_channels, load, erasure_prob, algorithm).with_horizon(slots, slots / 10);
    cfg.seed = seed;
    cfg.record_full_series = true;
    let table = if algorithm.uses_table() {
        Some(Arc::new(build_policy_table(n_channels, erasure_prob, 4 * n_channels).map_err(|e| e.to_string())?))
    } else {
        None
    };
    let mut controller = cfg.controller(table).map_err(|e| e.to_string())?;
    let m = run(&cfg, &mut controller).map_err(|e| e.to_string())?;
    let bound = match algorithm {
        Algorithm::H1 | Algorithm::A1 => h1_limit(load, erasure_prob).ok().map(|r| r.eta_star),
        _ => hk_limit(load, erasure_prob, n_channels.min(32), KSelection::MinBacklog).ok().map(|r| r.eta_star),
    };
    let window = m.backlog_series.len().div_ceil(SERIES_POINTS).max(1);
    let series = m
        .backlog_series
        .chunks(window)
        .map(|c| c.iter().map(|&b| f64::from(b)).sum::<f64>() / (c.len() as f64 * f64::from(n_channels)))
        .collect();
    Ok(SimulationSummary {
        algorithm: algorithm.to_string(),
        mean_backlog_per_channel: m.mean_backlog_per_channel,
        ci95: m.ci95_backlog,
        mean_delay_slots: m.mean_delay_slots,
        throughput_per_channel: m.throughput_per_channel,
        mean_replicas: m.mean_replicas,
        bound,
        series,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = successCurve)]
pub fn success_curve_js(n_devices: u32, n_channels: u32, erasure_prob: f64) -> Result<String, JsError> {
    to_js(success_curve(n_devices, n_channels, erasure_prob))
}

#[wasm_bindgen(js_name = boundCurves)]
pub fn bound_curves_js(erasure_prob: f64, k_max: u32, points: u32) -> Result<String, JsError> {
    to_js(bound_curves(erasure_prob, k_max, points))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(
    algorithm: &str,
    n_channels: u32,
    load: f64,
    erasure_prob: f64,
    slots: u32,
    seed: u32,
) -> Result<String, JsError> {
    to_js(simulate(algorithm, n_channels, load, erasure_prob, u64::from(slots), u64::from(seed)))
}
