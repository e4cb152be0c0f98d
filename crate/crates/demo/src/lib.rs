//! Three operations behind `www/index.html`. Each returns JSON; the plain
//! functions are used by native tests and the `#[wasm_bindgen]` wrappers by
//! the page.

use nalgebra::Complex;
use serde::Serialize;
use swobs::analysis::{error_rate_fits, uco_certify};
use swobs::linalg;
use swobs::pipeline;
use swobs::scenario::three_inertia_scenario;
use wasm_bindgen::prelude::*;

const MAX_POINTS: usize = 800;

#[derive(Serialize)]
pub struct Run {
    pub times: Vec<f64>,
    /// `norms[i]` is agent `i + 1`'s error norm at `times`.
    pub norms: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    pub final_norms: Vec<f64>,
}

#[derive(Serialize)]
pub struct WindowBound {
    pub t_o: f64,
    pub alpha_1: f64,
    pub alpha_2: f64,
}

#[derive(Serialize)]
pub struct Spectrum {
    pub plant: Vec<(f64, f64)>,
    pub agents: Vec<AgentSpectrum>,
}

#[derive(Serialize)]
pub struct AgentSpectrum {
    pub observable_dim: usize,
    pub unobservable_dim: usize,
    pub achieved: Vec<(f64, f64)>,
    pub unobservable: Vec<(f64, f64)>,
}

fn check_params(k_over_j: f64, t_c: f64) -> Result<(), String> {
    if !(k_over_j > 0.0 && k_over_j <= 1e3) {
        return Err("k/J must be in (0, 1000]".into());
    }
    if !(0.1..=60.0).contains(&t_c) {
        return Err("T_c must be in [0.1, 60]".into());
    }
    Ok(())
}

/// Error norms of the three observers over `[0, t_end]`.
pub fn simulate(k_over_j: f64, t_c: f64, gains: [f64; 3], t_end: f64, seed: u64) -> Result<Run, String> {
    check_params(k_over_j, t_c)?;
    if !(t_end >= t_c && t_end <= 300.0) {
        return Err("T_end must be in [T_c, 300]".into());
    }
    let s = three_inertia_scenario(k_over_j, t_c, gains, t_end, seed);
    let bank = pipeline::design(&s).map_err(|e| e.to_string())?;
    let (trace, _) = pipeline::simulate(&s, &bank).map_err(|e| e.to_string())?;
    let fits = error_rate_fits(&trace, (t_c, t_end)).map_err(|e| e.to_string())?;
    let stride = trace.times.len().div_ceil(MAX_POINTS).max(1);
    let keep: Vec<usize> = (0..trace.times.len()).step_by(stride).chain([trace.times.len() - 1]).collect();
    Ok(Run {
        times: keep.iter().map(|&k| trace.times[k]).collect(),
        norms: (0..3).map(|i| keep.iter().map(|&k| trace.error_norms[k][i]).collect()).collect(),
        rates: fits.iter().map(|f| f.lambda).collect(),
        final_norms: trace.error_norms.last().cloned().unwrap_or_default(),
    })
}

/// Gramian eigenvalue bounds for window lengths `T_o = T_c/2, …, 4 T_c`.
pub fn gramian_bounds(k_over_j: f64, t_c: f64, steps: usize) -> Result<Vec<WindowBound>, String> {
    check_params(k_over_j, t_c)?;
    let steps = steps.clamp(2, 200);
    let s = three_inertia_scenario(k_over_j, t_c, [1.0; 3], 8.0 * t_c, 0);
    let bank = pipeline::design(&s).map_err(|e| e.to_string())?;
    let schedule = s.schedule().map_err(|e| e.to_string())?;
    let us = bank.kernel_bases();
    (0..steps)
        .map(|k| {
            let t_o = t_c * (0.5 + 3.5 * k as f64 / (steps - 1) as f64);
            let r = uco_certify(&us, &schedule, t_o, t_o + 2.0 * t_c).map_err(|e| e.to_string())?;
            Ok(WindowBound { t_o, alpha_1: r.alpha_1.unwrap_or(0.0), alpha_2: r.alpha_2.unwrap_or(0.0) })
        })
        .collect()
}

/// Plant eigenvalues, achieved observable-block spectra and the spectra of
/// the unobservable blocks.
pub fn spectrum(k_over_j: f64) -> Result<Spectrum, String> {
    check_params(k_over_j, 3.0)?;
    let s = three_inertia_scenario(k_over_j, 3.0, [1.0; 3], 3.0, 0);
    let plant = s.plant().map_err(|e| e.to_string())?;
    let bank = pipeline::design(&s).map_err(|e| e.to_string())?;
    let pairs = |z: Vec<Complex<f64>>| z.into_iter().map(|z| (z.re, z.im)).collect();
    Ok(Spectrum {
        plant: pairs(linalg::eigenvalues(plant.a())),
        agents: bank
            .agents
            .iter()
            .map(|a| AgentSpectrum {
                observable_dim: a.decomposition.observable_dim(),
                unobservable_dim: a.decomposition.nu,
                achieved: pairs(a.placement.achieved.clone()),
                unobservable: pairs(linalg::eigenvalues(&a.decomposition.a_unobs)),
            })
            .collect(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = simulateThreeInertia)]
pub fn simulate_js(k_over_j: f64, t_c: f64, g1: f64, g2: f64, g3: f64, t_end: f64, seed: u32) -> Result<String, JsValue> {
    to_js(simulate(k_over_j, t_c, [g1, g2, g3], t_end, u64::from(seed)))
}

#[wasm_bindgen(js_name = gramianBounds)]
pub fn gramian_bounds_js(k_over_j: f64, t_c: f64, steps: u32) -> Result<String, JsValue> {
    to_js(gramian_bounds(k_over_j, t_c, steps as usize))
}

#[wasm_bindgen(js_name = designSpectrum)]
pub fn spectrum_js(k_over_j: f64) -> Result<String, JsValue> {
    to_js(spectrum(k_over_j))
}
