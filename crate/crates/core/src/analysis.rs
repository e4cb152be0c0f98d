//! Numerical certificates for the stability argument: the observability
//! Gramian of the static-state system `η̄̇ = 0, ȳ = (ℒ_σ^{1/2} ⊗ Iₙ)Uη̄`, the
//! union-Gramian positivity per connectivity window, the contraction of
//! `V(η) = ½ηᵀQ⁻¹η` over windows, and decay-rate fits of error traces.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decomposition::kernel_coupling;
use crate::graph::{union_laplacian, SwitchingSchedule};
use crate::linalg;
use crate::simulation::{SimulationTrace, StateTrace};
use crate::{Error, Result};

/// Gramian of the η̄-system over `[t*, t* + T_o]`.
///
/// The transition matrix is the identity, so the integral is the exact sum of
/// piece durations times `Uᵀ(ℒ_p ⊗ Iₙ)U`.
pub fn bar_eta_gramian(us: &[DMatrix<f64>], schedule: &SwitchingSchedule, t_star: f64, t_o: f64) -> DMatrix<f64> {
    let couplings: Vec<DMatrix<f64>> = schedule.laplacians().iter().map(|l| kernel_coupling(us, l)).collect();
    gramian_with(&couplings, schedule, t_star, t_o, us.iter().map(|u| u.ncols()).sum())
}

fn gramian_with(couplings: &[DMatrix<f64>], schedule: &SwitchingSchedule, t_star: f64, t_o: f64, nu: usize) -> DMatrix<f64> {
    schedule
        .pieces(t_star, t_star + t_o)
        .iter()
        .fold(DMatrix::zeros(nu, nu), |acc, p| acc + &couplings[p.topology] * p.duration())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramianSample {
    pub t_star: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramianReport {
    pub t_o: f64,
    pub samples: Vec<GramianSample>,
    /// `None` when `ν = 0` (nothing to observe).
    pub alpha_1: Option<f64>,
    pub alpha_2: Option<f64>,
    pub valid: bool,
}

/// Sweeps `t*` over every switching instant and piece midpoint up to
/// `horizon − T_o` and bounds the Gramian eigenvalues.
pub fn uco_certify(us: &[DMatrix<f64>], schedule: &SwitchingSchedule, t_o: f64, horizon: f64) -> Result<GramianReport> {
    if !(t_o > 0.0) || !(horizon >= t_o) {
        return Err(Error::Domain(format!("need 0 < T_o = {t_o} <= horizon = {horizon}")));
    }
    let nu: usize = us.iter().map(|u| u.ncols()).sum();
    if nu == 0 {
        return Ok(GramianReport { t_o, samples: vec![], alpha_1: None, alpha_2: None, valid: true });
    }
    let couplings: Vec<DMatrix<f64>> = schedule.laplacians().iter().map(|l| kernel_coupling(us, l)).collect();
    let last = horizon - t_o;
    let mut grid = schedule.switching_instants(0.0, last);
    let mids: Vec<f64> = schedule.pieces(0.0, last).iter().map(|p| 0.5 * (p.start + p.end)).collect();
    grid.extend(mids);
    grid.push(last);
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let samples: Vec<GramianSample> = grid
        .into_iter()
        .map(|t_star| {
            let ev = linalg::symmetric_eigenvalues(&gramian_with(&couplings, schedule, t_star, t_o, nu));
            GramianSample { t_star, lambda_min: ev[0], lambda_max: ev[ev.len() - 1] }
        })
        .collect();
    let alpha_1 = samples.iter().map(|s| s.lambda_min).fold(f64::INFINITY, f64::min);
    let alpha_2 = samples.iter().map(|s| s.lambda_max).fold(f64::NEG_INFINITY, f64::max);
    let valid = alpha_1 > 1e-10 * alpha_2.max(1.0);
    Ok(GramianReport { t_o, samples, alpha_1: Some(alpha_1), alpha_2: Some(alpha_2), valid })
}

/// `λ_min(Uᵀ(Σ_r ℒ_σ(t_r) ⊗ Iₙ)U)` for every window; empty when `ν = 0`.
pub fn union_gramian_pd_check(us: &[DMatrix<f64>], schedule: &SwitchingSchedule, windows: &[(f64, f64)]) -> Result<Vec<f64>> {
    if us.iter().all(|u| u.ncols() == 0) {
        return Ok(Vec::new());
    }
    windows
        .iter()
        .map(|&(a, b)| Ok(linalg::symmetric_eigenvalues(&kernel_coupling(us, &union_laplacian(schedule, a, b)?))[0]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub t_o: f64,
    /// `(t*, V(η(t*+T_o)) / V(η(t*)))` for consecutive windows.
    pub ratios: Vec<(f64, f64)>,
    pub max_ratio: Option<f64>,
    /// Measured contraction `1 − max_ratio`.
    pub rho_obs: Option<f64>,
}

/// Ratios of `V(η) = ½ηᵀQ⁻¹η` across consecutive windows of length `T_o`,
/// evaluated at the samples nearest to `t* = k T_o`.
pub fn window_contraction(trace: &StateTrace, q: &DMatrix<f64>, t_o: f64) -> Result<ContractionReport> {
    if !(t_o > 0.0) {
        return Err(Error::Domain(format!("T_o = {t_o} must be positive")));
    }
    let mut report = ContractionReport { t_o, ratios: vec![], max_ratio: None, rho_obs: None };
    let Some(&t_last) = trace.times.last() else {
        return Ok(report);
    };
    if q.nrows() == 0 {
        return Ok(report);
    }
    let q_inv = q.clone().cholesky().ok_or(Error::NotSpd)?.inverse();
    let energy = |k: usize| 0.5 * trace.states[k].dot(&(&q_inv * &trace.states[k]));
    let nearest = |t: f64| {
        let k = trace.times.partition_point(|&s| s < t);
        if k == 0 {
            0
        } else if k == trace.times.len() || (t - trace.times[k - 1]) <= (trace.times[k] - t) {
            k - 1
        } else {
            k
        }
    };
    let mut k = 0u64;
    loop {
        let t0 = k as f64 * t_o;
        let t1 = t0 + t_o;
        if t1 > t_last + 1e-9 * t_o {
            break;
        }
        let v0 = energy(nearest(t0));
        if v0 > f64::MIN_POSITIVE {
            report.ratios.push((t0, energy(nearest(t1)) / v0));
        }
        k += 1;
    }
    report.max_ratio = report.ratios.iter().map(|r| r.1).reduce(f64::max);
    report.rho_obs = report.max_ratio.map(|m| 1.0 - m);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Fitted decay rate; `+∞` when the signal is identically zero.
    pub lambda: f64,
    pub c: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// Last time used by the fit; earlier than `window.1` when the envelope
    /// reached the noise floor.
    pub fitted_until: f64,
    pub all_zero: bool,
}

const LOG_FLOOR: f64 = 1e-300;

/// Relative roundoff level below which an error norm carries no rate information.
pub const REL_NOISE_FLOOR: f64 = 1e-12;

/// Least-squares fit of `log e(t) ≈ log c − λ t` on the running-maximum
/// envelope (maximum over the remaining window) of `values`.
pub fn fit_exponential_rate(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit> {
    fit_exponential_rate_above(times, values, window, 0.0)
}

/// As [`fit_exponential_rate`], but envelope samples below `floor` are
/// treated as zero and dropped. Since the envelope is nonincreasing this only
/// shortens the window; fewer than 10 remaining samples count as all-zero.
pub fn fit_exponential_rate_above(times: &[f64], values: &[f64], window: (f64, f64), floor: f64) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::Dimension("times and values differ in length".into()));
    }
    let (t_a, t_b) = window;
    let idx: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= t_a && times[k] <= t_b).collect();
    if idx.len() < 10 {
        return Err(Error::Domain(format!("only {} samples in window [{t_a}, {t_b}]", idx.len())));
    }
    let zero = RateFit { lambda: f64::INFINITY, c: 0.0, r_squared: 1.0, window, fitted_until: t_a, all_zero: true };
    if idx.iter().all(|&k| values[k] == 0.0) {
        return Ok(zero);
    }
    let mut env = vec![0.0; idx.len()];
    let mut running = 0.0_f64;
    for (slot, &k) in env.iter_mut().zip(&idx).rev() {
        running = running.max(values[k].abs());
        *slot = running;
    }
    let keep = env.iter().take_while(|&&e| e > floor).count();
    if keep < 10 {
        return Ok(zero);
    }
    let idx = &idx[..keep];
    let env: Vec<f64> = env[..keep].iter().map(|e| e.max(LOG_FLOOR).ln()).collect();
    let ts: Vec<f64> = idx.iter().map(|&k| times[k]).collect();
    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let y_mean = env.iter().sum::<f64>() / n;
    let sxx: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&env).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let ss_tot: f64 = env.iter().map(|y| (y - y_mean).powi(2)).sum();
    let ss_res: f64 = ts.iter().zip(&env).map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit { lambda: -slope, c: intercept.exp(), r_squared, window, fitted_until: ts[keep - 1], all_zero: false })
}

/// Per-agent rate fits of the estimation error norms in `trace`, with the
/// noise floor set relative to the largest initial error norm.
pub fn error_rate_fits(trace: &SimulationTrace, window: (f64, f64)) -> Result<Vec<RateFit>> {
    let scale = trace.error_norms.first().map_or(0.0, |e| e.iter().fold(0.0_f64, |m, v| m.max(*v)));
    let floor = REL_NOISE_FLOOR * scale.max(f64::MIN_POSITIVE);
    (0..trace.agents()).map(|i| fit_exponential_rate_above(&trace.times, &trace.error_series(i), window, floor)).collect()
}
