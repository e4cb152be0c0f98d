//! Fixed-step RK4 integration of the plant and its local observers over a
//! switching schedule, plus the auxiliary η- and ζ-systems.
//!
//! Every switching instant is a grid point, so each step sees one constant
//! topology and the dynamics are linear time-invariant within it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decomposition::kernel_coupling;
use crate::design::ObserverBank;
use crate::graph::{laplacian, SwitchingSchedule};
use crate::linalg;
use crate::plant::LtiPlant;
use crate::{Error, Result};

/// Half-width of the uniform box used for random initial conditions.
pub const INITIAL_RANGE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub amplitude: f64,
    /// 0-based agents receiving the perturbation; empty means all.
    pub agents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub plant: DVector<f64>,
    pub observers: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub disturbance: Option<Disturbance>,
    pub initial: Option<InitialState>,
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64, seed: u64) -> Self {
        Self { dt, t_end, seed, disturbance: None, initial: None }
    }

    pub fn validate(&self, schedule: &SwitchingSchedule) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0 && self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::Domain(format!("dt = {} and T_end = {} must be positive", self.dt, self.t_end)));
        }
        if self.dt > schedule.dwell() / 2.0 + 1e-15 {
            return Err(Error::Domain(format!("dt = {} exceeds half the dwell time {}", self.dt, schedule.dwell())));
        }
        if let Some(d) = &self.disturbance {
            if !(d.amplitude.is_finite() && d.amplitude >= 0.0) {
                return Err(Error::Domain("disturbance amplitude must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// One integration interval; never straddles a switching instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub topology: usize,
}

/// Sample grid: every multiple of `dt` up to `t_end`, every switching instant,
/// and `t_end` itself.
pub fn sample_times(schedule: &SwitchingSchedule, dt: f64, t_end: f64) -> Vec<f64> {
    let steps = (t_end / dt + 1e-9).floor() as usize;
    let mut ts: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    ts.extend(schedule.switching_instants(0.0, t_end));
    ts.push(t_end);
    ts.sort_by(f64::total_cmp);
    let merge = 1e-9 * dt;
    let mut out: Vec<f64> = Vec::with_capacity(ts.len());
    for t in ts {
        match out.last_mut() {
            Some(last) if t - *last <= merge => {
                // Prefer exact switching instants / t_end over accumulated multiples.
                if t == t_end || schedule.switching_instants(t, t).len() == 1 {
                    *last = t;
                }
            }
            _ => out.push(t),
        }
    }
    out.retain(|&t| t <= t_end);
    out
}

pub fn integration_segments(schedule: &SwitchingSchedule, dt: f64, t_end: f64) -> Vec<Segment> {
    let ts = sample_times(schedule, dt, t_end);
    ts.windows(2)
        .map(|w| Segment {
            t0: w[0],
            t1: w[1],
            topology: schedule.active_index(0.5 * (w[0] + w[1])).expect("non-negative times"),
        })
        .collect()
}

type Forcing<'a> = dyn Fn(f64, &mut DVector<f64>) + 'a;

/// RK4 over `segments` for `ẏ = F_p y + d(t)`; calls `record` at every grid point.
fn integrate(
    segments: &[Segment],
    systems: &[DMatrix<f64>],
    forcing: Option<&Forcing<'_>>,
    y0: DVector<f64>,
    mut record: impl FnMut(f64, &DVector<f64>),
) -> Result<()> {
    let dim = y0.len();
    let mut y = y0;
    record(segments.first().map_or(0.0, |s| s.t0), &y);
    let (mut k1, mut k2, mut k3, mut k4) = (DVector::zeros(dim), DVector::zeros(dim), DVector::zeros(dim), DVector::zeros(dim));
    let mut tmp = DVector::zeros(dim);
    let mut force = DVector::zeros(dim);
    let eval = |f: &DMatrix<f64>, t: f64, y: &DVector<f64>, out: &mut DVector<f64>, force: &mut DVector<f64>| {
        out.gemv(1.0, f, y, 0.0);
        if let Some(d) = forcing {
            d(t, force);
            *out += &*force;
        }
    };
    for seg in segments {
        let f = &systems[seg.topology];
        let (t, h) = (seg.t0, seg.t1 - seg.t0);
        eval(f, t, &y, &mut k1, &mut force);
        tmp.copy_from(&y);
        tmp.axpy(0.5 * h, &k1, 1.0);
        eval(f, t + 0.5 * h, &tmp, &mut k2, &mut force);
        tmp.copy_from(&y);
        tmp.axpy(0.5 * h, &k2, 1.0);
        eval(f, t + 0.5 * h, &tmp, &mut k3, &mut force);
        tmp.copy_from(&y);
        tmp.axpy(h, &k3, 1.0);
        eval(f, t + h, &tmp, &mut k4, &mut force);
        y.axpy(h / 6.0, &k1, 1.0);
        y.axpy(h / 3.0, &k2, 1.0);
        y.axpy(h / 3.0, &k3, 1.0);
        y.axpy(h / 6.0, &k4, 1.0);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { last_time: seg.t0 });
        }
        record(seg.t1, &y);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub plant_states: Vec<DVector<f64>>,
    /// `observer_states[k][i]` is agent `i`'s estimate at `times[k]`.
    pub observer_states: Vec<Vec<DVector<f64>>>,
    pub error_norms: Vec<Vec<f64>>,
    /// 0-based active topology at each sample.
    pub active_topology: Vec<usize>,
}

impl SimulationTrace {
    pub fn agents(&self) -> usize {
        self.observer_states.first().map_or(0, Vec::len)
    }

    /// Error norm series of agent `i`.
    pub fn error_series(&self, i: usize) -> Vec<f64> {
        self.error_norms.iter().map(|e| e[i]).collect()
    }

    /// `x̂ᵢ − x` at sample `k`.
    pub fn error(&self, k: usize, i: usize) -> DVector<f64> {
        &self.observer_states[k][i] - &self.plant_states[k]
    }
}

/// Uniform initial plant and observer states in `[−5, 5]` drawn from `seed`.
pub fn random_initial_state(n: usize, agents: usize, seed: u64) -> InitialState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || DVector::from_fn(n, |_, _| rng.gen_range(-INITIAL_RANGE..=INITIAL_RANGE));
    let plant = draw();
    let observers = (0..agents).map(|_| draw()).collect();
    InitialState { plant, observers }
}

/// Bounded sinusoidal perturbation, one frequency/phase per component.
fn disturbance_signal(d: &Disturbance, n: usize, agents: usize, seed: u64) -> impl Fn(f64, usize, &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd157_0b5e);
    let params: Vec<(f64, f64)> =
        (0..n * agents).map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(0.0..std::f64::consts::TAU))).collect();
    let active: Vec<bool> = (0..agents).map(|i| d.agents.is_empty() || d.agents.contains(&i)).collect();
    let amp = d.amplitude;
    move |t, agent, out| {
        for (k, o) in out.iter_mut().enumerate() {
            let (w, phi) = params[agent * n + k];
            *o = if active[agent] { amp * (w * t + phi).sin() } else { 0.0 };
        }
    }
}

fn check_bank(plant: &LtiPlant, bank: &ObserverBank, schedule: &SwitchingSchedule) -> Result<()> {
    if bank.n() != plant.n() || bank.agents.len() != plant.agents() || schedule.nodes() != plant.agents() {
        return Err(Error::Dimension(format!(
            "plant n = {}, N = {}; bank n = {}, N = {}; graph nodes = {}",
            plant.n(),
            plant.agents(),
            bank.n(),
            bank.agents.len(),
            schedule.nodes()
        )));
    }
    for (i, obs) in bank.agents.iter().enumerate() {
        if obs.l.shape() != (plant.n(), plant.partition()[i]) {
            return Err(Error::Dimension(format!("agent {} injection matrix is {:?}", i + 1, obs.l.shape())));
        }
    }
    Ok(())
}

/// Closed-loop matrix of the stacked state `[x; x̂₁; …; x̂_N]` for each topology.
fn network_matrices(plant: &LtiPlant, bank: &ObserverBank, schedule: &SwitchingSchedule) -> Vec<DMatrix<f64>> {
    let (n, agents) = (plant.n(), plant.agents());
    let a = plant.a();
    let lc: Vec<DMatrix<f64>> = bank.agents.iter().enumerate().map(|(i, o)| &o.l * plant.c_block(i)).collect();
    schedule
        .laplacians()
        .iter()
        .map(|lap| {
            let mut f = DMatrix::zeros((agents + 1) * n, (agents + 1) * n);
            f.view_mut((0, 0), (n, n)).copy_from(a);
            for (i, obs) in bank.agents.iter().enumerate() {
                let r = (i + 1) * n;
                f.view_mut((r, 0), (n, n)).copy_from(&lc[i]);
                f.view_mut((r, r), (n, n)).copy_from(&(a - &lc[i]));
                for j in 0..agents {
                    if lap[(i, j)] != 0.0 {
                        let c = (j + 1) * n;
                        let block = f.view((r, c), (n, n)) - &obs.m * (obs.gamma * lap[(i, j)]);
                        f.view_mut((r, c), (n, n)).copy_from(&block);
                    }
                }
            }
            f
        })
        .collect()
}

/// Integrates the plant and all local observers.
pub fn simulate_network(plant: &LtiPlant, bank: &ObserverBank, schedule: &SwitchingSchedule, config: &SimConfig) -> Result<SimulationTrace> {
    config.validate(schedule)?;
    check_bank(plant, bank, schedule)?;
    let (n, agents) = (plant.n(), plant.agents());
    let init = config.initial.clone().unwrap_or_else(|| random_initial_state(n, agents, config.seed));
    if init.plant.len() != n || init.observers.len() != agents || init.observers.iter().any(|v| v.len() != n) {
        return Err(Error::Dimension("initial state does not match plant".into()));
    }
    let mut y0 = DVector::zeros((agents + 1) * n);
    y0.rows_mut(0, n).copy_from(&init.plant);
    for (i, v) in init.observers.iter().enumerate() {
        y0.rows_mut((i + 1) * n, n).copy_from(v);
    }

    let systems = network_matrices(plant, bank, schedule);
    let segments = integration_segments(schedule, config.dt, config.t_end);
    let signal = config.disturbance.as_ref().map(|d| disturbance_signal(d, n, agents, config.seed));
    let forcing = signal.as_ref().map(|sig| {
        move |t: f64, out: &mut DVector<f64>| {
            out.rows_mut(0, n).fill(0.0);
            for i in 0..agents {
                sig(t, i, &mut out.as_mut_slice()[(i + 1) * n..(i + 2) * n]);
            }
        }
    });

    let cap = segments.len() + 1;
    let mut trace = SimulationTrace {
        times: Vec::with_capacity(cap),
        plant_states: Vec::with_capacity(cap),
        observer_states: Vec::with_capacity(cap),
        error_norms: Vec::with_capacity(cap),
        active_topology: Vec::with_capacity(cap),
    };
    integrate(&segments, &systems, forcing.as_ref().map(|f| f as &Forcing<'_>), y0, |t, y| {
        let x = y.rows(0, n).into_owned();
        let est: Vec<DVector<f64>> = (0..agents).map(|i| y.rows((i + 1) * n, n).into_owned()).collect();
        trace.error_norms.push(est.iter().map(|e| (e - &x).norm()).collect());
        trace.times.push(t);
        trace.plant_states.push(x);
        trace.observer_states.push(est);
        trace.active_topology.push(schedule.active_index(t).expect("non-negative"));
    })?;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCoordinateTrace {
    pub times: Vec<f64>,
    /// `xi_obs[k][i]` is `ξ_io` of agent `i` at `times[k]`.
    pub xi_obs: Vec<Vec<DVector<f64>>>,
    pub xi_unobs: Vec<Vec<DVector<f64>>>,
    /// `P Tᵢ` per agent, mapping `[ξ_io; ξ_iō]` back to `eᵢ`.
    pub reconstruction: Vec<DMatrix<f64>>,
    pub active_topology: Vec<usize>,
}

impl ErrorCoordinateTrace {
    /// `eᵢ = P Tᵢ [ξ_io; ξ_iō]` at sample `k`.
    pub fn error(&self, k: usize, i: usize) -> DVector<f64> {
        let xi = DVector::from_iterator(
            self.reconstruction[i].ncols(),
            self.xi_obs[k][i].iter().chain(self.xi_unobs[k][i].iter()).copied(),
        );
        &self.reconstruction[i] * xi
    }
}

/// Integrates the error dynamics directly in the decoupled coordinates
/// `[ξ_io; ξ_iō] = Tᵢᵀ P⁻¹ eᵢ`.
pub fn simulate_error_coordinates(
    plant: &LtiPlant,
    bank: &ObserverBank,
    schedule: &SwitchingSchedule,
    config: &SimConfig,
    e0: &[DVector<f64>],
) -> Result<ErrorCoordinateTrace> {
    config.validate(schedule)?;
    check_bank(plant, bank, schedule)?;
    let (n, agents) = (plant.n(), plant.agents());
    if e0.len() != agents || e0.iter().any(|e| e.len() != n) {
        return Err(Error::Dimension("initial errors do not match plant".into()));
    }
    let p_inv = &bank.skew.p_inv;
    let ts: Vec<&DMatrix<f64>> = bank.agents.iter().map(|a| &a.decomposition.t).collect();
    let qs: Vec<usize> = bank.agents.iter().map(|a| a.decomposition.observable_dim()).collect();

    let mut y0 = DVector::zeros(agents * n);
    for i in 0..agents {
        y0.rows_mut(i * n, n).copy_from(&(ts[i].transpose() * p_inv * &e0[i]));
    }

    let systems: Vec<DMatrix<f64>> = schedule
        .laplacians()
        .iter()
        .map(|lap| {
            let mut f = DMatrix::zeros(agents * n, agents * n);
            for (i, obs) in bank.agents.iter().enumerate() {
                let dec = &obs.decomposition;
                let (r, q) = (i * n, qs[i]);
                let closed = &dec.a_obs - &obs.placement.gain * &dec.c_obs;
                f.view_mut((r, r), (q, q)).copy_from(&closed);
                f.view_mut((r + q, r + q), (dec.nu, dec.nu)).copy_from(&dec.a_unobs);
                if dec.nu == 0 {
                    continue;
                }
                for j in 0..agents {
                    if lap[(i, j)] != 0.0 {
                        let c = j * n;
                        let coupling = dec.u.transpose() * ts[j] * (obs.gamma * lap[(i, j)]);
                        let block = f.view((r + q, c), (dec.nu, n)) - coupling;
                        f.view_mut((r + q, c), (dec.nu, n)).copy_from(&block);
                    }
                }
            }
            f
        })
        .collect();

    let segments = integration_segments(schedule, config.dt, config.t_end);
    let signal = config.disturbance.as_ref().map(|d| disturbance_signal(d, n, agents, config.seed));
    let maps: Vec<DMatrix<f64>> = ts.iter().map(|t| t.transpose() * p_inv).collect();
    let forcing = signal.as_ref().map(|sig| {
        let maps = &maps;
        move |t: f64, out: &mut DVector<f64>| {
            let mut d = vec![0.0; n];
            for i in 0..agents {
                sig(t, i, &mut d);
                out.rows_mut(i * n, n).copy_from(&(&maps[i] * DVector::from_column_slice(&d)));
            }
        }
    });

    let mut trace = ErrorCoordinateTrace {
        times: Vec::new(),
        xi_obs: Vec::new(),
        xi_unobs: Vec::new(),
        reconstruction: ts.iter().map(|t| &bank.skew.p * *t).collect(),
        active_topology: Vec::new(),
    };
    integrate(&segments, &systems, forcing.as_ref().map(|f| f as &Forcing<'_>), y0, |t, y| {
        trace.times.push(t);
        trace.xi_obs.push((0..agents).map(|i| y.rows(i * n, qs[i]).into_owned()).collect());
        trace.xi_unobs.push((0..agents).map(|i| y.rows(i * n + qs[i], n - qs[i]).into_owned()).collect());
        trace.active_topology.push(schedule.active_index(t).expect("non-negative"));
    })?;
    Ok(trace)
}

/// Trace of an auxiliary switched system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub active_topology: Vec<usize>,
}

impl StateTrace {
    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.norm()).collect()
    }
}

fn run_switched(schedule: &SwitchingSchedule, config: &SimConfig, systems: &[DMatrix<f64>], x0: &DVector<f64>) -> Result<StateTrace> {
    config.validate(schedule)?;
    let segments = integration_segments(schedule, config.dt, config.t_end);
    let mut trace = StateTrace { times: Vec::new(), states: Vec::new(), active_topology: Vec::new() };
    integrate(&segments, systems, None, x0.clone(), |t, y| {
        trace.times.push(t);
        trace.states.push(y.clone());
        trace.active_topology.push(schedule.active_index(t).expect("non-negative"));
    })?;
    Ok(trace)
}

fn check_kernels(us: &[DMatrix<f64>], schedule: &SwitchingSchedule, x0: &DVector<f64>) -> Result<usize> {
    if us.len() != schedule.nodes() {
        return Err(Error::Dimension(format!("{} kernel bases for {} graph nodes", us.len(), schedule.nodes())));
    }
    let nu: usize = us.iter().map(|u| u.ncols()).sum();
    if x0.len() != nu {
        return Err(Error::Dimension(format!("initial state has length {}, expected {nu}", x0.len())));
    }
    Ok(nu)
}

/// `η̇ = −Q Uᵀ(ℒ_σ(t) ⊗ Iₙ)U η`.
pub fn simulate_eta_system(
    us: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    schedule: &SwitchingSchedule,
    config: &SimConfig,
    eta0: &DVector<f64>,
) -> Result<StateTrace> {
    let nu = check_kernels(us, schedule, eta0)?;
    if q.shape() != (nu, nu) {
        return Err(Error::Dimension(format!("Q is {:?}, expected {nu}x{nu}", q.shape())));
    }
    if nu > 0 && ((q - q.transpose()).norm() > 1e-12 * q.norm() || q.clone().cholesky().is_none()) {
        return Err(Error::NotSpd);
    }
    let systems: Vec<DMatrix<f64>> = schedule.topologies().iter().map(|t| -(q * kernel_coupling(us, &laplacian(t)))).collect();
    run_switched(schedule, config, &systems, eta0)
}

/// `ζ̇ = (A_ō − Γ Uᵀ(ℒ_σ(t) ⊗ Iₙ)U) ζ` with `Γ = blockdiag(γᵢ I_νᵢ)`.
pub fn simulate_zeta_system(
    a_unobs: &[DMatrix<f64>],
    gammas: &[f64],
    us: &[DMatrix<f64>],
    schedule: &SwitchingSchedule,
    config: &SimConfig,
    zeta0: &DVector<f64>,
) -> Result<StateTrace> {
    let nu = check_kernels(us, schedule, zeta0)?;
    if a_unobs.len() != us.len() || gammas.len() != us.len() || a_unobs.iter().zip(us).any(|(a, u)| a.shape() != (u.ncols(), u.ncols())) {
        return Err(Error::Dimension("unobservable blocks, gains and kernels disagree".into()));
    }
    if gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::Domain("coupling gains must be positive".into()));
    }
    let a_bar = linalg::block_diag(a_unobs);
    let gamma = gamma_matrix(us, gammas);
    debug_assert_eq!(a_bar.nrows(), nu);
    let systems: Vec<DMatrix<f64>> =
        schedule.topologies().iter().map(|t| &a_bar - &gamma * kernel_coupling(us, &laplacian(t))).collect();
    run_switched(schedule, config, &systems, zeta0)
}

/// `Γ = blockdiag(γ₁ I_ν₁, …, γ_N I_ν_N)`.
pub fn gamma_matrix(us: &[DMatrix<f64>], gammas: &[f64]) -> DMatrix<f64> {
    let diag: Vec<f64> = us.iter().zip(gammas).flat_map(|(u, &g)| std::iter::repeat_n(g, u.ncols())).collect();
    DMatrix::from_diagonal(&DVector::from_vec(diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;

    fn schedule() -> SwitchingSchedule {
        let t1 = Topology::new(3, &[(0, 1, 1.0)]).unwrap();
        let t2 = Topology::new(3, &[(1, 2, 1.0)]).unwrap();
        SwitchingSchedule::periodic(vec![t1, t2], &[(1.0, 0), (2.0, 1)], 1.0).unwrap()
    }

    #[test]
    fn grid_contains_switching_instants() {
        let ts = sample_times(&schedule(), 0.3, 7.0);
        for s in [0.0, 1.0, 3.0, 4.0, 6.0, 7.0] {
            assert!(ts.contains(&s), "missing {s}");
        }
        assert!(ts.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 0.3 + 1e-12));
    }

    #[test]
    fn segments_never_straddle_a_switch() {
        let s = schedule();
        for seg in integration_segments(&s, 0.07, 10.0) {
            let inside = s.switching_instants(seg.t0, seg.t1);
            assert!(inside.iter().all(|&t| t == seg.t0 || t == seg.t1));
            assert_eq!(s.active_index(seg.t0).unwrap(), seg.topology);
        }
    }

    #[test]
    fn dt_larger_than_half_dwell_rejected() {
        let cfg = SimConfig::new(0.6, 5.0, 0);
        assert!(cfg.validate(&schedule()).is_err());
    }

    #[test]
    fn eta_rejects_indefinite_q() {
        let us = vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1), DMatrix::identity(1, 1)];
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        let r = simulate_eta_system(&us, &q, &schedule(), &SimConfig::new(0.1, 1.0, 0), &DVector::zeros(3));
        assert!(matches!(r, Err(Error::NotSpd)));
    }

    #[test]
    fn eta_with_empty_kernel_is_vacuous() {
        let us = vec![DMatrix::zeros(2, 0), DMatrix::zeros(2, 0), DMatrix::zeros(2, 0)];
        let tr = simulate_eta_system(&us, &DMatrix::zeros(0, 0), &schedule(), &SimConfig::new(0.1, 1.0, 0), &DVector::zeros(0)).unwrap();
        assert!(tr.states.iter().all(|s| s.is_empty()));
    }
}
