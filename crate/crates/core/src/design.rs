//! Local observer synthesis: pole placement on each agent's observable block,
//! then the injection matrix `Lᵢ = P Tᵢ [L_io; 0]` and the weighting matrix
//! `Mᵢ = P Tᵢ diag(0, I_νᵢ) Tᵢᵀ P⁻¹`.

use log::{debug, warn};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decomposition::{kalman_decompose, observability_rank, SubspaceDecomposition};
use crate::graph::{check_joint_connectivity, SwitchingSchedule};
use crate::linalg;
use crate::plant::{check_joint_observability, check_neutral_stability, skew_symmetrize, LtiPlant, SkewSymmetrizer, TOL_SKEW};
use crate::{Error, Result};

/// Placement accuracy, relative to the spectral radius of the targets.
pub const TOL_PLACE: f64 = 1e-6;
const SYLVESTER_RETRIES: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// `L_io`, shape `q × mᵢ`.
    pub gain: DMatrix<f64>,
    pub achieved: Vec<Complex<f64>>,
    /// Bottleneck distance between achieved and requested spectra.
    pub max_error: f64,
    pub tolerance: f64,
    pub well_conditioned: bool,
}

/// Default targets `−1 − k/2`, `k = 0..q`.
pub fn default_targets(q: usize) -> Vec<Complex<f64>> {
    (0..q).map(|k| Complex::new(-1.0 - k as f64 / 2.0, 0.0)).collect()
}

/// Chooses `L` so that `A − L C` has the requested spectrum.
///
/// Single-output pairs use Bass–Gura on the dual controllable pair; for
/// several outputs the dual Sylvester equation `AᵀX − XΛ = CᵀG` is solved for
/// a random `G` and `L = (G X⁻¹)ᵀ`.
pub fn place_poles(a: &DMatrix<f64>, c: &DMatrix<f64>, desired: &[Complex<f64>]) -> Result<Placement> {
    let q = a.nrows();
    if !a.is_square() || c.ncols() != q {
        return Err(Error::Dimension(format!("A is {:?}, C is {:?}", a.shape(), c.shape())));
    }
    if desired.len() != q {
        return Err(Error::Dimension(format!("{} target eigenvalues for a block of size {q}", desired.len())));
    }
    let m = c.nrows();
    if q == 0 {
        return Ok(Placement { gain: DMatrix::zeros(0, m), achieved: vec![], max_error: 0.0, tolerance: 0.0, well_conditioned: true });
    }
    if let Some(z) = desired.iter().find(|z| !(z.re < 0.0)) {
        return Err(Error::Domain(format!("target {z} is not in the open left half-plane")));
    }
    let radius = desired.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lambda = linalg::real_spectrum_matrix(desired, 1e-9 * radius.max(1.0))
        .ok_or_else(|| Error::Domain("targets are not closed under conjugation".into()))?;
    if observability_rank(c, a)? != q {
        return Err(Error::Unobservable);
    }

    let gain = if m == 1 { bass_gura(a, c, desired)? } else { sylvester_placement(a, c, &lambda)? };
    let achieved = linalg::eigenvalues(&(a - &gain * c));
    let max_error = linalg::bottleneck_distance(&achieved, desired);
    let tolerance = TOL_PLACE * radius;
    let well_conditioned = max_error <= tolerance;
    if !well_conditioned {
        warn!("pole placement residual {max_error:.3e} exceeds {tolerance:.3e}");
    }
    Ok(Placement { gain, achieved, max_error, tolerance, well_conditioned })
}

fn bass_gura(a: &DMatrix<f64>, c: &DMatrix<f64>, desired: &[Complex<f64>]) -> Result<DMatrix<f64>> {
    let q = a.nrows();
    // Dual pair (Aᵀ, Cᵀ): K = [α_q − a_q, …, α_1 − a_1] (𝒞 W)⁻¹, L = Kᵀ.
    let open = linalg::poly_from_roots(&linalg::eigenvalues(a));
    let closed = linalg::poly_from_roots(desired);
    let at = a.transpose();
    let mut ctrb = DMatrix::zeros(q, q);
    let mut col = c.transpose();
    for k in 0..q {
        ctrb.set_column(k, &col.column(0));
        col = &at * col;
    }
    let w = DMatrix::from_fn(q, q, |i, j| if i + j < q { open[q - 1 - i - j] } else { 0.0 });
    let diff = DMatrix::from_fn(1, q, |_, j| closed[q - j] - open[q - j]);
    let t = ctrb * w;
    let t_inv = t.try_inverse().ok_or(Error::Unobservable)?;
    Ok((diff * t_inv).transpose())
}

fn sylvester_placement(a: &DMatrix<f64>, c: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, m) = (a.nrows(), c.nrows());
    let at = a.transpose();
    for attempt in 0..SYLVESTER_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + attempt);
        let g = DMatrix::from_fn(m, q, |_, _| rng.gen_range(-1.0..1.0));
        let x = linalg::solve_sylvester(&at, lambda, &(c.transpose() * &g));
        if linalg::condition_number(&x) > 1e12 {
            debug!("sylvester attempt {attempt}: singular X, retrying");
            continue;
        }
        if let Some(x_inv) = x.try_inverse() {
            return Ok((g * x_inv).transpose());
        }
    }
    Err(Error::Domain(format!("sylvester placement failed after {SYLVESTER_RETRIES} attempts")))
}

/// `(Lᵢ, Mᵢ)` from the observable-block gain and the decomposition computed in
/// the coordinates of `skew`.
pub fn build_local_observer(
    skew: &SkewSymmetrizer,
    dec: &SubspaceDecomposition,
    l_o: &DMatrix<f64>,
    gamma: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = dec.n();
    let q = dec.observable_dim();
    if skew.p.nrows() != n || l_o.nrows() != q || l_o.ncols() != dec.c_obs.nrows() {
        return Err(Error::Dimension(format!(
            "P is {:?}, T is {n}x{n}, L_io is {:?} (expected {q} x {})",
            skew.p.shape(),
            l_o.shape(),
            dec.c_obs.nrows()
        )));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!("coupling gain {gamma} must be positive")));
    }
    let pt = &skew.p * &dec.t;
    let mut stacked = DMatrix::zeros(n, l_o.ncols());
    stacked.view_mut((0, 0), l_o.shape()).copy_from(l_o);
    let l = &pt * stacked;
    let mut selector = DMatrix::zeros(n, n);
    for k in q..n {
        selector[(k, k)] = 1.0;
    }
    let m = &pt * selector * dec.t.transpose() * &skew.p_inv;
    Ok((l, m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalObserver {
    pub gamma: f64,
    /// Injection matrix `Lᵢ`, `n × mᵢ`.
    pub l: DMatrix<f64>,
    /// Weighting matrix `Mᵢ`, `n × n`.
    pub m: DMatrix<f64>,
    pub targets: Vec<Complex<f64>>,
    pub placement: Placement,
    pub decomposition: SubspaceDecomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverBank {
    pub skew: SkewSymmetrizer,
    pub agents: Vec<LocalObserver>,
}

impl ObserverBank {
    pub fn n(&self) -> usize {
        self.skew.p.nrows()
    }

    pub fn gains(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.gamma).collect()
    }

    pub fn kernel_bases(&self) -> Vec<DMatrix<f64>> {
        self.agents.iter().map(|a| a.decomposition.u.clone()).collect()
    }

    pub fn unobservable_blocks(&self) -> Vec<DMatrix<f64>> {
        self.agents.iter().map(|a| a.decomposition.a_unobs.clone()).collect()
    }

    /// Total unobservable dimension `ν = Σ νᵢ`.
    pub fn nu(&self) -> usize {
        self.agents.iter().map(|a| a.decomposition.nu).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignOptions {
    /// Coupling gains; empty means 1 for every agent.
    pub gains: Vec<f64>,
    /// Per-agent targets for the observable block; `None` uses [`default_targets`].
    pub targets: Vec<Option<Vec<Complex<f64>>>>,
    /// Skew-symmetrize `A` first (needed whenever `A` is not already skew).
    pub use_p: bool,
}

/// Designs every local observer without checking the graph assumptions.
pub fn design_observers(plant: &LtiPlant, options: &DesignOptions) -> Result<ObserverBank> {
    let n_agents = plant.agents();
    let gains = if options.gains.is_empty() { vec![1.0; n_agents] } else { options.gains.clone() };
    if gains.len() != n_agents {
        return Err(Error::Dimension(format!("{} gains for {n_agents} agents", gains.len())));
    }
    if !options.targets.is_empty() && options.targets.len() != n_agents {
        return Err(Error::Dimension(format!("{} target lists for {n_agents} agents", options.targets.len())));
    }
    let skew = if options.use_p {
        skew_symmetrize(plant.a())?
    } else {
        let residual = linalg::skew_residual(plant.a());
        if residual > TOL_SKEW {
            return Err(Error::NotSkewSymmetric { residual });
        }
        SkewSymmetrizer::identity(plant.n())
    };

    let mut agents = Vec::with_capacity(n_agents);
    for (i, &gamma) in gains.iter().enumerate() {
        let dec = kalman_decompose(plant, i, &skew)?;
        let q = dec.observable_dim();
        let targets = options.targets.get(i).cloned().flatten().unwrap_or_else(|| default_targets(q));
        let placement = place_poles(&dec.a_obs, &dec.c_obs, &targets).map_err(|e| match e {
            Error::Placement { .. } => e,
            other => Error::Placement { agent: i + 1, reason: other.to_string() },
        })?;
        let (l, m) = build_local_observer(&skew, &dec, &placement.gain, gamma)?;
        debug!("agent {}: nu = {}, placement error {:.3e}", i + 1, dec.nu, placement.max_error);
        agents.push(LocalObserver { gamma, l, m, targets, placement, decomposition: dec });
    }
    Ok(ObserverBank { skew, agents })
}

/// Checks the plant and graph assumptions, then designs the bank.
pub fn assemble_bank(plant: &LtiPlant, schedule: &SwitchingSchedule, t_c: f64, options: &DesignOptions) -> Result<ObserverBank> {
    if schedule.nodes() != plant.agents() {
        return Err(Error::Dimension(format!("graph has {} nodes, plant has {} agents", schedule.nodes(), plant.agents())));
    }
    let report = check_neutral_stability(plant.a())?;
    if !report.is_neutrally_stable {
        return Err(Error::NotNeutrallyStable(Box::new(report)));
    }
    if !check_joint_observability(plant) {
        return Err(Error::Unobservable);
    }
    check_joint_connectivity(schedule, t_c)?;
    design_observers(plant, options)
}
