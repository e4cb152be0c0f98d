//! Artifacts passed between pipeline stages: the design report (JSON), the
//! simulation trace (CSV), and the simulation and analysis summaries.
//!
//! Files number agents and topologies from 1.

use std::io::{Read, Write};

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{ContractionReport, GramianReport, RateFit};
use crate::decomposition::{observability_matrix, SubspaceDecomposition};
use crate::design::{build_local_observer, LocalObserver, ObserverBank, Placement};
use crate::graph::SwitchingSchedule;
use crate::linalg;
use crate::plant::{LtiPlant, SkewSymmetrizer};
use crate::simulation::SimulationTrace;
use crate::{Error, Result};

/// Relative mismatch tolerated when a loaded design is re-derived.
const TOL_RELOAD: f64 = 1e-8;

type Rows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Rows {
    crate::scenario::matrix_to_rows(m)
}

fn matrix(r: &Rows, shape: (usize, usize), what: &str) -> Result<DMatrix<f64>> {
    let (nr, nc) = shape;
    if r.len() != nr || r.iter().any(|row| row.len() != nc) {
        return Err(Error::Dimension(format!("{what}: expected {nr}x{nc}")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| r[i][j]))
}

fn pairs(z: &[Complex<f64>]) -> Vec<(f64, f64)> {
    z.iter().map(|z| (z.re, z.im)).collect()
}

fn complexes(p: &[(f64, f64)]) -> Vec<Complex<f64>> {
    p.iter().map(|&(re, im)| Complex::new(re, im)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDesign {
    pub agent: usize,
    pub gamma: f64,
    pub nu: usize,
    pub observable_dim: usize,
    #[serde(rename = "O")]
    pub observability: Rows,
    #[serde(rename = "T")]
    pub t: Rows,
    #[serde(rename = "U")]
    pub u: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
    #[serde(rename = "A_o")]
    pub a_obs: Rows,
    #[serde(rename = "A_unobs")]
    pub a_unobs: Rows,
    #[serde(rename = "C_o")]
    pub c_obs: Rows,
    #[serde(rename = "L_o")]
    pub l_obs: Rows,
    #[serde(rename = "L")]
    pub l: Rows,
    #[serde(rename = "M")]
    pub m: Rows,
    pub targets: Vec<(f64, f64)>,
    pub achieved: Vec<(f64, f64)>,
    pub placement_error: f64,
    pub placement_tolerance: f64,
    pub well_conditioned: bool,
    #[serde(rename = "cond_T")]
    pub cond_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignReport {
    pub n: usize,
    #[serde(rename = "P")]
    pub p: Rows,
    #[serde(rename = "P_inv")]
    pub p_inv: Rows,
    pub skew_residual: f64,
    #[serde(rename = "cond_P")]
    pub cond_p: f64,
    pub nu: usize,
    pub agents: Vec<AgentDesign>,
}

impl DesignReport {
    pub fn from_bank(bank: &ObserverBank) -> Self {
        let agents = bank
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let dec = &a.decomposition;
                AgentDesign {
                    agent: i + 1,
                    gamma: a.gamma,
                    nu: dec.nu,
                    observable_dim: dec.observable_dim(),
                    observability: rows(&dec.observability),
                    t: rows(&dec.t),
                    u: rows(&dec.u),
                    d: rows(&dec.d),
                    a_obs: rows(&dec.a_obs),
                    a_unobs: rows(&dec.a_unobs),
                    c_obs: rows(&dec.c_obs),
                    l_obs: rows(&a.placement.gain),
                    l: rows(&a.l),
                    m: rows(&a.m),
                    targets: pairs(&a.targets),
                    achieved: pairs(&a.placement.achieved),
                    placement_error: a.placement.max_error,
                    placement_tolerance: a.placement.tolerance,
                    well_conditioned: a.placement.well_conditioned,
                    cond_t: linalg::condition_number(&dec.t),
                }
            })
            .collect();
        Self {
            n: bank.n(),
            p: rows(&bank.skew.p),
            p_inv: rows(&bank.skew.p_inv),
            skew_residual: bank.skew.residual,
            cond_p: bank.skew.condition,
            nu: bank.nu(),
            agents,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite design is serializable")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Scenario(format!("design file, field `{}`: {}", e.path(), e.inner())))
    }

    /// Rebuilds the bank for `plant`, checking every shape and that `L` and `M`
    /// follow from `P`, `T` and `L_o`.
    pub fn to_bank(&self, plant: &LtiPlant) -> Result<ObserverBank> {
        let n = plant.n();
        if self.n != n || self.agents.len() != plant.agents() {
            return Err(Error::Dimension(format!(
                "design is for n = {} with {} agents, plant has n = {n} with {} agents",
                self.n,
                self.agents.len(),
                plant.agents()
            )));
        }
        let p = matrix(&self.p, (n, n), "P")?;
        let p_inv = matrix(&self.p_inv, (n, n), "P_inv")?;
        let skew = SkewSymmetrizer { p, p_inv, residual: self.skew_residual, condition: self.cond_p };
        let a_eff = skew.transform(plant.a());
        let mut agents = Vec::with_capacity(self.agents.len());
        for (i, ad) in self.agents.iter().enumerate() {
            let what = |m: &str| format!("agent {}: {m}", i + 1);
            let mi = plant.partition()[i];
            let (nu, q) = (ad.nu, ad.observable_dim);
            if nu + q != n {
                return Err(Error::Dimension(what("nu + observable_dim != n")));
            }
            let observability = matrix(&ad.observability, (n * mi, n), &what("O"))?;
            let expected_o = observability_matrix(&(plant.c_block(i) * &skew.p), &a_eff)?;
            let decomposition = SubspaceDecomposition {
                agent: i,
                observability,
                nu,
                u: matrix(&ad.u, (n, nu), &what("U"))?,
                d: matrix(&ad.d, (n, q), &what("D"))?,
                t: matrix(&ad.t, (n, n), &what("T"))?,
                a_obs: matrix(&ad.a_obs, (q, q), &what("A_o"))?,
                a_unobs: matrix(&ad.a_unobs, (nu, nu), &what("A_unobs"))?,
                c_obs: matrix(&ad.c_obs, (mi, q), &what("C_o"))?,
            };
            let gain = matrix(&ad.l_obs, (q, mi), &what("L_o"))?;
            let l = matrix(&ad.l, (n, mi), &what("L"))?;
            let m = matrix(&ad.m, (n, n), &what("M"))?;
            let (l_ref, m_ref) = build_local_observer(&skew, &decomposition, &gain, ad.gamma)?;
            let scale = |r: &DMatrix<f64>| TOL_RELOAD * r.norm().max(1.0);
            if (&l - &l_ref).norm() > scale(&l_ref)
                || (&m - &m_ref).norm() > scale(&m_ref)
                || (&decomposition.observability - &expected_o).norm() > scale(&expected_o)
            {
                return Err(Error::Dimension(what("stored matrices do not match the plant")));
            }
            let placement = Placement {
                gain,
                achieved: complexes(&ad.achieved),
                max_error: ad.placement_error,
                tolerance: ad.placement_tolerance,
                well_conditioned: ad.well_conditioned,
            };
            agents.push(LocalObserver { gamma: ad.gamma, l, m, targets: complexes(&ad.targets), placement, decomposition });
        }
        Ok(ObserverBank { skew, agents })
    }
}

/// Outcome of the three assumption checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub neutral_stability: AssumptionVerdict,
    pub joint_observability: AssumptionVerdict,
    pub joint_connectivity: AssumptionVerdict,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionVerdict {
    pub assumption: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub samples: usize,
    pub t_end: f64,
    pub initial_error_norms: Vec<f64>,
    pub final_error_norms: Vec<f64>,
    pub rate_fits: Vec<RateFit>,
}

impl SimulationSummary {
    pub fn new(trace: &SimulationTrace, fits: Vec<RateFit>) -> Self {
        Self {
            samples: trace.times.len(),
            t_end: trace.times.last().copied().unwrap_or(0.0),
            initial_error_norms: trace.error_norms.first().cloned().unwrap_or_default(),
            final_error_norms: trace.error_norms.last().cloned().unwrap_or_default(),
            rate_fits: fits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionWindow {
    pub start: f64,
    pub end: f64,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisVerdict {
    pub uco_valid: bool,
    pub contraction_below_one: bool,
    pub rates_positive: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub uco: GramianReport,
    pub windows: Vec<UnionWindow>,
    pub contraction: ContractionReport,
    pub rate_fits: Vec<RateFit>,
    pub verdict: AnalysisVerdict,
}

impl AnalysisReport {
    pub fn new(uco: GramianReport, windows: Vec<UnionWindow>, contraction: ContractionReport, rate_fits: Vec<RateFit>) -> Self {
        let uco_valid = uco.valid;
        // Without any evaluable window there is nothing to contract.
        let contraction_below_one = contraction.max_ratio.is_none_or(|r| r < 1.0);
        let rates_positive = rate_fits.iter().all(|f| f.lambda > 0.0);
        let verdict =
            AnalysisVerdict { uco_valid, contraction_below_one, rates_positive, pass: uco_valid && contraction_below_one && rates_positive };
        Self { uco, windows, contraction, rate_fits, verdict }
    }
}

/// Indices of the samples written to CSV: every `every`-th sample, every
/// switching instant and the last sample.
pub fn csv_rows(trace: &SimulationTrace, schedule: &SwitchingSchedule, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let t_end = trace.times.last().copied().unwrap_or(0.0);
    let instants = schedule.switching_instants(0.0, t_end);
    let mut j = 0;
    let mut keep = Vec::new();
    for (k, &t) in trace.times.iter().enumerate() {
        while j < instants.len() && instants[j] < t {
            j += 1;
        }
        let at_switch = j < instants.len() && instants[j] == t;
        if k % every == 0 || at_switch || k + 1 == trace.times.len() {
            keep.push(k);
        }
    }
    keep
}

fn header(n: usize, agents: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "active_topology".to_string()];
    h.extend((1..=n).map(|j| format!("x_{j}")));
    for i in 1..=agents {
        h.extend((1..=n).map(|j| format!("xhat_{i}_{j}")));
        h.push(format!("err_norm_{i}"));
    }
    h
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the rows selected by [`csv_rows`] with 17 significant digits.
pub fn write_trace_csv<W: Write>(out: W, trace: &SimulationTrace, rows_to_write: &[usize]) -> Result<()> {
    let n = trace.plant_states.first().map_or(0, DVector::len);
    let agents = trace.agents();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(n, agents)).map_err(csv_error)?;
    let mut record = Vec::with_capacity(2 + n * (agents + 1) + agents);
    for &k in rows_to_write {
        record.clear();
        record.push(fmt(trace.times[k]));
        record.push((trace.active_topology[k] + 1).to_string());
        record.extend(trace.plant_states[k].iter().map(|&v| fmt(v)));
        for i in 0..agents {
            record.extend(trace.observer_states[k][i].iter().map(|&v| fmt(v)));
            record.push(fmt(trace.error_norms[k][i]));
        }
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Scenario(format!("trace CSV: {other:?}")),
    }
}

/// Reads a trace written by [`write_trace_csv`] for a plant of order `n` with
/// `agents` observers.
pub fn read_trace_csv<R: Read>(input: R, n: usize, agents: usize) -> Result<SimulationTrace> {
    let mut r = csv::Reader::from_reader(input);
    let expected = header(n, agents);
    let found: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(Error::Dimension(format!("trace header has {} columns, expected {} for n = {n}, N = {agents}", found.len(), expected.len())));
    }
    let mut trace = SimulationTrace {
        times: Vec::new(),
        plant_states: Vec::new(),
        observer_states: Vec::new(),
        error_norms: Vec::new(),
        active_topology: Vec::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let bad = |col: usize| Error::Scenario(format!("trace CSV row {}: bad value in column {}", line + 2, col + 1));
        let num = |col: usize| rec.get(col).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| bad(col));
        trace.times.push(num(0)?);
        let topo: usize = rec.get(1).and_then(|s| s.trim().parse().ok()).filter(|&p: &usize| p >= 1).ok_or_else(|| bad(1))?;
        trace.active_topology.push(topo - 1);
        trace.plant_states.push(DVector::from_iterator(n, (0..n).map(|j| num(2 + j)).collect::<Result<Vec<_>>>()?));
        let mut est = Vec::with_capacity(agents);
        let mut errs = Vec::with_capacity(agents);
        for i in 0..agents {
            let base = 2 + n + i * (n + 1);
            est.push(DVector::from_iterator(n, (0..n).map(|j| num(base + j)).collect::<Result<Vec<_>>>()?));
            errs.push(num(base + n)?);
        }
        trace.observer_states.push(est);
        trace.error_norms.push(errs);
    }
    if trace.times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Scenario("trace CSV: times are not sorted".into()));
    }
    Ok(trace)
}
