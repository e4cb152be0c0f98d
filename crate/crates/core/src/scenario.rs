//! Scenario files: one JSON document holding the plant, the switching graph,
//! design parameters, simulation settings and analysis options.
//!
//! Agents and topologies are numbered from 1 in files, from 0 in the library.

use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignOptions;
use crate::graph::{SwitchingSchedule, Topology};
use crate::plant::LtiPlant;
use crate::simulation::{Disturbance, SimConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub plant: PlantSpec,
    pub graph: GraphSpec,
    #[serde(default)]
    pub design: DesignSpec,
    pub sim: SimSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// Row-major `n × n`.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    /// One row-major block per agent.
    #[serde(rename = "C_blocks")]
    pub c_blocks: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    #[serde(rename = "N")]
    pub nodes: usize,
    pub topologies: Vec<TopologySpec>,
    pub schedule: ScheduleSpec,
    pub dwell: f64,
    #[serde(rename = "T_c")]
    pub t_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    /// `[i, j, weight]`, 1-based nodes.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Periodic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<f64>,
        pieces: Vec<PieceSpec>,
    },
    Explicit {
        instants: Vec<f64>,
        /// 1-based topology indices.
        indices: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub duration: f64,
    /// 1-based.
    pub topology: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    /// Per agent, `[re, im]` pairs; `null` picks the default spectrum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<Option<Vec<(f64, f64)>>>>,
    #[serde(rename = "use_P", default = "default_true")]
    pub use_p: bool,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self { gains: None, targets: None, use_p: true }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    #[serde(rename = "T_end")]
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSpec>,
    /// Write every k-th sample to CSV (switching instants are always kept).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub amplitude: f64,
    /// 1-based; empty or absent means every agent.
    #[serde(default)]
    pub agents: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(rename = "T_o", default, skip_serializing_if = "Option::is_none")]
    pub t_o: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<(f64, f64)>,
}

fn matrix_from_rows(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(k) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Scenario(format!("{what}: row {} has {} entries, expected {cols}", k + 1, rows[k].len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Scenario(format!("{what}: non-finite entry")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Scenario(format!("line {}, column {}, field `{path}`: {inner}", inner.line(), inner.column()))
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario is always serializable")
    }

    /// Checks every dimension rule so later stages can unwrap the builders.
    pub fn validate(&self) -> Result<()> {
        let plant = self.plant()?;
        let schedule = self.schedule()?;
        if schedule.nodes() != plant.agents() {
            return Err(Error::Scenario(format!("graph.N = {} but plant has {} agents", schedule.nodes(), plant.agents())));
        }
        if !(self.graph.t_c.is_finite() && self.graph.t_c > 0.0) {
            return Err(Error::Scenario("graph.T_c must be positive".into()));
        }
        self.design_options()?;
        self.sim_config().validate(&schedule).map_err(|e| Error::Scenario(format!("sim: {e}")))?;
        if let Some(d) = &self.sim.disturbance {
            if d.agents.iter().any(|&a| a == 0 || a > plant.agents()) {
                return Err(Error::Scenario("sim.disturbance.agents out of range".into()));
            }
        }
        if self.sim.csv_every == Some(0) {
            return Err(Error::Scenario("sim.csv_every must be at least 1".into()));
        }
        if let Some(t_o) = self.analysis.t_o {
            if !(t_o > 0.0) {
                return Err(Error::Scenario("analysis.T_o must be positive".into()));
            }
        }
        if let Some((a, b)) = self.analysis.fit_window {
            if !(b > a && a >= 0.0) {
                return Err(Error::Scenario("analysis.fit_window must be an increasing pair".into()));
            }
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<LtiPlant> {
        let n = self.plant.a.len();
        let a = matrix_from_rows(&self.plant.a, n, "plant.A")?;
        let blocks = self
            .plant
            .c_blocks
            .iter()
            .enumerate()
            .map(|(i, b)| matrix_from_rows(b, n, &format!("plant.C_blocks[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        LtiPlant::from_blocks(a, &blocks).map_err(|e| Error::Scenario(format!("plant: {e}")))
    }

    pub fn topologies(&self) -> Result<Vec<Topology>> {
        self.graph
            .topologies
            .iter()
            .enumerate()
            .map(|(p, t)| {
                let mut top = Topology::empty(self.graph.nodes);
                for &(i, j, w) in &t.edges {
                    if i == 0 || j == 0 {
                        return Err(Error::Scenario(format!("graph.topologies[{p}]: nodes are numbered from 1")));
                    }
                    top.add_edge(i - 1, j - 1, w).map_err(|e| Error::Scenario(format!("graph.topologies[{p}]: {e}")))?;
                }
                Ok(top)
            })
            .collect()
    }

    pub fn schedule(&self) -> Result<SwitchingSchedule> {
        let tops = self.topologies()?;
        let index = |p: usize| {
            if p == 0 || p > tops.len() {
                Err(Error::Scenario(format!("graph.schedule: topology {p} not in 1..={}", tops.len())))
            } else {
                Ok(p - 1)
            }
        };
        let dwell = self.graph.dwell;
        let sched = match &self.graph.schedule {
            ScheduleSpec::Periodic { period, pieces } => {
                let pieces = pieces.iter().map(|p| Ok((p.duration, index(p.topology)?))).collect::<Result<Vec<_>>>()?;
                let total: f64 = pieces.iter().map(|p| p.0).sum();
                if let Some(period) = period {
                    if (period - total).abs() > 1e-9 * total.max(1.0) {
                        return Err(Error::Scenario(format!("graph.schedule: period {period} != sum of durations {total}")));
                    }
                }
                SwitchingSchedule::periodic(tops.clone(), &pieces, dwell)
            }
            ScheduleSpec::Explicit { instants, indices } => {
                let idx = indices.iter().map(|&p| index(p)).collect::<Result<Vec<_>>>()?;
                SwitchingSchedule::explicit(tops.clone(), instants.clone(), idx, dwell)
            }
        };
        sched.map_err(|e| Error::Scenario(format!("graph.schedule: {e}")))
    }

    pub fn design_options(&self) -> Result<DesignOptions> {
        let agents = self.plant.c_blocks.len();
        let gains = self.design.gains.clone().unwrap_or_default();
        if !gains.is_empty() && gains.len() != agents {
            return Err(Error::Scenario(format!("design.gains has {} entries for {agents} agents", gains.len())));
        }
        if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Scenario("design.gains must be positive".into()));
        }
        let targets = match &self.design.targets {
            None => Vec::new(),
            Some(t) if t.len() != agents => {
                return Err(Error::Scenario(format!("design.targets has {} entries for {agents} agents", t.len())));
            }
            Some(t) => t.iter().map(|o| o.as_ref().map(|v| v.iter().map(|&(re, im)| Complex::new(re, im)).collect())).collect(),
        };
        Ok(DesignOptions { gains, targets, use_p: self.design.use_p })
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            t_end: self.sim.t_end,
            seed: self.sim.seed,
            disturbance: self.sim.disturbance.as_ref().map(|d| Disturbance {
                amplitude: d.amplitude,
                agents: d.agents.iter().map(|a| a.saturating_sub(1)).collect(),
            }),
            initial: None,
        }
    }

    /// `T_o`, defaulting to `2 T_c`.
    pub fn t_o(&self) -> f64 {
        self.analysis.t_o.unwrap_or(2.0 * self.graph.t_c)
    }

    /// Rate-fit window, defaulting to `[T_c, T_end]`.
    pub fn fit_window(&self) -> (f64, f64) {
        self.analysis.fit_window.unwrap_or((self.graph.t_c, self.sim.t_end))
    }
}

/// System matrix of three inertias coupled by torsional springs, state
/// `(φ, φ̇, θ, θ̇, ψ, ψ̇)`, with stiffness ratio `k/J`.
pub fn three_inertia_a(k_over_j: f64) -> DMatrix<f64> {
    let k = k_over_j;
    DMatrix::from_row_slice(
        6,
        6,
        &[
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
            -2.0 * k, 0.0, k, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
            k, 0.0, -2.0 * k, 0.0, k, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, k, 0.0, -2.0 * k, 0.0,
        ],
    )
}

/// Sensors `φ + ψ`, `θ` and `ψ − φ`.
pub fn three_inertia_c_blocks() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(1, 6, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        DMatrix::from_row_slice(1, 6, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 6, &[-1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
    ]
}

pub fn three_inertia_plant(k_over_j: f64) -> LtiPlant {
    LtiPlant::from_blocks(three_inertia_a(k_over_j), &three_inertia_c_blocks()).expect("fixed dimensions")
}

/// Observable-block targets: `{−2 ± 5j, −5 ± 2j}` for sensors 1 and 2, `{−2, −5}` for sensor 3.
pub fn three_inertia_targets() -> Vec<Vec<Complex<f64>>> {
    let four = vec![Complex::new(-2.0, 5.0), Complex::new(-2.0, -5.0), Complex::new(-5.0, 2.0), Complex::new(-5.0, -2.0)];
    vec![four.clone(), four, vec![Complex::new(-2.0, 0.0), Complex::new(-5.0, 0.0)]]
}

/// Two single-edge topologies on three agents: `{1–2}` for the first third of
/// every `T_c`, `{2–3}` for the remaining two thirds.
pub fn three_inertia_schedule(t_c: f64) -> SwitchingSchedule {
    let g1 = Topology::new(3, &[(0, 1, 1.0)]).expect("valid edge");
    let g2 = Topology::new(3, &[(1, 2, 1.0)]).expect("valid edge");
    SwitchingSchedule::periodic(vec![g1, g2], &[(t_c / 3.0, 0), (2.0 * t_c / 3.0, 1)], t_c / 3.0).expect("valid schedule")
}

/// The bundled three-inertia experiment.
pub fn three_inertia_scenario(k_over_j: f64, t_c: f64, gains: [f64; 3], t_end: f64, seed: u64) -> Scenario {
    let targets = three_inertia_targets()
        .into_iter()
        .map(|t| Some(t.into_iter().map(|z| (z.re, z.im)).collect()))
        .collect();
    Scenario {
        name: Some("three_inertia".into()),
        plant: PlantSpec {
            a: matrix_to_rows(&three_inertia_a(k_over_j)),
            c_blocks: three_inertia_c_blocks().iter().map(matrix_to_rows).collect(),
        },
        graph: GraphSpec {
            nodes: 3,
            topologies: vec![TopologySpec { edges: vec![(1, 2, 1.0)] }, TopologySpec { edges: vec![(2, 3, 1.0)] }],
            schedule: ScheduleSpec::Periodic {
                period: Some(t_c),
                pieces: vec![PieceSpec { duration: t_c / 3.0, topology: 1 }, PieceSpec { duration: 2.0 * t_c / 3.0, topology: 2 }],
            },
            dwell: t_c / 3.0,
            t_c,
        },
        design: DesignSpec { gains: Some(gains.to_vec()), targets: Some(targets), use_p: true },
        sim: SimSpec { dt: 1e-3, t_end, seed, disturbance: None, csv_every: None },
        analysis: AnalysisSpec { t_o: Some(2.0 * t_c), fit_window: Some((t_c, t_end)) },
    }
}

/// A randomly generated skew-symmetric plant with structured partial
/// observability and a jointly (never instantaneously) connected schedule.
#[derive(Debug, Clone)]
pub struct RandomSystem {
    pub plant: LtiPlant,
    pub schedule: SwitchingSchedule,
    pub t_c: f64,
}

/// Random orthogonal matrix (Q factor of a Gaussian-ish matrix).
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

/// `A = Q blockdiag(ωₖ J) Qᵀ` plus an optional zero mode; every agent sees a
/// random subset of modes, and together they see all of them.
pub fn random_skew_system(seed: u64, max_n: usize, max_agents: usize) -> RandomSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = rng.gen_range(1..=max_n / 2);
    let zero_mode = 2 * pairs < max_n && rng.gen_bool(0.3);
    let n = 2 * pairs + usize::from(zero_mode);
    let agents = rng.gen_range(2..=max_agents.max(2));

    // Distinct frequencies spaced at least 0.3 apart.
    let mut freqs: Vec<f64> = Vec::new();
    while freqs.len() < pairs {
        let w = rng.gen_range(0.5..3.0);
        if freqs.iter().all(|f: &f64| (f - w).abs() > 0.3) {
            freqs.push(w);
        }
    }
    let mut s = DMatrix::zeros(n, n);
    for (k, &w) in freqs.iter().enumerate() {
        s[(2 * k, 2 * k + 1)] = w;
        s[(2 * k + 1, 2 * k)] = -w;
    }
    let q = random_orthogonal(n, &mut rng);
    let a = &q * &s * q.transpose();

    // Modes: each oscillator pair, plus the zero mode.
    let modes: Vec<Vec<usize>> =
        (0..pairs).map(|k| vec![2 * k, 2 * k + 1]).chain(zero_mode.then(|| vec![n - 1])).collect();
    let mut seen = vec![Vec::new(); agents];
    for (m, _) in modes.iter().enumerate() {
        seen[rng.gen_range(0..agents)].push(m);
    }
    for s in seen.iter_mut() {
        if rng.gen_bool(0.5) {
            let extra = rng.gen_range(0..modes.len());
            if !s.contains(&extra) {
                s.push(extra);
            }
        }
    }
    let blocks: Vec<DMatrix<f64>> = seen
        .iter()
        .map(|mset| {
            let rows = rng.gen_range(1..=2usize);
            let mut c = DMatrix::zeros(rows, n);
            for r in 0..rows {
                for &m in mset {
                    for &coord in &modes[m] {
                        c[(r, coord)] = rng.gen_range(-1.0..1.0);
                    }
                }
            }
            c * q.transpose()
        })
        .collect();
    let plant = LtiPlant::from_blocks(a, &blocks).expect("consistent dimensions");

    // Path edges spread over several topologies, at most one edge each.
    let mut order: Vec<usize> = (0..agents).collect();
    for k in (1..agents).rev() {
        order.swap(k, rng.gen_range(0..=k));
    }
    let tops: Vec<Topology> = order
        .windows(2)
        .map(|w| Topology::new(agents, &[(w[0], w[1], rng.gen_range(0.5..2.0))]).expect("valid edge"))
        .collect();
    let dwell = 0.5;
    let pieces: Vec<(f64, usize)> = (0..tops.len()).map(|p| (rng.gen_range(0.5..1.5), p)).collect();
    let t_c = pieces.iter().map(|p| p.0).sum::<f64>();
    let schedule = SwitchingSchedule::periodic(tops, &pieces, dwell).expect("valid schedule");
    RandomSystem { plant, schedule, t_c }
}

/// Random symmetric positive definite matrix with eigenvalues in `[0.5, 2]`.
pub fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let q = random_orthogonal(n, rng);
    let d = DVector::from_fn(n, |_, _| rng.gen_range(0.5..2.0));
    &q * DMatrix::from_diagonal(&d) * q.transpose()
}

impl RandomSystem {
    /// Scenario file equivalent of this system.
    pub fn to_scenario(&self, t_end: f64, seed: u64) -> Scenario {
        let schedule = &self.schedule;
        let pieces = schedule
            .pieces(0.0, schedule.period().expect("generated schedules are periodic"))
            .iter()
            .map(|p| PieceSpec { duration: p.duration(), topology: p.topology + 1 })
            .collect();
        Scenario {
            name: Some(format!("random_skew_{seed}")),
            plant: PlantSpec {
                a: matrix_to_rows(self.plant.a()),
                c_blocks: self.plant.c_blocks().iter().map(matrix_to_rows).collect(),
            },
            graph: GraphSpec {
                nodes: schedule.nodes(),
                topologies: schedule
                    .topologies()
                    .iter()
                    .map(|t| TopologySpec { edges: t.edges().map(|(i, j, w)| (i + 1, j + 1, w)).collect() })
                    .collect(),
                schedule: ScheduleSpec::Periodic { period: schedule.period(), pieces },
                dwell: schedule.dwell(),
                t_c: self.t_c,
            },
            design: DesignSpec { gains: None, targets: None, use_p: true },
            sim: SimSpec { dt: 1e-2, t_end, seed, disturbance: None, csv_every: None },
            analysis: AnalysisSpec::default(),
        }
    }
}
