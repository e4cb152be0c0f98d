//! Undirected weighted topologies, piecewise-constant switching schedules and
//! the jointly-connected certificate.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: usize,
    weights: BTreeMap<(usize, usize), f64>,
}

impl Topology {
    pub fn empty(nodes: usize) -> Self {
        Self { nodes, weights: BTreeMap::new() }
    }

    /// Edges are 0-based `(i, j, a_ij)`; duplicates accumulate.
    pub fn new(nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t = Self::empty(nodes);
        for &(i, j, w) in edges {
            t.add_edge(i, j, w)?;
        }
        Ok(t)
    }

    pub fn add_edge(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if i == j {
            return Err(Error::Domain(format!("self-loop on node {}", i + 1)));
        }
        if i >= self.nodes || j >= self.nodes {
            return Err(Error::Domain(format!("edge ({}, {}) outside 1..={}", i + 1, j + 1, self.nodes)));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::Domain(format!("edge ({}, {}) has non-positive weight {w}", i + 1, j + 1)));
        }
        *self.weights.entry((i.min(j), i.max(j))).or_insert(0.0) += w;
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    /// Weighted adjacency matrix `[a_ij]`.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nodes, self.nodes);
        for (i, j, w) in self.edges() {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        a
    }

    /// Edge-wise union, weights summed on shared edges.
    pub fn union(&self, other: &Topology) -> Topology {
        let mut out = self.clone();
        for (i, j, w) in other.edges() {
            *out.weights.entry((i, j)).or_insert(0.0) += w;
        }
        out
    }
}

/// `ℒ = diag(Σⱼ a_ij) − [a_ij]`.
pub fn laplacian(topology: &Topology) -> DMatrix<f64> {
    let n = topology.nodes();
    let mut l = DMatrix::zeros(n, n);
    for (i, j, w) in topology.edges() {
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    l
}

/// One constant stretch `[start, end)` of the switching signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub topology: usize,
}

impl Piece {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSchedule {
    topologies: Vec<Topology>,
    instants: Vec<f64>,
    indices: Vec<usize>,
    dwell: f64,
    period: Option<f64>,
}

impl SwitchingSchedule {
    /// Repeats `pieces = [(duration, topology)]` forever.
    pub fn periodic(topologies: Vec<Topology>, pieces: &[(f64, usize)], dwell: f64) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Schedule("periodic schedule needs at least one piece".into()));
        }
        let mut instants = Vec::with_capacity(pieces.len());
        let mut t = 0.0;
        for &(d, _) in pieces {
            instants.push(t);
            t += d;
        }
        if let Some(&(d, _)) = pieces.iter().find(|(d, _)| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Schedule(format!("piece duration {d} must be positive")));
        }
        let indices = pieces.iter().map(|&(_, p)| p).collect();
        let s = Self { topologies, instants, indices, dwell, period: Some(t) };
        s.validate()?;
        Ok(s)
    }

    /// Explicit switching instants; the last topology persists forever.
    pub fn explicit(topologies: Vec<Topology>, instants: Vec<f64>, indices: Vec<usize>, dwell: f64) -> Result<Self> {
        let s = Self { topologies, instants, indices, dwell, period: None };
        s.validate()?;
        Ok(s)
    }

    /// A single topology held forever.
    pub fn constant(topology: Topology, dwell: f64) -> Result<Self> {
        Self::explicit(vec![topology], vec![0.0], vec![0], dwell)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dwell.is_finite() && self.dwell > 0.0) {
            return Err(Error::Schedule(format!("dwell time {} must be positive", self.dwell)));
        }
        if self.topologies.is_empty() {
            return Err(Error::Schedule("no topologies".into()));
        }
        let nodes = self.topologies[0].nodes();
        if self.topologies.iter().any(|t| t.nodes() != nodes) {
            return Err(Error::Schedule("topologies disagree on node count".into()));
        }
        if self.instants.is_empty() || self.instants.len() != self.indices.len() {
            return Err(Error::Schedule("instants and indices must be non-empty and of equal length".into()));
        }
        if self.instants[0] != 0.0 {
            return Err(Error::Schedule("first switching instant must be 0".into()));
        }
        if let Some(&p) = self.indices.iter().find(|&&p| p >= self.topologies.len()) {
            return Err(Error::Schedule(format!("topology index {} out of range", p + 1)));
        }
        let mut ends: Vec<f64> = self.instants[1..].to_vec();
        if let Some(period) = self.period {
            ends.push(period);
        }
        for (k, end) in ends.iter().enumerate() {
            let len = end - self.instants[k];
            if len < self.dwell - TIME_EPS {
                return Err(Error::Schedule(format!(
                    "piece starting at {} lasts {len}, shorter than dwell time {}",
                    self.instants[k], self.dwell
                )));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.topologies[0].nodes()
    }

    pub fn topologies(&self) -> &[Topology] {
        &self.topologies
    }

    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn laplacians(&self) -> Vec<DMatrix<f64>> {
        self.topologies.iter().map(laplacian).collect()
    }

    /// Same schedule with every duration (and the dwell time) scaled by `s`.
    pub fn time_scaled(&self, s: f64) -> Result<Self> {
        let out = Self {
            topologies: self.topologies.clone(),
            instants: self.instants.iter().map(|t| t * s).collect(),
            indices: self.indices.clone(),
            dwell: self.dwell * s,
            period: self.period.map(|p| p * s),
        };
        out.validate()?;
        Ok(out)
    }

    /// Same schedule with every edge weight multiplied by `s`.
    pub fn weight_scaled(&self, s: f64) -> Result<Self> {
        let mut topologies = Vec::with_capacity(self.topologies.len());
        for t in &self.topologies {
            let edges: Vec<_> = t.edges().map(|(i, j, w)| (i, j, w * s)).collect();
            topologies.push(Topology::new(t.nodes(), &edges)?);
        }
        Ok(Self { topologies, ..self.clone() })
    }

    /// 0-based index of the topology active at `t` (half-open pieces).
    pub fn active_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("time {t} is negative")));
        }
        let local = match self.period {
            Some(p) => {
                let r = t - (t / p).floor() * p;
                if r >= p || r < 0.0 {
                    0.0
                } else {
                    r
                }
            }
            None => t,
        };
        let k = self.instants.partition_point(|&s| s <= local + TIME_EPS * local.abs().max(1.0));
        Ok(self.indices[k.saturating_sub(1)])
    }

    /// Pieces of the signal clipped to `[t_a, t_b)`, in time order.
    pub fn pieces(&self, t_a: f64, t_b: f64) -> Vec<Piece> {
        let mut out = Vec::new();
        if t_b <= t_a {
            return out;
        }
        let mut push = |start: f64, end: f64, topology: usize| {
            let (s, e) = (start.max(t_a), end.min(t_b));
            if e - s > TIME_EPS * e.abs().max(1.0) {
                out.push(Piece { start: s, end: e, topology });
            }
        };
        match self.period {
            Some(p) => {
                let mut cycle = (t_a / p).floor().max(0.0) as u64;
                loop {
                    let base = cycle as f64 * p;
                    if base >= t_b {
                        break;
                    }
                    for k in 0..self.instants.len() {
                        let start = base + self.instants[k];
                        let end = if k + 1 < self.instants.len() { base + self.instants[k + 1] } else { base + p };
                        push(start, end, self.indices[k]);
                    }
                    cycle += 1;
                }
            }
            None => {
                for k in 0..self.instants.len() {
                    let end = self.instants.get(k + 1).copied().unwrap_or(f64::INFINITY);
                    push(self.instants[k], end, self.indices[k]);
                }
            }
        }
        out
    }

    /// Switching instants `t_j` lying in `[t_a, t_b]`.
    pub fn switching_instants(&self, t_a: f64, t_b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self.period {
            Some(p) => {
                let mut cycle = (t_a / p).floor().max(0.0) as u64;
                loop {
                    let base = cycle as f64 * p;
                    if base > t_b {
                        break;
                    }
                    out.extend(self.instants.iter().map(|s| base + s).filter(|&t| t >= t_a && t <= t_b));
                    cycle += 1;
                }
            }
            None => out.extend(self.instants.iter().copied().filter(|&t| t >= t_a && t <= t_b)),
        }
        out
    }
}

/// `Σ ℒ_σ(t_r)` over the pieces active in `[t_a, t_b)`, each counted once.
pub fn union_laplacian(schedule: &SwitchingSchedule, t_a: f64, t_b: f64) -> Result<DMatrix<f64>> {
    if !(t_b > t_a) {
        return Err(Error::Domain(format!("empty window [{t_a}, {t_b})")));
    }
    let ls = schedule.laplacians();
    let n = schedule.nodes();
    Ok(schedule.pieces(t_a, t_b).iter().fold(DMatrix::zeros(n, n), |acc, p| acc + &ls[p.topology]))
}

/// Edge-wise union graph over the same window as [`union_laplacian`].
pub fn union_topology(schedule: &SwitchingSchedule, t_a: f64, t_b: f64) -> Topology {
    schedule
        .pieces(t_a, t_b)
        .iter()
        .fold(Topology::empty(schedule.nodes()), |acc, p| acc.union(&schedule.topologies()[p.topology]))
}

pub fn tol_fiedler(nodes: usize) -> f64 {
    1e-9 * nodes as f64
}

/// Second-smallest Laplacian eigenvalue (zero for a single node).
pub fn fiedler_value(l: &DMatrix<f64>) -> f64 {
    linalg::symmetric_eigenvalues(l).get(1).copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityCertificate {
    /// Half-open windows `[t_{j_k}, t_{j_{k+1}})`.
    pub windows: Vec<(f64, f64)>,
    pub t_c: f64,
    pub fiedler_values: Vec<f64>,
}

/// Greedy certificate for joint connectivity: each window is cut at the last
/// switching instant within `T_c` of its start and its union graph must be
/// connected.
///
/// Periodic schedules are checked until the window start repeats modulo the
/// period, which certifies the whole time axis. For explicit schedules the
/// persisting final topology must itself be connected. A failure means the
/// greedy choice could not certify the schedule.
pub fn check_joint_connectivity(schedule: &SwitchingSchedule, t_c: f64) -> Result<ConnectivityCertificate> {
    let tau = schedule.dwell();
    if !(t_c >= tau - TIME_EPS) {
        return Err(Error::Domain(format!("T_c = {t_c} is shorter than the dwell time {tau}")));
    }
    let nodes = schedule.nodes();
    let mut cert = ConnectivityCertificate { windows: Vec::new(), t_c, fiedler_values: Vec::new() };
    if nodes <= 1 {
        return Ok(cert);
    }
    let tol = tol_fiedler(nodes);
    let last_instant = *schedule.instants().last().expect("validated non-empty");
    let mut seen = BTreeSet::from([0_i64]);
    let mut s = 0.0_f64;
    for _ in 0..100_000 {
        let eps = TIME_EPS * s.abs().max(1.0);
        let cut = match schedule.switching_instants(s + tau - eps, s + t_c + eps).into_iter().rfind(|&t| t > s + eps) {
            Some(t) => t,
            None => {
                // A piece longer than T_c: cut it inside, the topology stays the same.
                let active = schedule.pieces(s, s + t_c);
                if active.len() == 1 && active[0].end >= s + t_c - eps {
                    s + t_c
                } else {
                    return Err(Error::JointConnectivityViolation { start: s, end: s + t_c, fiedler: 0.0 });
                }
            }
        };
        let fiedler = fiedler_value(&union_laplacian(schedule, s, cut)?);
        if fiedler <= tol {
            return Err(Error::JointConnectivityViolation { start: s, end: cut, fiedler });
        }
        cert.windows.push((s, cut));
        cert.fiedler_values.push(fiedler);
        s = cut;
        let done = match schedule.period() {
            Some(p) => {
                let key = ((s - (s / p).floor() * p) / p * 1e9).round() as i64;
                !seen.insert(key.rem_euclid(1_000_000_000))
            }
            None => s > last_instant + eps,
        };
        if done {
            return Ok(cert);
        }
    }
    Err(Error::Schedule("window search did not terminate".into()))
}
