//! Stage functions behind the command-line tool: check, design, simulate and
//! analyze. Each takes parsed inputs and returns a report; file handling and
//! exit codes live in the binary.

use nalgebra::DVector;

use crate::analysis::{error_rate_fits, union_gramian_pd_check, uco_certify, window_contraction};
use crate::design::{assemble_bank, ObserverBank};
use crate::graph::{check_joint_connectivity, SwitchingSchedule};
use crate::plant::{check_joint_observability, check_neutral_stability};
use crate::report::{AnalysisReport, AssumptionVerdict, CheckReport, SimulationSummary, UnionWindow};
use crate::scenario::Scenario;
use crate::simulation::{gamma_matrix, simulate_network, SimulationTrace, StateTrace};
use crate::{Error, Result};

pub fn check(scenario: &Scenario) -> Result<CheckReport> {
    let plant = scenario.plant()?;
    let schedule = scenario.schedule()?;
    let ns = check_neutral_stability(plant.a())?;
    let neutral_stability = AssumptionVerdict {
        assumption: "1: eigenvalues of A semisimple on the imaginary axis".into(),
        pass: ns.is_neutrally_stable,
        detail: format!("max Re(lambda) = {:.3e}, semisimplicity defect = {}", ns.max_real_part, ns.semisimplicity_defect),
    };
    let obs = check_joint_observability(&plant);
    let joint_observability = AssumptionVerdict {
        assumption: "2: (C, A) observable".into(),
        pass: obs,
        detail: if obs { "rank O = n".into() } else { "rank O < n".into() },
    };
    let joint_connectivity = match check_joint_connectivity(&schedule, scenario.graph.t_c) {
        Ok(cert) => AssumptionVerdict {
            assumption: "3: union graph connected over every window of length T_c".into(),
            pass: true,
            detail: format!(
                "{} windows, min Fiedler value {:.3e}",
                cert.windows.len(),
                cert.fiedler_values.iter().copied().fold(f64::INFINITY, f64::min)
            ),
        },
        Err(e @ Error::JointConnectivityViolation { .. }) => {
            AssumptionVerdict { assumption: "3: union graph connected over every window of length T_c".into(), pass: false, detail: e.to_string() }
        }
        Err(e) => return Err(e),
    };
    let pass = neutral_stability.pass && joint_observability.pass && joint_connectivity.pass;
    Ok(CheckReport { neutral_stability, joint_observability, joint_connectivity, pass })
}

pub fn design(scenario: &Scenario) -> Result<ObserverBank> {
    assemble_bank(&scenario.plant()?, &scenario.schedule()?, scenario.graph.t_c, &scenario.design_options()?)
}

pub fn simulate(scenario: &Scenario, bank: &ObserverBank) -> Result<(SimulationTrace, SimulationSummary)> {
    let trace = simulate_network(&scenario.plant()?, bank, &scenario.schedule()?, &scenario.sim_config())?;
    let (t_a, t_b) = scenario.fit_window();
    let t_end = trace.times.last().copied().unwrap_or(0.0);
    let fits = error_rate_fits(&trace, (t_a, t_b.min(t_end)))?;
    let summary = SimulationSummary::new(&trace, fits);
    Ok((trace, summary))
}

/// Stack of `Uᵢᵀ P⁻¹ (x̂ᵢ − x)`: the estimation error in each agent's
/// unobservable coordinates.
pub fn kernel_error_trace(trace: &SimulationTrace, bank: &ObserverBank) -> StateTrace {
    let projections: Vec<_> = bank.agents.iter().map(|a| a.decomposition.u.transpose() * &bank.skew.p_inv).collect();
    let states = (0..trace.times.len())
        .map(|k| {
            let parts: Vec<f64> = projections.iter().enumerate().flat_map(|(i, pr)| (pr * trace.error(k, i)).data.as_vec().clone()).collect();
            DVector::from_vec(parts)
        })
        .collect();
    StateTrace { times: trace.times.clone(), states, active_topology: trace.active_topology.clone() }
}

/// Windows for the union-Gramian check: the connectivity certificate when it
/// exists, otherwise consecutive windows of length `T_c` over the trace.
fn union_windows(schedule: &SwitchingSchedule, t_c: f64, t_end: f64) -> Vec<(f64, f64)> {
    match check_joint_connectivity(schedule, t_c) {
        Ok(cert) => cert.windows,
        Err(_) => {
            let count = ((t_end / t_c).floor() as usize).clamp(1, 1000);
            (0..count).map(|k| (k as f64 * t_c, (k + 1) as f64 * t_c)).collect()
        }
    }
}

pub fn analyze(scenario: &Scenario, bank: &ObserverBank, trace: &SimulationTrace) -> Result<AnalysisReport> {
    let plant = scenario.plant()?;
    let schedule = scenario.schedule()?;
    let n = plant.n();
    if bank.n() != n || bank.agents.len() != plant.agents() || trace.agents() != plant.agents() {
        return Err(Error::Dimension("scenario, design and trace disagree on n or N".into()));
    }
    if trace.plant_states.first().is_some_and(|x| x.len() != n) {
        return Err(Error::Dimension("trace state dimension differs from the plant".into()));
    }
    let t_end = trace.times.last().copied().ok_or_else(|| Error::Dimension("empty trace".into()))?;
    let t_o = scenario.t_o();
    let us = bank.kernel_bases();
    let uco = uco_certify(&us, &schedule, t_o, t_end)?;
    let windows = union_windows(&schedule, scenario.graph.t_c, t_end);
    let minima = union_gramian_pd_check(&us, &schedule, &windows)?;
    let windows = windows.iter().zip(minima).map(|(&(start, end), lambda_min)| UnionWindow { start, end, lambda_min }).collect();
    let zeta = kernel_error_trace(trace, bank);
    let contraction = window_contraction(&zeta, &gamma_matrix(&us, &bank.gains()), t_o)?;
    let (t_a, t_b) = scenario.fit_window();
    let fits = error_rate_fits(trace, (t_a, t_b.min(t_end)))?;
    Ok(AnalysisReport::new(uco, windows, contraction, fits))
}
