//! Acceptance gate. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion and fails if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swobs::analysis::{
    bar_eta_gramian, error_rate_fits, fit_exponential_rate, uco_certify, union_gramian_pd_check, window_contraction, REL_NOISE_FLOOR,
};
use swobs::decomposition::{kalman_decompose, observability_matrix};
use swobs::design::{design_observers, DesignOptions, ObserverBank};
use swobs::graph::{SwitchingSchedule, Topology};
use swobs::linalg;
use swobs::pipeline;
use swobs::plant::{skew_symmetrize, LtiPlant};
use swobs::scenario::{random_skew_system, random_spd, three_inertia_plant, three_inertia_scenario, three_inertia_targets};
use swobs::simulation::{
    simulate_eta_system, simulate_network, simulate_zeta_system, Disturbance, InitialState, SimConfig, SimulationTrace,
};

use common::*;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn criterion(id: u32, name: &'static str, budget_s: u64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_s);
    Outcome { id, name, pass: ok && elapsed < budget, detail, elapsed, budget }
}

fn three_inertia_bank(gains: [f64; 3]) -> (swobs::scenario::Scenario, ObserverBank) {
    let s = three_inertia_scenario(10.0, 3.0, gains, 60.0, 42);
    let bank = pipeline::design(&s).expect("design succeeds");
    (s, bank)
}

fn ranks() -> (bool, String) {
    let plant = three_inertia_plant(10.0);
    let lib: Vec<usize> =
        (0..3).map(|i| linalg::numerical_rank(&observability_matrix(&plant.c_block(i), plant.a()).unwrap())).collect();
    let oracle: Vec<usize> = (0..3).map(|i| rank_by_elimination(&observability(&plant.c_block(i), plant.a()), 1e-10)).collect();
    (lib == [4, 4, 2] && oracle == lib, format!("library {lib:?}, elimination oracle {oracle:?}, expected [4, 4, 2]"))
}

fn placement() -> (bool, String) {
    let (_, bank) = three_inertia_bank([1.0; 3]);
    let plant = three_inertia_plant(10.0);
    let mut worst_block = 0.0_f64;
    let mut worst_full = 0.0_f64;
    for (i, (agent, targets)) in bank.agents.iter().zip(three_inertia_targets()).enumerate() {
        let dec = &agent.decomposition;
        let block = &dec.a_obs - &agent.placement.gain * &dec.c_obs;
        worst_block = worst_block.max(matched_distance(&eig(&block), &targets));
        let full = plant.a() - &agent.l * plant.c_block(i);
        let mut expected = targets.clone();
        expected.extend(eig(&dec.a_unobs));
        worst_full = worst_full.max(matched_distance(&eig(&full), &expected));
    }
    (
        worst_block <= 1e-6 && worst_full <= 1e-6,
        format!("max matched error: observable block {worst_block:.2e}, full A - L_i C_i {worst_full:.2e} (tol 1e-6)"),
    )
}

fn convergence(gains: [f64; 3]) -> (bool, String) {
    let (s, bank) = three_inertia_bank(gains);
    let mut cfg = s.sim_config();
    cfg.dt = 1e-3;
    cfg.t_end = 60.0;
    let trace = simulate_network(&s.plant().unwrap(), &bank, &s.schedule().unwrap(), &cfg).unwrap();
    let fits = error_rate_fits(&trace, (3.0, 60.0)).unwrap();
    let e0 = trace.error_norms[0].clone();
    let floor = REL_NOISE_FLOOR * e0.iter().fold(0.0_f64, |m, v| m.max(*v));
    let mut ok = true;
    let mut parts = Vec::new();
    for i in 0..3 {
        let series = trace.error_series(i);
        let monotone = envelope_nonincreasing(&window_maxima(&trace.times, &series, 3.0), floor);
        let fit = &fits[i];
        let ratio = series.last().unwrap() / e0[i];
        let agent_ok = monotone && fit.lambda > 0.0 && fit.r_squared >= 0.9 && ratio < 1e-3;
        ok &= agent_ok;
        parts.push(format!(
            "agent {}: envelope {} lambda {:.4} r2 {:.4} final/initial {:.2e}{}",
            i + 1,
            if monotone { "monotone" } else { "NOT monotone" },
            fit.lambda,
            fit.r_squared,
            ratio,
            if agent_ok { "" } else { " <-" }
        ));
    }
    (ok, parts.join("; "))
}

fn decomposition_invariants() -> (bool, String) {
    let mut plants = vec![three_inertia_plant(10.0)];
    plants.extend((0..50).map(|seed| random_skew_system(seed, 8, 4).plant));
    let (mut orth, mut inv, mut skew, mut unobservable_blocks, mut rank_mismatch) = (0.0_f64, 0.0_f64, 0.0_f64, 0, 0);
    for plant in &plants {
        let sk = skew_symmetrize(plant.a()).unwrap();
        let a_bar = sk.transform(plant.a());
        for i in 0..plant.agents() {
            let dec = kalman_decompose(plant, i, &sk).unwrap();
            let n = dec.n();
            orth = orth.max((dec.t.transpose() * &dec.t - DMatrix::<f64>::identity(n, n)).norm());
            inv = inv.max((&a_bar * &dec.u - &dec.u * &dec.a_unobs).norm());
            skew = skew.max((&dec.a_unobs + dec.a_unobs.transpose()).norm());
            if !pbh_observable(&dec.c_obs, &dec.a_obs) {
                unobservable_blocks += 1;
            }
            let c_eff = plant.c_block(i) * &sk.p;
            if n - rank_by_elimination(&observability(&c_eff, &a_bar), 1e-10) != dec.nu {
                rank_mismatch += 1;
            }
        }
    }
    (
        orth <= 1e-10 && inv <= 1e-8 && skew <= 1e-8 && unobservable_blocks == 0 && rank_mismatch == 0,
        format!(
            "{} systems: |T'T - I| {orth:.1e}, |AU - U A_unobs| {inv:.1e}, skew residual {skew:.1e}, \
             PBH failures {unobservable_blocks}, kernel-dimension mismatches {rank_mismatch}",
            plants.len()
        ),
    )
}

fn auxiliary_systems() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut triples, mut seed) = (0, 1000u64);
    let (mut min_eta_rate, mut min_zeta_rate) = (f64::INFINITY, f64::INFINITY);
    let (mut max_norm_gap, mut max_v_increase, mut max_transform_gap) = (0.0_f64, 0.0_f64, 0.0_f64);
    while triples < 20 {
        seed += 1;
        let sys = random_skew_system(seed, 8, 4);
        let bank = design_observers(&sys.plant, &DesignOptions { use_p: true, ..Default::default() }).unwrap();
        let nu = bank.nu();
        if nu == 0 {
            continue;
        }
        triples += 1;
        let us = bank.kernel_bases();
        let a_bar = linalg::block_diag(&bank.unobservable_blocks());
        let q = random_spd(nu, &mut rng);
        let gammas: Vec<f64> = (0..us.len()).map(|_| rng.gen_range(0.5..2.0)).collect();
        let gamma = swobs::simulation::gamma_matrix(&us, &gammas);
        let x0 = DVector::from_fn(nu, |_, _| rng.gen_range(-1.0..1.0));
        let t_end = 30.0 * sys.t_c.max(1.0);
        let cfg = SimConfig::new(0.01, t_end, seed);

        let eta = simulate_eta_system(&us, &q, &sys.schedule, &cfg, &x0).unwrap();
        let q_inv = q.clone().try_inverse().unwrap();
        let v: Vec<f64> = eta.states.iter().map(|e| 0.5 * e.dot(&(&q_inv * e))).collect();
        for w in v.windows(2) {
            max_v_increase = max_v_increase.max((w[1] - w[0]) / w[0].max(f64::MIN_POSITIVE));
        }
        min_eta_rate = min_eta_rate.min(fit_exponential_rate(&eta.times, &eta.norms(), (0.0, t_end)).unwrap().lambda);

        let zeta = simulate_zeta_system(&bank.unobservable_blocks(), &gammas, &us, &sys.schedule, &cfg, &x0).unwrap();
        min_zeta_rate = min_zeta_rate.min(fit_exponential_rate(&zeta.times, &zeta.norms(), (0.0, t_end)).unwrap().lambda);
        // The same initial state through η̇ = −Γ Uᵀ(ℒ⊗I)U η must equal e^{−A_ō t} ζ(t).
        let eta_gamma = simulate_eta_system(&us, &gamma, &sys.schedule, &cfg, &x0).unwrap();
        for k in (0..zeta.times.len()).step_by(25) {
            let rotated = (&a_bar * -zeta.times[k]).exp() * &zeta.states[k];
            max_norm_gap = max_norm_gap.max((rotated.norm() - zeta.states[k].norm()).abs());
            max_transform_gap = max_transform_gap.max((&rotated - &eta_gamma.states[k]).norm() / x0.norm());
        }
    }
    (
        min_eta_rate > 0.0 && min_zeta_rate > 0.0 && max_norm_gap <= 1e-9 && max_v_increase <= 1e-9 && max_transform_gap <= 1e-6,
        format!(
            "{triples} triples: min rate eta {min_eta_rate:.4} zeta {min_zeta_rate:.4}; \
             max | |e^(-A t) zeta| - |zeta| | {max_norm_gap:.1e}; max relative V increase {max_v_increase:.1e}; \
             max |e^(-A t) zeta - eta|/|x0| {max_transform_gap:.1e}"
        ),
    )
}

/// `Uᵀ(ℒ ⊗ Iₙ)U` with explicit Kronecker and block-diagonal products.
fn kron_coupling(us: &[DMatrix<f64>], l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = us[0].nrows();
    let big_u = linalg::block_diag(us);
    let kron = l.kronecker(&DMatrix::<f64>::identity(n, n));
    big_u.transpose() * kron * big_u
}

fn common_kernel_direction(plant: &LtiPlant, bank: &ObserverBank) -> DVector<f64> {
    let a_bar = bank.skew.transform(plant.a());
    let o = observability(&(plant.c() * &bank.skew.p), &a_bar);
    let svd = o.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let n = plant.n();
    // Pad so there is a right singular vector for every column.
    let (sv, last) = if v_t.nrows() == n {
        (svd.singular_values[n - 1], v_t.row(n - 1).transpose())
    } else {
        panic!("wide observability matrix")
    };
    assert!(sv < 1e-9, "expected a common unobservable direction, smallest singular value {sv}");
    last
}

fn uco_and_contraction() -> (bool, String) {
    let (s, bank) = three_inertia_bank([1.0; 3]);
    let schedule = s.schedule().unwrap();
    let us = bank.kernel_bases();
    let report = uco_certify(&us, &schedule, 6.0, 60.0).unwrap();
    let alpha_1 = report.alpha_1.unwrap();
    let ls = schedule.laplacians();
    let oracle = kron_coupling(&us, &ls[0]) * 1.0 + kron_coupling(&us, &ls[1]) * 2.0 + kron_coupling(&us, &ls[0]) * 1.0 + kron_coupling(&us, &ls[1]) * 2.0;
    let gram_gap = (bar_eta_gramian(&us, &schedule, 0.0, 6.0) - oracle).norm();

    let nu = bank.nu();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eta0 = DVector::from_fn(nu, |_, _| rng.gen_range(-1.0..1.0));
    let eye = DMatrix::<f64>::identity(nu, nu);
    let eta = simulate_eta_system(&us, &eye, &schedule, &SimConfig::new(1e-2, 60.0, 7), &eta0).unwrap();
    let contraction = window_contraction(&eta, &eye, 6.0).unwrap();
    let max_ratio = contraction.max_ratio.unwrap();
    let connected_ok = report.valid && alpha_1 > 0.0 && gram_gap <= 1e-12 && max_ratio < 1.0;

    // Counterexample: without the third sensor no agent sees the antisymmetric mode.
    let blind = LtiPlant::from_blocks(
        three_inertia_plant(10.0).a().clone(),
        &[three_inertia_plant(10.0).c_block(0), three_inertia_plant(10.0).c_block(1), DMatrix::zeros(1, 6)],
    )
    .unwrap();
    let blind_bank = design_observers(&blind, &DesignOptions { use_p: true, ..Default::default() }).unwrap();
    let bus = blind_bank.kernel_bases();
    let union_min = union_gramian_pd_check(&bus, &schedule, &[(0.0, 3.0)]).unwrap()[0];
    let blind_alpha = uco_certify(&bus, &schedule, 6.0, 60.0).unwrap().alpha_1.unwrap();
    let w = common_kernel_direction(&blind, &blind_bank);
    let stacked: Vec<f64> = bus.iter().flat_map(|u| (u.transpose() * &w).data.as_vec().clone()).collect();
    let eta0 = DVector::from_vec(stacked);
    let bnu = eta0.len();
    let beye = DMatrix::<f64>::identity(bnu, bnu);
    let beta = simulate_eta_system(&bus, &beye, &schedule, &SimConfig::new(1e-2, 60.0, 7), &eta0).unwrap();
    let bc = window_contraction(&beta, &beye, 6.0).unwrap();
    let worst_unit = bc.ratios.iter().map(|r| (r.1 - 1.0).abs()).fold(0.0_f64, f64::max);
    let counter_ok = union_min <= 1e-10 && blind_alpha <= 1e-10 && !bc.ratios.is_empty() && worst_unit <= 1e-9;
    (
        connected_ok && counter_ok,
        format!(
            "alpha_1 {alpha_1:.4} (valid {}), Gramian vs Kronecker oracle {gram_gap:.1e}, max contraction {max_ratio:.4}; \
             counterexample: union lambda_min {union_min:.1e}, alpha_1 {blind_alpha:.1e}, max |ratio - 1| {worst_unit:.1e}",
            report.valid
        ),
    )
}

fn final_state(trace: &SimulationTrace) -> DVector<f64> {
    let k = trace.times.len() - 1;
    let mut parts: Vec<f64> = trace.plant_states[k].iter().copied().collect();
    for x in &trace.observer_states[k] {
        parts.extend(x.iter());
    }
    DVector::from_vec(parts)
}

fn numerical_integrity() -> (bool, String) {
    let (s, bank) = three_inertia_bank([1.0; 3]);
    let plant = s.plant().unwrap();
    let schedule = s.schedule().unwrap();
    let finals: Vec<DVector<f64>> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&dt| final_state(&simulate_network(&plant, &bank, &schedule, &SimConfig::new(dt, 3.0, 42)).unwrap()))
        .collect();
    let factor = (&finals[0] - &finals[1]).norm() / (&finals[1] - &finals[2]).norm();

    // One agent with every sensor: the error obeys ė = (A − L C) e exactly.
    let full = three_inertia_plant(10.0);
    let single = LtiPlant::from_blocks(full.a().clone(), &[full.c().clone()]).unwrap();
    let bank1 = design_observers(&single, &DesignOptions { use_p: true, ..Default::default() }).unwrap();
    let lone = SwitchingSchedule::constant(Topology::empty(1), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = DVector::from_fn(6, |_, _| rng.gen_range(-5.0..5.0));
    let xh0 = DVector::from_fn(6, |_, _| rng.gen_range(-5.0..5.0));
    let mut cfg = SimConfig::new(1e-3, 10.0, 0);
    cfg.initial = Some(InitialState { plant: x0.clone(), observers: vec![xh0.clone()] });
    let trace = simulate_network(&single, &bank1, &lone, &cfg).unwrap();
    let closed = full.a() - &bank1.agents[0].l * full.c();
    let mut worst = 0.0_f64;
    for k in (0..trace.times.len()).step_by(250) {
        let t = trace.times[k];
        let x = (full.a() * t).exp() * &x0;
        let e = (&closed * t).exp() * (&xh0 - &x0);
        worst = worst.max((&trace.plant_states[k] - &x).norm()).max((trace.error(k, 0) - e).norm());
    }
    (
        (8.0..=32.0).contains(&factor) && worst <= 1e-6,
        format!("step-halving factor {factor:.2} (want [8, 32]); closed-form deviation {worst:.1e} (tol 1e-6)"),
    )
}

fn robustness() -> (bool, String) {
    let (s, bank) = three_inertia_bank([1.0; 3]);
    let plant = s.plant().unwrap();
    let schedule = s.schedule().unwrap();
    let disturbance = Some(Disturbance { amplitude: 1e-3, agents: vec![] });
    let mut cfg = SimConfig::new(1e-3, 120.0, 42);
    cfg.disturbance = disturbance.clone();
    let random = simulate_network(&plant, &bank, &schedule, &cfg).unwrap();
    let tail_max = random
        .times
        .iter()
        .zip(&random.error_norms)
        .filter(|(t, _)| **t >= 60.0)
        .flat_map(|(_, e)| e.iter().copied())
        .fold(0.0_f64, f64::max);

    let x0 = DVector::from_element(6, 1.0);
    let mut cfg = SimConfig::new(1e-3, 120.0, 42);
    cfg.disturbance = disturbance;
    cfg.initial = Some(InitialState { plant: x0.clone(), observers: vec![x0; 3] });
    let exact = simulate_network(&plant, &bank, &schedule, &cfg).unwrap();
    let full_max = exact.error_norms.iter().flatten().copied().fold(0.0_f64, f64::max);
    (
        tail_max < 0.1 && full_max < 0.1,
        format!("random start: max error on [60, 120] {tail_max:.2e}; exact start: max error on [0, 120] {full_max:.2e} (bound 1e-1)"),
    )
}

#[test]
fn acceptance() {
    let outcomes = vec![
        criterion(1, "three-inertia observability ranks", 1, ranks),
        criterion(2, "three-inertia pole placement", 1, placement),
        criterion(3, "three-inertia convergence, unit gains", 30, || convergence([1.0, 1.0, 1.0])),
        criterion(4, "three-inertia convergence, gains (0.5, 1, 2)", 30, || convergence([0.5, 1.0, 2.0])),
        criterion(5, "decomposition invariants", 5, decomposition_invariants),
        criterion(6, "eta/zeta auxiliary systems", 60, auxiliary_systems),
        criterion(7, "Gramian bound, contraction, counterexample", 10, uco_and_contraction),
        criterion(8, "integrator order and closed-form oracle", 20, numerical_integrity),
        criterion(9, "bounded error under disturbance", 60, robustness),
    ];
    println!();
    for o in &outcomes {
        println!(
            "[{}] criterion {}: {} ({:.2}s of {}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.elapsed.as_secs_f64(),
            o.budget.as_secs(),
            o.detail
        );
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
