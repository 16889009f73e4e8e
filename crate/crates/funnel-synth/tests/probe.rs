use funnel_synth::conic::{ClarabelBackend, SolveSettings};
use funnel_synth::error::SynthError;
use funnel_synth::synthesis::{solve, FunnelSolution};
use funnel_synth::systems::unicycle;

fn fmt(r: &Result<FunnelSolution, SynthError>) -> String {
    match r {
        Ok(s) => format!("{:?} obj {:.4}", s.status, s.objective),
        Err(e) => format!("err {e}"),
    }
}

#[test]
#[ignore]
fn probe_disturbed_flip() {
    for &alpha in &[0.05_f64, 0.1, 0.15] {
        for &gain in &[0.05_f64, 0.1, 0.15, 0.2, 0.3] {
            let scenario = unicycle::UnicycleScenario {
                alpha,
                w_max: 1.0,
                position_gain: gain,
                ..Default::default()
            };
            let smooth =
                unicycle::problem(unicycle::smooth_multipliers(2.0, 0.3), &scenario).unwrap();
            let lip = unicycle::problem(unicycle::lipschitz_multipliers(4.0), &scenario).unwrap();
            let rs = solve(&smooth, &ClarabelBackend, &SolveSettings::default());
            let rl = solve(&lip, &ClarabelBackend, &SolveSettings::default());
            println!(
                "alpha {alpha} gain {gain}: smooth {} | lipschitz(4) {}",
                fmt(&rs),
                fmt(&rl)
            );
        }
    }
}

#[test]
#[ignore]
fn probe_gamma4_stability() {
    let scenario = unicycle::UnicycleScenario {
        alpha: 0.1,
        w_max: 1.0,
        position_gain: 0.05,
        ..Default::default()
    };
    for &gamma in &[4.0_f64, 4.0, 4.0, 3.9999999999999964, 3.9, 4.1] {
        let lip = unicycle::problem(unicycle::lipschitz_multipliers(gamma), &scenario).unwrap();
        let rl = solve(&lip, &ClarabelBackend, &SolveSettings::default());
        println!("gamma {gamma:.17}: {}", fmt(&rl));
    }
}

#[test]
#[ignore]
fn probe_alpha_flip() {
    for &alpha in &[0.6_f64, 0.8, 1.0, 1.25, 1.5, 2.0] {
        let scenario = unicycle::UnicycleScenario {
            alpha,
            ..Default::default()
        };
        let smooth = unicycle::problem(unicycle::smooth_multipliers(2.0, 0.3), &scenario).unwrap();
        let lip = unicycle::problem(unicycle::lipschitz_multipliers(4.0), &scenario).unwrap();
        let rs = solve(&smooth, &ClarabelBackend, &SolveSettings::default());
        let rl = solve(&lip, &ClarabelBackend, &SolveSettings::default());
        println!("alpha {alpha}: smooth {} | lipschitz(4) {}", fmt(&rs), fmt(&rl));
    }
}

#[test]
#[ignore]
fn probe_gamma_grid() {
    let alpha: f64 = std::env::var("PROBE_ALPHA")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let scenario = unicycle::UnicycleScenario {
        alpha,
        w_max: 1.0,
        position_gain: 0.05,
        ..Default::default()
    };
    let smooth = unicycle::problem(unicycle::smooth_multipliers(2.0, 0.3), &scenario).unwrap();
    let rs = solve(&smooth, &ClarabelBackend, &SolveSettings::default());
    println!("alpha {alpha} smooth: {}", fmt(&rs));
    let mut gamma = 0.2_f64;
    while gamma < 4.05 {
        let lip = unicycle::problem(unicycle::lipschitz_multipliers(gamma), &scenario).unwrap();
        let rl = solve(&lip, &ClarabelBackend, &SolveSettings::default());
        println!("  gamma {gamma:.1}: {}", fmt(&rl));
        gamma += 0.1;
    }
}

#[test]
#[ignore]
fn probe_scvx_trust_scaling() {
    use funnel_synth::ctcs::{all_family_constraints, scvx_iterate, ScvxConfig};
    use funnel_synth::lmi::FunnelDynamics;
    use funnel_synth::model::{integrate_nominal, Channel, InputProfile, LinearFractionalModel};
    use funnel_synth::multipliers::{ChannelMultiplier, MultiplierSpec};
    use funnel_synth::synthesis::{CostKind, InputBound, SynthesisProblem};
    use funnel_synth::discretization::TimeGrid;
    use nalgebra::{dmatrix, dvector, DMatrix, DVector};
    use std::sync::Arc;

    let model = LinearFractionalModel {
        a_o: dmatrix![-0.5],
        b_o: dmatrix![1.0],
        f_o: dmatrix![0.1],
        e: dmatrix![0.2],
        c_o: dmatrix![1.0],
        d_o: dmatrix![0.0],
        g_o: DMatrix::zeros(1, 1),
        channels: vec![Channel::new(1, 1, Arc::new(|_t, q: &DVector<f64>| dvector![q[0].sin()]))],
    };
    let grid = TimeGrid::new(0.0, 2.0, 4).unwrap();
    let traj = integrate_nominal(
        &model,
        dvector![0.3],
        InputProfile::Analytic(Arc::new(|t: f64| dvector![0.1 * (0.5 * t).sin()])),
        &grid.times(),
        100,
    )
    .unwrap();
    let problem = SynthesisProblem {
        model,
        traj,
        grid,
        multipliers: MultiplierSpec { channels: vec![ChannelMultiplier::Lipschitz { gamma: 1.0 }] },
        dynamics: FunnelDynamics::Free,
        alpha: 1.0,
        w_max: 0.5,
        state_constraints: vec![],
        input_bounds: vec![InputBound { a: dvector![1.0], b: 1.5 }],
        terminal_set: Some(dmatrix![0.4]),
        cost: CostKind::TraceInverse,
        cost_weight: None,
        checking_points: 0,
        slope_ordering: true,
        substeps: 50,
    };
    let initial = solve(&problem, &ClarabelBackend, &SolveSettings::default()).unwrap();
    println!("initial {:?} obj {:.4}", initial.status, initial.objective);
    for &wtr in &[1e6_f64, 1e7, 1e8, 3e8, 1e9] {
        for &tol in &[1e-8_f64] {
            let settings = SolveSettings { feas_tol: tol, gap_tol: tol, ..SolveSettings::default() };
            let config = ScvxConfig { w_tr: wtr, max_iterations: 2, ..ScvxConfig::default() };
            let run = scvx_iterate(
                &problem,
                &all_family_constraints(&problem),
                &initial,
                &ClarabelBackend,
                &settings,
                &config,
            )
            .unwrap();
            let moved = run
                .solution
                .x
                .iter()
                .zip(&initial.x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            println!(
                "w_tr {wtr:.0e} tol {tol:.0e}: stop {:?} rounds {} max move {moved:.3e}",
                run.stop,
                run.trace.len()
            );
        }
    }
}

#[test]
#[ignore]
fn probe_shrink_factor() {
    use funnel_synth::verify::{invariance_report, shrink_certificate, DisturbancePolicy};
    use funnel_synth::lmi::FunnelDynamics;
    use funnel_synth::model::{integrate_nominal, Channel, InputProfile, LinearFractionalModel};
    use funnel_synth::multipliers::{ChannelMultiplier, MultiplierSpec};
    use funnel_synth::synthesis::{CostKind, InputBound, SynthesisProblem};
    use funnel_synth::discretization::TimeGrid;
    use nalgebra::{dmatrix, dvector, DMatrix, DVector};
    use std::sync::Arc;

    let model = LinearFractionalModel {
        a_o: dmatrix![-0.5],
        b_o: dmatrix![1.0],
        f_o: dmatrix![0.1],
        e: dmatrix![0.2],
        c_o: dmatrix![1.0],
        d_o: dmatrix![0.0],
        g_o: DMatrix::zeros(1, 1),
        channels: vec![Channel::new(1, 1, Arc::new(|_t, q: &DVector<f64>| dvector![q[0].sin()]))],
    };
    let grid = TimeGrid::new(0.0, 2.0, 4).unwrap();
    let traj = integrate_nominal(
        &model,
        dvector![0.3],
        InputProfile::Analytic(Arc::new(|t: f64| dvector![0.1 * (0.5 * t).sin()])),
        &grid.times(),
        100,
    )
    .unwrap();
    let problem = SynthesisProblem {
        model,
        traj,
        grid,
        multipliers: MultiplierSpec { channels: vec![ChannelMultiplier::Lipschitz { gamma: 1.0 }] },
        dynamics: FunnelDynamics::Free,
        alpha: 1.0,
        w_max: 0.5,
        state_constraints: vec![],
        input_bounds: vec![InputBound { a: dvector![1.0], b: 1.5 }],
        terminal_set: Some(dmatrix![0.4]),
        cost: CostKind::TraceInverse,
        cost_weight: None,
        checking_points: 2,
        slope_ordering: true,
        substeps: 50,
    };
    let sol = solve(&problem, &ClarabelBackend, &SolveSettings::default()).unwrap();
    println!("q nodes: {:?}", sol.q.iter().map(|q| q[(0, 0)]).collect::<Vec<_>>());
    println!("y nodes: {:?}", sol.y.iter().map(|y| y[(0, 0)]).collect::<Vec<_>>());
    for factor in [2e-3, 1e-3, 5e-4, 2e-4, 1e-4, 5e-5] {
        let shrunk = shrink_certificate(&sol, factor);
        for policy in [DisturbancePolicy::ConstantInTime, DisturbancePolicy::WorstCaseDirection] {
            let r = invariance_report(&problem, &shrunk, 10, policy, 11, 100).unwrap();
            println!(
                "factor {factor:>6} {policy:?}: worst {:.6} exceed {}",
                r.worst_level, r.exceedances
            );
        }
    }
}

#[test]
#[ignore]
fn probe_mc_unicycle() {
    use funnel_synth::lmi::FunnelDynamics;
    use funnel_synth::systems::unicycle;
    use funnel_synth::verify::{invariance_report, shrink_certificate, DisturbancePolicy};

    let scenario = unicycle::UnicycleScenario {
        n: 9,
        checking_points: 4,
        dynamics: FunnelDynamics::Free,
        w_max: 1.0,
        position_gain: 0.02,
        alpha: 0.1,
    };
    let problem = unicycle::problem(unicycle::smooth_multipliers(2.0, 0.3), &scenario).unwrap();
    let sol = solve(&problem, &ClarabelBackend, &SolveSettings::default()).unwrap();
    println!("status {:?} obj {:.4} c_q {}", sol.status, sol.objective, sol.c_q);
    println!("lambda_w: {:?}", sol.sides.iter().map(|s| s.0.lambda_w).collect::<Vec<_>>());

    let t0 = std::time::Instant::now();
    let report =
        invariance_report(&problem, &sol, 100, DisturbancePolicy::ConstantInTime, 7, 200).unwrap();
    println!(
        "true certificate: worst {:.6} exceed {} margin {:.3e} ({:?})",
        report.worst_level, report.exceedances, report.worst_input_margin, t0.elapsed()
    );

    let joint = shrink_certificate(&sol, 0.5);
    let report =
        invariance_report(&problem, &joint, 100, DisturbancePolicy::ConstantInTime, 7, 200)
            .unwrap();
    println!("joint 0.5 shrink: worst {:.6} exceed {}", report.worst_level, report.exceedances);

    let mut q_only = sol.clone();
    for q in &mut q_only.q {
        *q *= 0.5;
    }
    let report =
        invariance_report(&problem, &q_only, 100, DisturbancePolicy::ConstantInTime, 7, 200)
            .unwrap();
    println!("q-only 0.5 shrink: worst {:.6} exceed {}", report.worst_level, report.exceedances);
}

#[test]
#[ignore]
fn probe_scvx_unicycle() {
    use funnel_synth::ctcs::{all_family_constraints, scvx_iterate, ScvxConfig};
    let scenario = unicycle::UnicycleScenario {
        alpha: 0.1,
        w_max: 1.0,
        position_gain: 0.02,
        checking_points: 1,
        ..Default::default()
    };
    let problem = unicycle::problem(unicycle::smooth_multipliers(2.0, 0.3), &scenario).unwrap();
    let initial = solve(&problem, &ClarabelBackend, &SolveSettings::default()).unwrap();
    println!("initial {:?} obj {:.4}", initial.status, initial.objective);
    let mut constraints = all_family_constraints(&problem);
    for c in &mut constraints {
        c.epsilon = 1e-6;
        c.exponent = 2.0;
        c.panels = 32;
    }
    let config = ScvxConfig { w_h: 20.0, w_tr: 1e5, max_iterations: 30, ..ScvxConfig::default() };
    let t = std::time::Instant::now();
    let run = scvx_iterate(
        &problem,
        &constraints,
        &initial,
        &ClarabelBackend,
        &SolveSettings::default(),
        &config,
    )
    .unwrap();
    println!("stop {:?} in {:?}", run.stop, t.elapsed());
    for row in &run.trace {
        println!(
            "  it {} cost {:.4} penalty {:.3e} trust {:.3e} viol {:.3e}",
            row.iteration, row.cost, row.penalty, row.trust, row.max_violation
        );
    }
}

#[test]
#[ignore]
fn probe_matched_dip() {
    use funnel_synth::discretization::discretize_interval;
    use funnel_synth::lmi::FunnelDynamics;

    for &(label, dynamics) in &[("matched", FunnelDynamics::Matched), ("free", FunnelDynamics::Free)]
    {
        let scenario = unicycle::UnicycleScenario {
            alpha: 0.1,
            w_max: 1.0,
            position_gain: 0.02,
            dynamics,
            ..Default::default()
        };
        let problem = unicycle::problem(unicycle::smooth_multipliers(2.0, 0.3), &scenario).unwrap();
        let sol = match solve(&problem, &ClarabelBackend, &SolveSettings::default()) {
            Ok(s) => s,
            Err(e) => {
                println!("{label}: err {e}");
                continue;
            }
        };
        println!("{label}: {:?} obj {:.4}", sol.status, sol.objective);
        if sol.status != funnel_synth::conic::SolveStatus::Optimal {
            continue;
        }
        let transform = problem.multipliers.transform(&problem.model);
        let d = problem.grid.dt();
        let samples = 112usize;
        let offsets: Vec<f64> = (1..=samples).map(|j| d * j as f64 / samples as f64).collect();
        let mut min_eig = f64::INFINITY;
        let mut min_t = 0.0;
        let mut min_node = f64::INFINITY;
        for k in 0..problem.grid.n {
            let trans = discretize_interval(
                &problem.model,
                &problem.traj,
                &transform,
                sol.dynamics,
                sol.alpha,
                problem.grid.node(k),
                d,
                &offsets,
                problem.substeps,
            )
            .unwrap();
            for (j, tr) in trans.iter().enumerate() {
                let q = tr.q_value(&sol.q[k], &sol.y[k], &sol.y[k + 1], &sol.z[k].0, &sol.z[k].1);
                let sym = (&q + q.transpose()) * 0.5;
                let eig = sym.symmetric_eigen().eigenvalues.min();
                if eig < min_eig {
                    min_eig = eig;
                    min_t = problem.grid.node(k) + offsets[j];
                }
            }
            let sym = (&sol.q[k] + sol.q[k].transpose()) * 0.5;
            min_node = min_node.min(sym.symmetric_eigen().eigenvalues.min());
        }
        println!("  dense min eig {min_eig:.6e} at t {min_t:.3}; node min eig {min_node:.6e}");
    }
}

#[test]
#[ignore]
fn probe_gamma_low_end() {
    let scenario = unicycle::UnicycleScenario {
        alpha: 0.1,
        w_max: 1.0,
        position_gain: 0.05,
        ..Default::default()
    };
    let smooth = unicycle::problem(unicycle::smooth_multipliers(2.0, 0.3), &scenario).unwrap();
    let rs = solve(&smooth, &ClarabelBackend, &SolveSettings::default());
    println!("smooth: {}", fmt(&rs));
    for i in 1..=9 {
        let gamma = 0.1 * i as f64;
        let lip = unicycle::problem(unicycle::lipschitz_multipliers(gamma), &scenario).unwrap();
        let rl = solve(&lip, &ClarabelBackend, &SolveSettings::default());
        println!("  gamma {gamma:.1}: {}", fmt(&rl));
    }
}
