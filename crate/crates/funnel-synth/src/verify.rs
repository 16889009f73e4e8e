//! Empirical certification of a solved funnel: boundary sampling,
//! closed-loop rollouts of the original nonlinear plant under bounded
//! disturbances, dense eigenvalue traces of every pointwise inequality, and
//! aggregate invariance reports.
//!
//! Every evaluation reconstructs `Q(t)`, `Y(t)`, and the gains with the same
//! transition operators the synthesis used, so a reported excursion is a
//! property of the certificate itself and not of a second discretization.
//! Rollouts read shared schedule data and are independent of one another;
//! the report is assembled in rollout order regardless of thread timing.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctcs::{family_labels, IntervalLmis};
use crate::discretization::{discretize_interval, foh_weights};
use crate::error::SynthError;
use crate::linalg::{lambda_max, lambda_min, spd_inverse, sym_part, symmetric_sqrt};
use crate::synthesis::{assemble, FunnelSolution, SynthesisProblem};

/// Exceedance threshold on `max V / c_Q`; absorbs integration and solver
/// roundoff without hiding a real crossing.
pub const LEVEL_TOLERANCE: f64 = 1e-6;

/// Lower bound on the per-halfspace input-funnel margin along a rollout.
pub const INPUT_MARGIN_FLOOR: f64 = -1e-7;

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, one output per draw pair; u1 is kept away from zero.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_sphere(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| standard_normal(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Draw `n` states on the boundary of the entry set: `eta = sqrt(c_q) *
/// Q0^{1/2} u` with `u` uniform on the unit sphere, so every sample
/// satisfies `eta' Q0^{-1} eta = c_q` to rounding.
pub fn sample_boundary(
    q0: &DMatrix<f64>,
    c_q: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>, SynthError> {
    if !(c_q > 0.0) {
        return Err(SynthError::NotPositive("tube level".into()));
    }
    if lambda_min(q0) <= 0.0 {
        return Err(SynthError::NotPositive("entry certificate".into()));
    }
    let root = symmetric_sqrt(q0, 1e-12)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = c_q.sqrt();
    Ok((0..n).map(|_| &root * unit_sphere(&mut rng, q0.nrows()) * scale).collect())
}

/// How the bounded disturbance is generated along a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbancePolicy {
    /// One random direction of norm `w_max`, held over the whole horizon.
    ConstantInTime,
    /// Redrawn at every grid node and held across the interval.
    PiecewiseConstant,
    /// Norm `w_max` aligned with the certificate gradient, pulled back
    /// through the disturbance input map: `w ~ F' Q(t)^{-1} eta`.
    WorstCaseDirection,
}

/// Disturbance value at one evaluation: time, tube error, and the
/// certificate inverse at that time.
pub type DisturbanceSignal<'a> = dyn Fn(f64, &DVector<f64>, &DMatrix<f64>) -> DVector<f64> + Sync + 'a;

/// Reconstructed funnel data at one simulation half-step.
struct ScheduleRow {
    t: f64,
    x_bar: DVector<f64>,
    u_bar: DVector<f64>,
    q_inv: DMatrix<f64>,
    gain: DMatrix<f64>,
    /// Largest tube semi-axis, `sqrt(c_q * lambda_max Q)`.
    radius: f64,
    /// Input-funnel support value per input halfspace.
    supports: Vec<f64>,
}

/// Rows at every half-step of the simulation grid: index `2i` is step `i`,
/// odd indices are the midpoints the RK4 stages use.
struct Schedule {
    rows: Vec<ScheduleRow>,
    steps_per_interval: usize,
    dt: f64,
    c_q: f64,
}

fn build_schedule(
    problem: &SynthesisProblem,
    solution: &FunnelSolution,
    steps_per_interval: usize,
) -> Result<Schedule, SynthError> {
    if steps_per_interval < 100 {
        return Err(SynthError::InvalidSetup(format!(
            "simulation needs at least 100 steps per interval, got {steps_per_interval}"
        )));
    }
    let model = &problem.model;
    let transform = problem.multipliers.transform(model);
    let grid = &problem.grid;
    let d = grid.dt();
    let c_q = solution.c_q;
    let halves = 2 * steps_per_interval;

    let mut rows: Vec<ScheduleRow> = Vec::with_capacity(grid.n * halves + 1);
    let mut push_row = |t: f64, q: DMatrix<f64>, y: DMatrix<f64>| -> Result<(), SynthError> {
        let q = sym_part(&q);
        let q_inv = spd_inverse(&q)?;
        let gain = &y * &q_inv;
        let radius = (c_q * lambda_max(&q)).sqrt();
        let supports = problem
            .input_bounds
            .iter()
            .map(|ib| {
                let ya = gain.transpose() * &ib.a;
                (c_q * (ya.transpose() * &q * &ya)[(0, 0)].max(0.0)).sqrt()
            })
            .collect();
        rows.push(ScheduleRow {
            t,
            x_bar: problem.traj.state_at(t)?,
            u_bar: problem.traj.input_at(t)?,
            q_inv,
            gain,
            radius,
            supports,
        });
        Ok(())
    };

    for k in 0..grid.n {
        let t_k = grid.node(k);
        push_row(t_k, solution.q[k].clone(), solution.y[k].clone())?;
        let offsets: Vec<f64> = (1..=halves).map(|j| d * j as f64 / halves as f64).collect();
        let trans = discretize_interval(
            model,
            &problem.traj,
            &transform,
            solution.dynamics,
            solution.alpha,
            t_k,
            d,
            &offsets,
            problem.substeps,
        )?;
        // The interval-end row is dropped in favor of the next node's own
        // values; the two agree up to the shooting tolerance.
        for tr in trans.iter().take(halves - 1) {
            let q_h = tr.q_value(
                &solution.q[k],
                &solution.y[k],
                &solution.y[k + 1],
                &solution.z[k].0,
                &solution.z[k].1,
            );
            let (wm, wp) = foh_weights(tr.h, d);
            let y_h = &solution.y[k] * wm + &solution.y[k + 1] * wp;
            push_row(t_k + tr.h, q_h, y_h)?;
        }
    }
    let t_n = grid.node(grid.n);
    push_row(t_n, solution.q[grid.n].clone(), solution.y[grid.n].clone())?;
    Ok(Schedule { rows, steps_per_interval, dt: d / steps_per_interval as f64, c_q })
}

/// One closed-loop trajectory with its certificate levels.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `V(t, eta) / c_q` at each recorded time.
    pub levels: Vec<f64>,
    /// Worst input-funnel support margin seen along the rollout; positive
    /// when the realized feedback correction stays inside the input tube.
    pub worst_input_margin: f64,
    /// The state left the funnel by three orders of magnitude and the
    /// simulation stopped early.
    pub diverged: bool,
}

impl Rollout {
    pub fn max_level(&self) -> f64 {
        self.levels.iter().cloned().fold(0.0, f64::max)
    }
}

fn simulate_on_schedule(
    problem: &SynthesisProblem,
    schedule: &Schedule,
    eta0: &DVector<f64>,
    w_signal: &DisturbanceSignal,
) -> Rollout {
    let model = &problem.model;
    let dt = schedule.dt;
    let steps = schedule.steps_per_interval * problem.grid.n;
    let w_cap = if problem.w_max > 0.0 { problem.w_max } else { 0.0 };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut levels = Vec::with_capacity(steps + 1);
    let mut worst_margin = f64::INFINITY;
    let mut diverged = false;

    let stage = |row: &ScheduleRow, x: &DVector<f64>| -> DVector<f64> {
        let eta = x - &row.x_bar;
        let u = &row.u_bar + &row.gain * &eta;
        let w = w_signal(row.t, &eta, &row.q_inv);
        debug_assert!(w.norm() <= w_cap + 1e-9, "disturbance norm {} above the cap", w.norm());
        model.dynamics(row.t, x, &u, &w)
    };

    let mut x = &schedule.rows[0].x_bar + eta0;
    for i in 0..=steps {
        let row = &schedule.rows[2 * i];
        let eta = &x - &row.x_bar;
        let level = (eta.transpose() * &row.q_inv * &eta)[(0, 0)] / schedule.c_q;
        let u_here = &row.u_bar + &row.gain * &eta;
        for (s, &support) in row.supports.iter().enumerate() {
            let xi = &u_here - &row.u_bar;
            let margin = support - problem.input_bounds[s].a.dot(&xi);
            worst_margin = worst_margin.min(margin);
        }
        times.push(row.t);
        states.push(x.clone());
        inputs.push(u_here);
        levels.push(level);
        if eta.norm() > 1e3 * row.radius.max(1e-12) {
            diverged = true;
            break;
        }
        if i == steps {
            break;
        }

        let mid = &schedule.rows[2 * i + 1];
        let next = &schedule.rows[2 * i + 2];
        let k1 = stage(row, &x);
        let k2 = stage(mid, &(&x + &k1 * (dt / 2.0)));
        let k3 = stage(mid, &(&x + &k2 * (dt / 2.0)));
        let k4 = stage(next, &(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Rollout { times, states, inputs, levels, worst_input_margin: worst_margin, diverged }
}

/// Integrate the original nonlinear plant under the funnel feedback
/// `u = u_bar + K(t)(x - x_bar)` from the perturbed start `x_bar(t0) +
/// eta0`, with fixed-step RK4 at `steps_per_interval` steps per grid
/// interval (at least 100; 200 reproduces the default reports).
pub fn simulate_closed_loop(
    problem: &SynthesisProblem,
    solution: &FunnelSolution,
    eta0: &DVector<f64>,
    w_signal: &DisturbanceSignal,
    steps_per_interval: usize,
) -> Result<Rollout, SynthError> {
    if eta0.len() != problem.model.n_x() {
        return Err(SynthError::dims(
            "initial tube error",
            problem.model.n_x().to_string(),
            eta0.len().to_string(),
        ));
    }
    let schedule = build_schedule(problem, solution, steps_per_interval)?;
    Ok(simulate_on_schedule(problem, &schedule, eta0, w_signal))
}

/// Difference in `max V / c_q` between a rollout at `steps_per_interval`
/// and one at double the resolution; a large value means the simulation
/// step is not yet resolving the closed loop.
pub fn dt_refinement_gap(
    problem: &SynthesisProblem,
    solution: &FunnelSolution,
    eta0: &DVector<f64>,
    w_signal: &DisturbanceSignal,
    steps_per_interval: usize,
) -> Result<f64, SynthError> {
    let coarse = simulate_closed_loop(problem, solution, eta0, w_signal, steps_per_interval)?;
    let fine = simulate_closed_loop(problem, solution, eta0, w_signal, 2 * steps_per_interval)?;
    Ok((coarse.max_level() - fine.max_level()).abs())
}

/// One rollout's row in the aggregate report.
#[derive(Clone, Copy, Debug)]
pub struct RolloutRecord {
    pub index: usize,
    pub seed: u64,
    pub max_level: f64,
    pub worst_input_margin: f64,
    pub diverged: bool,
}

/// Monte Carlo invariance report over boundary-sampled rollouts.
#[derive(Clone, Debug)]
pub struct RolloutReport {
    pub policy: DisturbancePolicy,
    pub c_q: f64,
    pub records: Vec<RolloutRecord>,
    pub exceedances: usize,
    pub worst_level: f64,
    pub worst_input_margin: f64,
}

impl RolloutReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("rollout,seed,max_level,worst_input_margin,diverged\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.index, r.seed, r.max_level, r.worst_input_margin, r.diverged
            ));
        }
        out
    }
}

fn rollout_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Disturbance signal of one rollout under a policy, with all randomness
/// drawn up front so the signal itself is a pure function.
fn policy_signal<'a>(
    problem: &'a SynthesisProblem,
    policy: DisturbancePolicy,
    seed: u64,
) -> Box<DisturbanceSignal<'a>> {
    let n_w = problem.model.n_w();
    let w_max = problem.w_max;
    if n_w == 0 || w_max == 0.0 {
        return Box::new(move |_t, _eta, _q_inv| DVector::zeros(n_w));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match policy {
        DisturbancePolicy::ConstantInTime => {
            let w = unit_sphere(&mut rng, n_w) * w_max;
            Box::new(move |_t, _eta, _q_inv| w.clone())
        }
        DisturbancePolicy::PiecewiseConstant => {
            let draws: Vec<DVector<f64>> =
                (0..problem.grid.n).map(|_| unit_sphere(&mut rng, n_w) * w_max).collect();
            let (t0, d, n) = (problem.grid.t0, problem.grid.dt(), problem.grid.n);
            Box::new(move |t, _eta, _q_inv| {
                let k = (((t - t0) / d).floor() as usize).min(n - 1);
                draws[k].clone()
            })
        }
        DisturbancePolicy::WorstCaseDirection => {
            let f_t = problem.model.f_o.transpose();
            Box::new(move |_t, eta, q_inv| {
                let pull = &f_t * (q_inv * eta);
                let n = pull.norm();
                if n > 1e-12 {
                    pull * (w_max / n)
                } else {
                    DVector::zeros(n_w)
                }
            })
        }
    }
}

/// Run `n_rollouts` boundary-sampled closed-loop simulations and count how
/// many leave the funnel. Exceedance means `max V / c_q` above `1 +`
/// [`LEVEL_TOLERANCE`]. Rollouts run in parallel over read-only schedule
/// data; records are reported in rollout order.
pub fn invariance_report(
    problem: &SynthesisProblem,
    solution: &FunnelSolution,
    n_rollouts: usize,
    policy: DisturbancePolicy,
    seed: u64,
    steps_per_interval: usize,
) -> Result<RolloutReport, SynthError> {
    let schedule = build_schedule(problem, solution, steps_per_interval)?;
    let etas = sample_boundary(&solution.q[0], solution.c_q, n_rollouts, seed)?;

    let run_one = |index: usize| -> RolloutRecord {
        let rollout_seed = rollout_seed(seed, index);
        let signal = policy_signal(problem, policy, rollout_seed);
        let rollout = simulate_on_schedule(problem, &schedule, &etas[index], signal.as_ref());
        RolloutRecord {
            index,
            seed: rollout_seed,
            max_level: rollout.max_level(),
            worst_input_margin: rollout.worst_input_margin,
            diverged: rollout.diverged,
        }
    };

    let threads = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
    let threads = threads.min(n_rollouts.max(1));
    let mut records: Vec<RolloutRecord> = Vec::with_capacity(n_rollouts);
    if threads <= 1 || n_rollouts <= 1 {
        records.extend((0..n_rollouts).map(run_one));
    } else {
        let chunk = n_rollouts.div_ceil(threads);
        let mut parts: Vec<Vec<RolloutRecord>> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(n_rollouts);
                    let run_one = &run_one;
                    scope.spawn(move || (lo..hi).map(run_one).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                parts.push(h.join().expect("rollout worker panicked"));
            }
        });
        records.extend(parts.into_iter().flatten());
    }

    let exceedances =
        records.iter().filter(|r| r.max_level > 1.0 + LEVEL_TOLERANCE || r.diverged).count();
    let worst_level = records.iter().map(|r| r.max_level).fold(0.0, f64::max);
    let worst_input_margin =
        records.iter().map(|r| r.worst_input_margin).fold(f64::INFINITY, f64::min);
    Ok(RolloutReport {
        policy,
        c_q: solution.c_q,
        records,
        exceedances,
        worst_level,
        worst_input_margin,
    })
}

/// Rescale the stored certificate by `factor` while keeping the realized
/// feedback gains: `Q`, `Y`, and the defects scale together, so `K = Y
/// Q^{-1}` is unchanged but the claimed tube shrinks. A factor below one
/// invalidates a tight certificate; the report should then show
/// exceedances.
pub fn shrink_certificate(solution: &FunnelSolution, factor: f64) -> FunnelSolution {
    let mut out = solution.clone();
    for q in &mut out.q {
        *q *= factor;
    }
    for y in &mut out.y {
        *y *= factor;
    }
    for (zm, zp) in &mut out.z {
        *zm *= factor;
        *zp *= factor;
    }
    out
}

/// Largest reconstruction jump across interior node boundaries: the
/// interval-end certificate against the next node's own value. Bounded by
/// the shooting tolerance of the solve.
pub fn reconstruction_gap(
    problem: &SynthesisProblem,
    solution: &FunnelSolution,
) -> Result<f64, SynthError> {
    let transform = problem.multipliers.transform(&problem.model);
    let d = problem.grid.dt();
    let mut gap: f64 = 0.0;
    for k in 0..problem.grid.n {
        let trans = discretize_interval(
            &problem.model,
            &problem.traj,
            &transform,
            solution.dynamics,
            solution.alpha,
            problem.grid.node(k),
            d,
            &[d],
            problem.substeps,
        )?;
        let q_end = trans[0].q_value(
            &solution.q[k],
            &solution.y[k],
            &solution.y[k + 1],
            &solution.z[k].0,
            &solution.z[k].1,
        );
        gap = gap.max((q_end - &solution.q[k + 1]).amax());
    }
    Ok(gap)
}

/// Largest eigenvalue of one inequality family along a dense grid.
#[derive(Clone, Debug)]
pub struct EigTrace {
    pub family: usize,
    pub label: String,
    pub times: Vec<f64>,
    pub lambda_max: Vec<f64>,
}

impl EigTrace {
    pub fn max_value(&self) -> f64 {
        self.lambda_max.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("t,lambda_max\n");
        for (t, l) in self.times.iter().zip(&self.lambda_max) {
            out.push_str(&format!("{t},{l}\n"));
        }
        out
    }
}

/// Evaluate every pointwise inequality family of the synthesis along a
/// dense grid at the solved point. Each interval contributes at least 100
/// sample times; shared node times appear once per adjacent interval since
/// the two one-sided expressions differ. Trace values at the node times
/// equal the assembled program's own residuals there.
pub fn eig_traces(
    problem: &SynthesisProblem,
    solution: &FunnelSolution,
    points_per_interval: usize,
) -> Result<Vec<EigTrace>, SynthError> {
    let assembled = assemble(problem)?;
    if solution.x.len() < assembled.prog.num_vars() {
        return Err(SynthError::dims(
            "solution vector",
            format!("at least {} entries", assembled.prog.num_vars()),
            solution.x.len().to_string(),
        ));
    }
    let panels = points_per_interval.max(100).div_ceil(2);
    let labels = family_labels(problem);
    let mut traces: Vec<EigTrace> = labels
        .iter()
        .enumerate()
        .map(|(family, label)| EigTrace {
            family,
            label: label.clone(),
            times: Vec::new(),
            lambda_max: Vec::new(),
        })
        .collect();
    for k in 0..problem.grid.n {
        let lmis = IntervalLmis::build(problem, &assembled, k, panels)?;
        for (family, trace) in traces.iter_mut().enumerate() {
            for sample in lmis.node_excursions(family, &solution.x) {
                trace.times.push(sample.t);
                trace.lambda_max.push(sample.lambda_max);
            }
        }
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{ClarabelBackend, SolveSettings, SolveStatus};
    use crate::discretization::TimeGrid;
    use crate::lmi::FunnelDynamics;
    use crate::model::{integrate_nominal, Channel, InputProfile, LinearFractionalModel};
    use crate::multipliers::{ChannelMultiplier, MultiplierSpec};
    use crate::synthesis::{solve, CostKind, InputBound};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    fn scalar_problem(w_max: f64, n_s: usize) -> SynthesisProblem {
        let model = LinearFractionalModel {
            a_o: dmatrix![-0.5],
            b_o: dmatrix![1.0],
            f_o: if w_max > 0.0 { dmatrix![0.1] } else { DMatrix::zeros(1, 0) },
            e: dmatrix![0.2],
            c_o: dmatrix![1.0],
            d_o: dmatrix![0.0],
            g_o: DMatrix::zeros(1, if w_max > 0.0 { 1 } else { 0 }),
            channels: vec![Channel::new(
                1,
                1,
                Arc::new(|_t, q: &DVector<f64>| dvector![q[0].sin()]),
            )],
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
        SynthesisProblem {
            model,
            traj,
            grid,
            multipliers: MultiplierSpec {
                channels: vec![ChannelMultiplier::Lipschitz { gamma: 1.0 }],
            },
            dynamics: FunnelDynamics::Free,
            alpha: 1.0,
            w_max,
            state_constraints: vec![],
            input_bounds: vec![InputBound { a: dvector![1.0], b: 1.5 }],
            terminal_set: Some(dmatrix![0.4]),
            cost: CostKind::TraceInverse,
            cost_weight: None,
            checking_points: n_s,
            slope_ordering: true,
            substeps: 50,
        }
    }

    fn backend() -> ClarabelBackend {
        ClarabelBackend
    }

    fn zero_signal(n_w: usize) -> Box<DisturbanceSignal<'static>> {
        Box::new(move |_t, _eta, _q| DVector::zeros(n_w))
    }

    #[test]
    fn boundary_samples_sit_on_the_level_set() {
        let q0 = dmatrix![2.0, 0.3, 0.0; 0.3, 1.0, -0.2; 0.0, -0.2, 0.5];
        let c_q = 0.25;
        let q_inv = spd_inverse(&q0).unwrap();
        let samples = sample_boundary(&q0, c_q, 200, 42).unwrap();
        assert_eq!(samples.len(), 200);
        for eta in &samples {
            let v = (eta.transpose() * &q_inv * eta)[(0, 0)];
            assert_abs_diff_eq!(v, c_q, epsilon = 1e-10);
        }
        // Identity certificate and unit level reduce to the unit sphere.
        let sphere = sample_boundary(&DMatrix::identity(3, 3), 1.0, 50, 7).unwrap();
        for eta in &sphere {
            assert_abs_diff_eq!(eta.norm(), 1.0, epsilon = 1e-12);
        }
        assert!(sample_boundary(&q0, 0.0, 1, 0).is_err());
        assert!(sample_boundary(&dmatrix![1.0, 0.0; 0.0, -1.0], 1.0, 1, 0).is_err());
    }

    #[test]
    fn boundary_directions_cover_all_octants_evenly() {
        let n = 10_000;
        let samples = sample_boundary(&DMatrix::identity(3, 3), 1.0, n, 1234).unwrap();
        let mut counts = [0usize; 8];
        for eta in &samples {
            let octant = (usize::from(eta[0] > 0.0) << 2)
                | (usize::from(eta[1] > 0.0) << 1)
                | usize::from(eta[2] > 0.0);
            counts[octant] += 1;
        }
        let expected = n / 8;
        for (octant, &count) in counts.iter().enumerate() {
            assert!(count <= 2 * expected, "octant {octant} holds {count} of {n}");
            assert!(count > 0, "octant {octant} is empty");
        }
    }

    #[test]
    fn determinism_per_seed() {
        let q0 = dmatrix![1.0, 0.2; 0.2, 2.0];
        let a = sample_boundary(&q0, 1.0, 20, 99).unwrap();
        let b = sample_boundary(&q0, 1.0, 20, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
        let c = sample_boundary(&q0, 1.0, 20, 100).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
    }

    #[test]
    fn nominal_start_reproduces_the_nominal_path() {
        let problem = scalar_problem(0.5, 1);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        let rollout = simulate_closed_loop(
            &problem,
            &sol,
            &dvector![0.0],
            zero_signal(1).as_ref(),
            200,
        )
        .unwrap();
        assert!(!rollout.diverged);
        assert_eq!(rollout.times.len(), 4 * 200 + 1);
        assert!(rollout.max_level() <= 1e-10, "level {:.3e}", rollout.max_level());
        for (t, x) in rollout.times.iter().zip(&rollout.states) {
            let x_bar = problem.traj.state_at(*t).unwrap();
            assert_abs_diff_eq!((x - x_bar).amax(), 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn boundary_rollouts_without_disturbance_stay_in_the_funnel() {
        let problem = scalar_problem(0.5, 2);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let etas = sample_boundary(&sol.q[0], sol.c_q, 10, 5).unwrap();
        for eta0 in &etas {
            let rollout =
                simulate_closed_loop(&problem, &sol, eta0, zero_signal(1).as_ref(), 200).unwrap();
            assert!(!rollout.diverged);
            assert_abs_diff_eq!(rollout.levels[0], 1.0, epsilon = 1e-9);
            assert!(
                rollout.max_level() <= 1.0 + LEVEL_TOLERANCE,
                "level {:.6}",
                rollout.max_level()
            );
            assert!(rollout.worst_input_margin >= INPUT_MARGIN_FLOOR);
        }
    }

    #[test]
    fn disturbed_report_holds_and_shrunk_certificate_fails() {
        let problem = scalar_problem(0.5, 2);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        for policy in [
            DisturbancePolicy::ConstantInTime,
            DisturbancePolicy::PiecewiseConstant,
            DisturbancePolicy::WorstCaseDirection,
        ] {
            let report = invariance_report(&problem, &sol, 25, policy, 11, 100).unwrap();
            assert_eq!(report.exceedances, 0, "{policy:?}: worst {:.6}", report.worst_level);
            assert!(report.worst_input_margin >= INPUT_MARGIN_FLOOR);
            assert_eq!(report.records.len(), 25);
        }
        // The trace cost leaves the tube orders of magnitude wider than
        // the realized disturbed excursions, so the invalidating shrink
        // must cross that whole margin before rollouts escape the claim.
        let shrunk = shrink_certificate(&sol, 1e-3);
        let report = invariance_report(
            &problem,
            &shrunk,
            25,
            DisturbancePolicy::ConstantInTime,
            11,
            100,
        )
        .unwrap();
        assert!(report.exceedances >= 1, "worst level {:.6}", report.worst_level);
        assert!(report.worst_level > 2.0);
    }

    #[test]
    fn reports_are_deterministic_and_parallel_order_free() {
        let problem = scalar_problem(0.5, 1);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        let a =
            invariance_report(&problem, &sol, 16, DisturbancePolicy::PiecewiseConstant, 3, 100)
                .unwrap();
        let b =
            invariance_report(&problem, &sol, 16, DisturbancePolicy::PiecewiseConstant, 3, 100)
                .unwrap();
        assert_eq!(a.csv(), b.csv());
        assert!(a.csv().lines().count() == 17);
    }

    #[test]
    fn refinement_gap_is_small_at_the_default_step() {
        let problem = scalar_problem(0.5, 1);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        let eta0 = &sample_boundary(&sol.q[0], sol.c_q, 1, 2).unwrap()[0];
        let gap = dt_refinement_gap(&problem, &sol, eta0, zero_signal(1).as_ref(), 200).unwrap();
        assert!(gap < 1e-6, "refinement gap {gap:.3e}");
    }

    #[test]
    fn simulation_rejects_coarse_grids_and_bad_shapes() {
        let problem = scalar_problem(0.5, 0);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        assert!(
            simulate_closed_loop(&problem, &sol, &dvector![0.0], zero_signal(1).as_ref(), 50)
                .is_err()
        );
        assert!(simulate_closed_loop(
            &problem,
            &sol,
            &dvector![0.0, 0.0],
            zero_signal(1).as_ref(),
            100
        )
        .is_err());
    }

    #[test]
    fn reconstruction_is_continuous_across_nodes() {
        let problem = scalar_problem(0.5, 1);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        let gap = reconstruction_gap(&problem, &sol).unwrap();
        assert!(gap <= 1e-8, "gap {gap:.3e}");
    }

    #[test]
    fn eig_traces_cover_the_grid_and_match_node_residuals() {
        let problem = scalar_problem(0.5, 2);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        let traces = eig_traces(&problem, &sol, 100).unwrap();
        assert_eq!(traces.len(), 3);
        assert_eq!(traces[0].label, "invariance");
        for trace in &traces {
            // 4 intervals, at least 101 samples each.
            assert!(trace.times.len() >= 4 * 101);
            assert!(trace.times.windows(2).all(|w| w[1] >= w[0] - 1e-12));
            // One-sided values at the nodes are solver-feasible rows.
            for (t, l) in trace.times.iter().zip(&trace.lambda_max) {
                let at_node = (0..=4).any(|k| (t - problem.grid.node(k)).abs() < 1e-12);
                if at_node {
                    assert!(*l <= 1e-6, "{} at node t={t}: {l:.3e}", trace.label);
                }
            }
            let csv = trace.csv();
            assert!(csv.starts_with("t,lambda_max\n"));
            assert_eq!(csv.lines().count(), trace.times.len() + 1);
        }
    }

    #[test]
    fn divergence_is_reported_not_thrown() {
        // Claim a microscopic tube with zero feedback, then start far
        // outside it; the three-orders-of-magnitude exit fires at once.
        let problem = scalar_problem(0.0, 0);
        let sol = solve(&problem, &backend(), &SolveSettings::default()).unwrap();
        let mut doctored = shrink_certificate(&sol, 1e-6);
        for y in &mut doctored.y {
            *y *= 0.0;
        }
        let rollout = simulate_closed_loop(
            &problem,
            &doctored,
            &dvector![5.0],
            zero_signal(0).as_ref(),
            100,
        )
        .unwrap();
        assert!(rollout.diverged);
        assert!(rollout.times.len() < 4 * 100 + 1);
    }
}
