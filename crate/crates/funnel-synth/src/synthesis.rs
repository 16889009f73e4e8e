//! Assembly and solution of the funnel synthesis program.
//!
//! A [`SynthesisProblem`] collects the plant, the nominal trajectory, the
//! grid, the multiplier choices, and the constraint set; [`assemble`] turns
//! it into one conic program over the node certificates `Q_k`, the gain
//! couplings `Y_k`, the derivative defects `Z`, and the multiplier scalars.
//! The invariance inequality is imposed at both one-sided limits of every
//! node and, optionally, at interior checking points that reuse the interval
//! unknowns through the transition operators, so refining the check adds
//! rows but never variables.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use crate::conic::{
    ConicBackend, ConicProgram, LinExpr, MatExpr, MatVar, SolveSettings, SolveStatus, SymMatVar,
    VarId,
};
use crate::discretization::{discretize_interval, foh_weights, TimeGrid};
use crate::error::SynthError;
use crate::linalg::svec_len;
use crate::lmi::{
    build_dlmi, h11_expr, h11_mats, input_halfspace_lmi, linearize_concave_constraint,
    radius_bound_lmi, state_halfspace_lmi, FunnelDynamics,
};
use crate::model::{LinearFractionalModel, NominalTrajectory};
use crate::multipliers::{allocate_side_vars, lambda_bound_rows, MultiplierSpec, SideVars, Transform};

/// Certificate floor at the nodes; keeps `Q` invertible and the gains
/// bounded.
pub const EPS_PD: f64 = 1e-7;

/// A state constraint kept over the whole tube.
#[derive(Clone)]
pub enum StateConstraint {
    /// `a^T x <= b` for all states in the tube.
    Halfspace { a: DVector<f64>, b: f64 },
    /// `f(x) <= 0` with concave `f`; linearized into a supporting halfspace
    /// at each evaluation time's nominal state.
    Concave(Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for StateConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateConstraint::Halfspace { a, b } => {
                f.debug_struct("Halfspace").field("a", a).field("b", b).finish()
            }
            StateConstraint::Concave(_) => f.write_str("Concave"),
        }
    }
}

/// An input constraint `a^T u <= b` kept over the whole feedback tube.
#[derive(Clone, Debug)]
pub struct InputBound {
    pub a: DVector<f64>,
    pub b: f64,
}

impl InputBound {
    /// Elementwise box `lb <= u <= ub` as halfspace rows.
    pub fn box_bounds(lb: &DVector<f64>, ub: &DVector<f64>) -> Vec<InputBound> {
        let n = lb.len();
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            out.push(InputBound { a: a.clone(), b: ub[i] });
            a[i] = -1.0;
            out.push(InputBound { a, b: -lb[i] });
        }
        out
    }
}

/// Objective over the entry certificate `Q(t0)`.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `trace(S)` with `S >= W0 Q(t0)^-1 W0`: small when the entry set is
    /// large in the directions weighted by `W0`.
    TraceInverse,
    /// `-trace(W0 Q(t0) W0)`: a linear volume proxy.
    NegTrace,
    /// `-logdet Q(t0)`; needs a backend with native support.
    NegLogDet,
}

/// Full problem statement for one synthesis solve.
#[derive(Clone, Debug)]
pub struct SynthesisProblem {
    pub model: LinearFractionalModel,
    pub traj: NominalTrajectory,
    pub grid: TimeGrid,
    pub multipliers: MultiplierSpec,
    pub dynamics: FunnelDynamics,
    /// Exponential decay rate of the tube value function.
    pub alpha: f64,
    /// Peak disturbance norm; zero means undisturbed.
    pub w_max: f64,
    pub state_constraints: Vec<StateConstraint>,
    pub input_bounds: Vec<InputBound>,
    /// Terminal cap `Q(tf) <= q_f`.
    pub terminal_set: Option<DMatrix<f64>>,
    pub cost: CostKind,
    /// Weight of the entry-set objective; identity if absent.
    pub cost_weight: Option<DMatrix<f64>>,
    /// Interior checking points per interval.
    pub checking_points: usize,
    /// Enforce the slope ordering that keeps free-kind certificates positive
    /// between nodes.
    pub slope_ordering: bool,
    /// RK4 substeps per interval for the transition operators.
    pub substeps: usize,
}

impl SynthesisProblem {
    /// Tube level: the squared peak disturbance, or one when undisturbed.
    pub fn c_q(&self) -> f64 {
        if self.w_max > 0.0 {
            self.w_max * self.w_max
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.model.validate()?;
        self.multipliers.validate(&self.model)?;
        if self.alpha < 0.0 {
            return Err(SynthError::NotPositive("alpha".into()));
        }
        if self.w_max < 0.0 {
            return Err(SynthError::NotPositive("w_max".into()));
        }
        if self.w_max > 0.0 && self.model.n_w() == 0 {
            return Err(SynthError::InvalidSetup(
                "w_max > 0 needs disturbance columns in the model".into(),
            ));
        }
        if self.substeps == 0 {
            return Err(SynthError::InvalidSetup("substeps must be positive".into()));
        }
        let span_ok = (self.traj.t0() - self.grid.t0).abs() <= 1e-9
            && (self.traj.tf() - self.grid.tf).abs() <= 1e-9;
        if !span_ok {
            return Err(SynthError::InvalidSetup(
                "nominal trajectory and grid horizons differ".into(),
            ));
        }
        if let Some(qf) = &self.terminal_set {
            let n_x = self.model.n_x();
            if qf.shape() != (n_x, n_x) {
                return Err(SynthError::dims("terminal set", format!("{n_x}x{n_x}"), format!("{:?}", qf.shape())));
            }
        }
        Ok(())
    }
}

/// Handles of every decision variable created by [`assemble`].
#[derive(Clone, Debug)]
pub struct VariableLayout {
    pub q: Vec<SymMatVar>,
    pub y: Vec<MatVar>,
    /// Per interval: derivative defect at the left and right ends.
    pub z: Vec<(SymMatVar, SymMatVar)>,
    /// Per interval: multiplier scalars at the left and right ends.
    pub mults: Vec<(SideVars, SideVars)>,
    /// Per interval: disturbance rate at the left and right ends; empty
    /// when the model is undisturbed.
    pub lambda_w: Vec<(VarId, VarId)>,
    pub cost_slack: Option<SymMatVar>,
}

impl VariableLayout {
    /// Scalar variables owned by interval `k`, in a fixed documented order:
    /// `Q_k`, then the left-side group `(Y_k, Z_k^-, scales, rate)`, then
    /// the right-side group `(Y_k+1, Z_k^+, scales, rate)`. Shared node
    /// quantities appear in the lists of both adjacent intervals.
    pub fn interval_scalars(&self, k: usize) -> Vec<VarId> {
        let mut out = Vec::new();
        out.extend(self.q[k].ids());
        let sides = [
            (&self.y[k], &self.z[k].0, &self.mults[k].0, self.lambda_w.get(k).map(|p| p.0)),
            (&self.y[k + 1], &self.z[k].1, &self.mults[k].1, self.lambda_w.get(k).map(|p| p.1)),
        ];
        for (y, z, m, lw) in sides {
            out.extend(y.ids());
            out.extend(z.ids());
            for v in m.lambdas.iter().flatten() {
                out.push(*v);
            }
            for v in m.slacks.iter().flatten() {
                out.push(*v);
            }
            if let Some(lw) = lw {
                out.push(lw);
            }
        }
        out
    }

    /// Scalar variables of the final node certificate.
    pub fn terminal_scalars(&self) -> Vec<VarId> {
        self.q.last().unwrap().ids()
    }
}

/// The assembled conic program together with its variable handles.
pub struct AssembledProgram {
    pub prog: ConicProgram,
    pub layout: VariableLayout,
    pub transform: Transform,
}

/// One evaluation point's expressions, fed to every pointwise constraint.
struct EvalPoint {
    t: f64,
    q: MatExpr,
    y: MatExpr,
    z: MatExpr,
    n1: MatExpr,
    n2: MatExpr,
    lambda_w: Option<LinExpr>,
    /// Per channel: radius slack at this point, for channels that have one.
    s_exprs: Vec<Option<LinExpr>>,
    /// Impose tube containment here (skipped where another point already
    /// covers the same time).
    containment: bool,
}

/// Build the full conic program for a synthesis problem.
pub fn assemble(problem: &SynthesisProblem) -> Result<AssembledProgram, SynthError> {
    problem.validate()?;
    if problem.cost == CostKind::NegLogDet {
        return Err(SynthError::InvalidSetup(
            "logdet objective cannot be assembled as a linear conic program".into(),
        ));
    }
    let model = &problem.model;
    let spec = &problem.multipliers;
    let transform = spec.transform(model);
    let grid = &problem.grid;
    let (n_x, n_u, n_w) = (model.n_x(), model.n_u(), model.n_w());
    let n = grid.n;
    let d = grid.dt();
    let c_q = problem.c_q();

    let mut prog = ConicProgram::new();
    let q: Vec<SymMatVar> = (0..=n).map(|_| prog.add_sym_matrix(n_x)).collect();
    let y: Vec<MatVar> = (0..=n).map(|_| prog.add_matrix(n_u, n_x)).collect();
    let z: Vec<(SymMatVar, SymMatVar)> =
        (0..n).map(|_| (prog.add_sym_matrix(n_x), prog.add_sym_matrix(n_x))).collect();
    let mults: Vec<(SideVars, SideVars)> = (0..n)
        .map(|_| (allocate_side_vars(&mut prog, spec), allocate_side_vars(&mut prog, spec)))
        .collect();
    let lambda_w: Vec<(VarId, VarId)> = if n_w > 0 {
        (0..n).map(|_| (prog.add_scalar(), prog.add_scalar())).collect()
    } else {
        Vec::new()
    };

    // Multiplier scale floors and disturbance-rate brackets.
    for (m_l, m_r) in &mults {
        for row in lambda_bound_rows(m_l).into_iter().chain(lambda_bound_rows(m_r)) {
            prog.add_nonneg(row);
        }
    }
    for &(lw_l, lw_r) in &lambda_w {
        for lw in [lw_l, lw_r] {
            prog.add_nonneg(LinExpr::variable(lw));
            prog.add_nonneg(LinExpr::constant(problem.alpha).minus(&LinExpr::variable(lw)));
        }
    }

    // Node certificate floor.
    let floor = DMatrix::identity(n_x, n_x) * EPS_PD;
    for qk in &q {
        prog.add_psd(&qk.expr().minus(&MatExpr::from_const(floor.clone())))?;
    }

    // Terminal cap.
    if let Some(qf) = &problem.terminal_set {
        prog.add_psd(&MatExpr::from_const(qf.clone()).minus(&q[n].expr()))?;
    }

    // Interior checking offsets.
    let n_s = problem.checking_points;
    let mut offsets = crate::ctcs::checking_point_offsets(d, n_s);
    offsets.push(d);

    let q_slices = model.q_slices();

    for k in 0..n {
        let t_k = grid.node(k);
        let trans = discretize_interval(
            model,
            &problem.traj,
            &transform,
            problem.dynamics,
            problem.alpha,
            t_k,
            d,
            &offsets,
            problem.substeps,
        )?;
        let full = trans.last().unwrap();

        // Shooting equality on the distinct entries.
        let q_end = full.q_expr(
            &q[k].vec_expr(),
            &y[k].vec_expr(),
            &y[k + 1].vec_expr(),
            &z[k].0.vec_expr(),
            &z[k].1.vec_expr(),
            n_x,
        );
        let defect = q[k + 1].expr().minus(&q_end);
        let mut rows = Vec::with_capacity(svec_len(n_x));
        for j in 0..n_x {
            for i in 0..=j {
                rows.push(defect.entry(i, j));
            }
        }
        prog.add_eq_rows(rows);

        // Slope ordering keeps the certificate positive between nodes.
        if problem.slope_ordering && problem.dynamics == FunnelDynamics::Free {
            prog.add_psd(&z[k].0.expr().minus(&z[k].1.expr()))?;
        }

        // Evaluation points of this interval: left node, interior checking
        // points, right node.
        let mut points: Vec<EvalPoint> = Vec::with_capacity(n_s + 2);
        let side_exprs = |side: &SideVars| -> (MatExpr, MatExpr, Vec<Option<LinExpr>>) {
            let n1 = spec.n1_expr(model, side);
            let n2 = spec.n2_expr(model, side);
            let s_exprs = side
                .slacks
                .iter()
                .map(|s| s.map(LinExpr::variable))
                .collect();
            (n1, n2, s_exprs)
        };

        let (n1_l, n2_l, s_l) = side_exprs(&mults[k].0);
        points.push(EvalPoint {
            t: t_k,
            q: q[k].expr(),
            y: y[k].expr(),
            z: z[k].0.expr(),
            n1: n1_l,
            n2: n2_l,
            lambda_w: lambda_w.get(k).map(|p| LinExpr::variable(p.0)),
            s_exprs: s_l,
            containment: true,
        });

        for tr in trans.iter().take(trans.len() - 1) {
            let (wm, wp) = foh_weights(tr.h, d);
            let q_h = tr.q_expr(
                &q[k].vec_expr(),
                &y[k].vec_expr(),
                &y[k + 1].vec_expr(),
                &z[k].0.vec_expr(),
                &z[k].1.vec_expr(),
                n_x,
            );
            let y_h = y[k].expr().scaled(wm).plus(&y[k + 1].expr().scaled(wp));
            let z_h = z[k].0.expr().scaled(wm).plus(&z[k].1.expr().scaled(wp));
            let (n1_l, n2_l, s_l) = side_exprs(&mults[k].0);
            let (n1_r, n2_r, s_r) = side_exprs(&mults[k].1);
            let s_exprs = s_l
                .iter()
                .zip(&s_r)
                .map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => Some(a.scaled(wm).plus(&b.scaled(wp))),
                    _ => None,
                })
                .collect();
            points.push(EvalPoint {
                t: t_k + tr.h,
                q: q_h,
                y: y_h,
                z: z_h,
                n1: n1_l.scaled(wm).plus(&n1_r.scaled(wp)),
                n2: n2_l.scaled(wm).plus(&n2_r.scaled(wp)),
                lambda_w: lambda_w.get(k).map(|p| {
                    LinExpr::variable(p.0).scaled(wm).plus(&LinExpr::variable(p.1).scaled(wp))
                }),
                s_exprs,
                containment: true,
            });
        }

        let (n1_r, n2_r, s_r) = side_exprs(&mults[k].1);
        points.push(EvalPoint {
            t: grid.node(k + 1),
            q: q[k + 1].expr(),
            y: y[k + 1].expr(),
            z: z[k].1.expr(),
            n1: n1_r,
            n2: n2_r,
            lambda_w: lambda_w.get(k).map(|p| LinExpr::variable(p.1)),
            s_exprs: s_r,
            // The next interval's left point covers the same time.
            containment: k == n - 1,
        });

        for pt in &points {
            add_point_constraints(&mut prog, problem, &transform, &q_slices, pt, c_q)?;
        }
    }

    // Objective over the entry certificate.
    let cost_weight = problem
        .cost_weight
        .clone()
        .unwrap_or_else(|| DMatrix::identity(n_x, n_x));
    let mut cost_slack = None;
    match problem.cost {
        CostKind::TraceInverse => {
            let s = prog.add_sym_matrix(n_x);
            let grid_blocks = vec![
                vec![s.expr(), MatExpr::from_const(cost_weight.clone())],
                vec![MatExpr::from_const(cost_weight.transpose()), q[0].expr()],
            ];
            prog.add_psd(&MatExpr::from_blocks(&grid_blocks))?;
            prog.add_objective_expr(&s.expr().trace());
            cost_slack = Some(s);
        }
        CostKind::NegTrace => {
            let weighted = q[0].expr().lmul(&cost_weight).rmul(&cost_weight.transpose());
            prog.add_objective_expr(&weighted.trace().scaled(-1.0));
        }
        CostKind::NegLogDet => unreachable!("rejected above"),
    }

    Ok(AssembledProgram {
        prog,
        layout: VariableLayout { q, y, z, mults, lambda_w, cost_slack },
        transform,
    })
}

/// Impose the invariance inequality, tube containment, and radius bounds at
/// one evaluation point.
fn add_point_constraints(
    prog: &mut ConicProgram,
    problem: &SynthesisProblem,
    transform: &Transform,
    q_slices: &[std::ops::Range<usize>],
    pt: &EvalPoint,
    c_q: f64,
) -> Result<(), SynthError> {
    let model = &problem.model;
    let lin = problem.traj.linearize_at(model, pt.t)?;

    let qdot = match problem.dynamics {
        FunnelDynamics::Free => pt.z.clone(),
        FunnelDynamics::Matched => {
            // Same shaped derivative the transition operators integrate;
            // the inequality's corner block then reduces to the defect.
            let mats = h11_mats(model, transform, &lin, problem.alpha);
            h11_expr(&mats, &pt.q, &pt.y).plus_transpose().plus(&pt.z)
        }
    };
    let dlmi = build_dlmi(
        model,
        transform,
        &lin,
        problem.alpha,
        &pt.q,
        &pt.y,
        &qdot,
        &pt.n1,
        &pt.n2,
        pt.lambda_w.as_ref(),
    )?;
    prog.add_psd(&dlmi.scaled(-1.0))?;

    // Radius bounds for channels with a slack.
    for (i, s) in pt.s_exprs.iter().enumerate() {
        if let Some(s) = s {
            let rows = q_slices[i].clone();
            let c_rows = model.c_o.rows(rows.start, rows.len()).into_owned();
            let d_rows = model.d_o.rows(rows.start, rows.len()).into_owned();
            let lmi = radius_bound_lmi(&c_rows, &d_rows, &pt.q, &pt.y, s, c_q);
            prog.add_psd(&lmi)?;
        }
    }

    if !pt.containment {
        return Ok(());
    }
    let x_bar = problem.traj.state_at(pt.t)?;
    let u_bar = problem.traj.input_at(pt.t)?;
    for sc in &problem.state_constraints {
        let (a, b) = match sc {
            StateConstraint::Halfspace { a, b } => (a.clone(), *b),
            StateConstraint::Concave(f) => {
                linearize_concave_constraint(&|x: &DVector<f64>| f(x), &x_bar)
            }
        };
        prog.add_psd(&state_halfspace_lmi(&a, b, &x_bar, &pt.q, c_q)?)?;
    }
    for ib in &problem.input_bounds {
        prog.add_psd(&input_halfspace_lmi(&ib.a, ib.b, &u_bar, &pt.q, &pt.y, c_q)?)?;
    }
    Ok(())
}

/// Multiplier values of one interval side.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SideValues {
    pub lambdas: Vec<f64>,
    pub slacks: Vec<f64>,
    pub lambda_w: f64,
}

/// A solved funnel: node certificates, gain couplings, derivative defects,
/// and multiplier values, plus everything needed to reconstruct the
/// continuous-time certificate and gains.
#[derive(Clone, Debug)]
pub struct FunnelSolution {
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub alpha: f64,
    pub c_q: f64,
    pub dynamics: FunnelDynamics,
    pub times: Vec<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    pub z: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    pub sides: Vec<(SideValues, SideValues)>,
    /// Raw solver vector, kept for warm starts and introspection.
    pub x: Vec<f64>,
}

impl FunnelSolution {
    /// Feedback gains at the nodes, `K_k = Y_k Q_k^-1`.
    pub fn node_gains(&self) -> Result<Vec<DMatrix<f64>>, SynthError> {
        self.q
            .iter()
            .zip(&self.y)
            .map(|(q, y)| Ok(y * crate::linalg::spd_inverse(q)?))
            .collect()
    }

    /// Certificate and gain on a dense grid: `samples` equispaced offsets
    /// per interval (endpoints included once). Returns `(t, Q(t), K(t))`
    /// triples in time order.
    pub fn dense_certificate(
        &self,
        problem: &SynthesisProblem,
        samples: usize,
    ) -> Result<Vec<(f64, DMatrix<f64>, DMatrix<f64>)>, SynthError> {
        let model = &problem.model;
        let transform = problem.multipliers.transform(model);
        let d = problem.grid.dt();
        let mut out = Vec::new();
        let k_of = |q: &DMatrix<f64>, y: &DMatrix<f64>| -> Result<DMatrix<f64>, SynthError> {
            Ok(y * crate::linalg::spd_inverse(q)?)
        };
        out.push((self.times[0], self.q[0].clone(), k_of(&self.q[0], &self.y[0])?));
        for k in 0..problem.grid.n {
            let t_k = problem.grid.node(k);
            let offsets: Vec<f64> = (1..=samples).map(|s| d * s as f64 / samples as f64).collect();
            let trans = discretize_interval(
                model,
                &problem.traj,
                &transform,
                self.dynamics,
                self.alpha,
                t_k,
                d,
                &offsets,
                problem.substeps,
            )?;
            for tr in &trans {
                let q_h = tr.q_value(&self.q[k], &self.y[k], &self.y[k + 1], &self.z[k].0, &self.z[k].1);
                let q_h = crate::linalg::sym_part(&q_h);
                let (wm, wp) = foh_weights(tr.h, d);
                let y_h = &self.y[k] * wm + &self.y[k + 1] * wp;
                let k_h = k_of(&q_h, &y_h)?;
                out.push((t_k + tr.h, q_h, k_h));
            }
        }
        Ok(out)
    }

    /// Certificate value at one time (dense reconstruction of the interval
    /// holding `t`).
    pub fn q_at(&self, problem: &SynthesisProblem, t: f64) -> Result<DMatrix<f64>, SynthError> {
        let grid = &problem.grid;
        if t < grid.t0 - 1e-9 || t > grid.tf + 1e-9 {
            return Err(SynthError::OutOfHorizon { t, t0: grid.t0, tf: grid.tf });
        }
        let t = t.clamp(grid.t0, grid.tf);
        let d = grid.dt();
        let k = (((t - grid.t0) / d).floor() as usize).min(grid.n - 1);
        let h = t - grid.node(k);
        if h <= 1e-12 {
            return Ok(self.q[k].clone());
        }
        let transform = problem.multipliers.transform(&problem.model);
        let trans = discretize_interval(
            &problem.model,
            &problem.traj,
            &transform,
            self.dynamics,
            self.alpha,
            grid.node(k),
            d,
            &[h],
            problem.substeps,
        )?;
        let q_h = trans[0].q_value(&self.q[k], &self.y[k], &self.y[k + 1], &self.z[k].0, &self.z[k].1);
        Ok(crate::linalg::sym_part(&q_h))
    }

    /// Feedback gain at one time, `K(t) = Y(t) Q(t)^-1` with `Y` linear
    /// between nodes.
    pub fn gain_at(&self, problem: &SynthesisProblem, t: f64) -> Result<DMatrix<f64>, SynthError> {
        let grid = &problem.grid;
        let q_t = self.q_at(problem, t)?;
        let t = t.clamp(grid.t0, grid.tf);
        let d = grid.dt();
        let k = (((t - grid.t0) / d).floor() as usize).min(grid.n - 1);
        let (wm, wp) = foh_weights(t - grid.node(k), d);
        let y_t = &self.y[k] * wm + &self.y[k + 1] * wp;
        Ok(y_t * crate::linalg::spd_inverse(&q_t)?)
    }
}

/// Extract a [`FunnelSolution`] from a solved program.
pub fn extract_solution(
    problem: &SynthesisProblem,
    assembled: &AssembledProgram,
    sol: &crate::conic::ConicSolution,
) -> FunnelSolution {
    let l = &assembled.layout;
    let to_sides = |side: &SideVars, lw: Option<VarId>| SideValues {
        lambdas: side
            .lambdas
            .iter()
            .map(|v| v.map(|v| sol.value_of(v)).unwrap_or(0.0))
            .collect(),
        slacks: side
            .slacks
            .iter()
            .map(|v| v.map(|v| sol.value_of(v)).unwrap_or(0.0))
            .collect(),
        lambda_w: lw.map(|v| sol.value_of(v)).unwrap_or(0.0),
    };
    FunnelSolution {
        status: sol.status,
        objective: sol.objective,
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        alpha: problem.alpha,
        c_q: problem.c_q(),
        dynamics: problem.dynamics,
        times: problem.grid.times(),
        q: l.q.iter().map(|v| v.value(&sol.x)).collect(),
        y: l.y.iter().map(|v| v.value(&sol.x)).collect(),
        z: l.z.iter().map(|(a, b)| (a.value(&sol.x), b.value(&sol.x))).collect(),
        sides: l
            .mults
            .iter()
            .enumerate()
            .map(|(k, (m_l, m_r))| {
                let lw = l.lambda_w.get(k);
                (to_sides(m_l, lw.map(|p| p.0)), to_sides(m_r, lw.map(|p| p.1)))
            })
            .collect(),
        x: sol.x.clone(),
    }
}

/// Assemble, solve, and extract in one call.
pub fn solve(
    problem: &SynthesisProblem,
    backend: &dyn ConicBackend,
    settings: &SolveSettings,
) -> Result<FunnelSolution, SynthError> {
    if problem.cost == CostKind::NegLogDet && !backend.capabilities().logdet {
        return Err(SynthError::UnsupportedCapability {
            backend: backend.name().to_string(),
            feature: "logdet objective".to_string(),
        });
    }
    let assembled = assemble(problem)?;
    let sol = backend.solve(&assembled.prog, settings)?;
    Ok(extract_solution(problem, &assembled, &sol))
}

/// Golden-section search over the decay rate, minimizing the objective over
/// feasible solves. Returns the best rate and its solution. Infeasible or
/// failed solves count as infinitely bad.
pub fn line_search_alpha(
    base: &SynthesisProblem,
    backend: &dyn ConicBackend,
    settings: &SolveSettings,
    alpha_lo: f64,
    alpha_hi: f64,
    iterations: usize,
) -> Result<(f64, FunnelSolution), SynthError> {
    if !(alpha_hi > alpha_lo) || alpha_lo < 0.0 {
        return Err(SynthError::InvalidSetup("bad alpha bracket".into()));
    }
    let eval = |alpha: f64| -> Option<(f64, FunnelSolution)> {
        let mut p = base.clone();
        p.alpha = alpha;
        match solve(&p, backend, settings) {
            Ok(sol) if sol.status.is_optimal() => Some((sol.objective, sol)),
            _ => None,
        }
    };
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (alpha_lo, alpha_hi);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = eval(x1);
    let mut f2 = eval(x2);
    let mut best: Option<(f64, f64, FunnelSolution)> = None;
    let consider = |x: f64, fx: &Option<(f64, FunnelSolution)>, best: &mut Option<(f64, f64, FunnelSolution)>| {
        if let Some((obj, sol)) = fx {
            if best.as_ref().map(|(_, b, _)| obj < b).unwrap_or(true) {
                *best = Some((x, *obj, sol.clone()));
            }
        }
    };
    consider(x1, &f1, &mut best);
    consider(x2, &f2, &mut best);
    for _ in 0..iterations {
        let worse1 = f1.as_ref().map(|(o, _)| *o).unwrap_or(f64::INFINITY);
        let worse2 = f2.as_ref().map(|(o, _)| *o).unwrap_or(f64::INFINITY);
        if worse1 <= worse2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = eval(x1);
            consider(x1, &f1, &mut best);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = eval(x2);
            consider(x2, &f2, &mut best);
        }
    }
    match best {
        Some((alpha, _, sol)) => Ok((alpha, sol)),
        None => Err(SynthError::SolverFailure(
            "no feasible decay rate in the bracket".into(),
        )),
    }
}
