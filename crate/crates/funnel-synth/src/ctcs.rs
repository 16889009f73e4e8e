//! Continuous-time tightening of the pointwise matrix inequalities.
//!
//! Node and checking-point rows leave the inequalities unchecked between
//! evaluation times. This module measures what remains: for every inequality
//! family `L_l(t, chi) <= 0` of one interval, the excursion integral
//! `h_l = int max(0, lambda_max L_l(t, chi))^p dt` by composite Simpson
//! quadrature. The integral is convex in the interval unknowns `chi`, it is
//! zero exactly when the family holds at every quadrature node, and its
//! subgradient is available in closed form from the top eigenspace at each
//! node.
//!
//! [`scvx_iterate`] drives the excursions below a tightening offset by
//! successive convexification: each round augments the assembled synthesis
//! program with the linearized excursions tied to penalty slacks and a
//! proximal trust term on the interval unknowns, so every subproblem stays a
//! feasible conic program regardless of the current iterate.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::conic::{
    ConicBackend, ConicSolution, LinExpr, MatExpr, SolveSettings, SolveStatus, VarId,
};
use crate::discretization::{discretize_interval, foh_weights};
use crate::error::SynthError;
use crate::linalg::{lambda_max, sym_eigenvalues, sym_part, top_eig_cluster};
use crate::lmi::{
    build_dlmi, h11_expr, h11_mats, input_halfspace_lmi, linearize_concave_constraint,
    radius_bound_lmi, state_halfspace_lmi, FunnelDynamics,
};
use crate::multipliers::{SideVars, Transform};
use crate::synthesis::{
    assemble, extract_solution, AssembledProgram, FunnelSolution, StateConstraint,
    SynthesisProblem, EPS_PD,
};

/// Slack added to the subgradient inequality in diagnostics; absorbs the
/// eigensolver noise of nearly clustered top eigenvalues.
pub const CONVEXITY_SLACK: f64 = 1e-7;

/// Interior checking offsets of an interval of length `d`: `n_s` equispaced
/// times strictly between the endpoints.
pub fn checking_point_offsets(d: f64, n_s: usize) -> Vec<f64> {
    (1..=n_s).map(|s| d * s as f64 / (n_s + 1) as f64).collect()
}

/// One quadrature-tightened inequality family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtcsConstraint {
    /// Index into the family catalog of the problem; see [`family_labels`].
    pub family: usize,
    /// Exponent `p >= 1` of the penalized excursion.
    pub exponent: f64,
    /// Tightening offset: the linearized excursion is driven to `-epsilon`
    /// rather than zero, so quadrature slack cannot hide a true crossing.
    pub epsilon: f64,
    /// Simpson panels per interval; the quadrature grid has `2 * panels + 1`
    /// nodes.
    pub panels: usize,
}

impl CtcsConstraint {
    pub fn new(family: usize) -> Self {
        CtcsConstraint { family, exponent: 2.0, epsilon: 1e-6, panels: 32 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.exponent >= 1.0) {
            return Err(SynthError::InvalidSetup(format!(
                "excursion exponent {} must be at least one for convexity",
                self.exponent
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(SynthError::NotPositive("tightening offset".into()));
        }
        if self.panels == 0 {
            return Err(SynthError::InvalidSetup("need at least one quadrature panel".into()));
        }
        Ok(())
    }
}

/// Names of the inequality families of one interval, in catalog order: the
/// invariance inequality, one radius-validity family per scaled channel, the
/// state containments, the input containments, and the certificate floor.
/// Every family is the matrix `L_l` with admissible set `L_l <= 0`.
pub fn family_labels(problem: &SynthesisProblem) -> Vec<String> {
    let mut labels = vec!["invariance".to_string()];
    for i in 0..problem.multipliers.channels.len() {
        if problem.multipliers.channel_needs_slack(i) {
            labels.push(format!("validity_{i}"));
        }
    }
    for j in 0..problem.state_constraints.len() {
        labels.push(format!("state_{j}"));
    }
    for j in 0..problem.input_bounds.len() {
        labels.push(format!("input_{j}"));
    }
    labels.push("floor".to_string());
    labels
}

/// One tightened constraint per catalog family, with default quadrature.
pub fn all_family_constraints(problem: &SynthesisProblem) -> Vec<CtcsConstraint> {
    (0..family_labels(problem).len()).map(CtcsConstraint::new).collect()
}

/// Every family's matrix expression at one evaluation time, in catalog
/// order. The expressions are affine in the interval unknowns.
fn family_exprs(
    problem: &SynthesisProblem,
    transform: &Transform,
    q_slices: &[std::ops::Range<usize>],
    t: f64,
    q: &MatExpr,
    y: &MatExpr,
    z: &MatExpr,
    n1: &MatExpr,
    n2: &MatExpr,
    lambda_w: Option<&LinExpr>,
    s_exprs: &[Option<LinExpr>],
    c_q: f64,
) -> Result<Vec<MatExpr>, SynthError> {
    let model = &problem.model;
    let lin = problem.traj.linearize_at(model, t)?;
    let qdot = match problem.dynamics {
        FunnelDynamics::Free => z.clone(),
        FunnelDynamics::Matched => {
            let mats = h11_mats(model, transform, &lin, problem.alpha);
            h11_expr(&mats, q, y).plus_transpose().plus(z)
        }
    };
    let mut fams =
        vec![build_dlmi(model, transform, &lin, problem.alpha, q, y, &qdot, n1, n2, lambda_w)?];
    for (i, s) in s_exprs.iter().enumerate() {
        if let Some(s) = s {
            let rows = q_slices[i].clone();
            let c_rows = model.c_o.rows(rows.start, rows.len()).into_owned();
            let d_rows = model.d_o.rows(rows.start, rows.len()).into_owned();
            fams.push(radius_bound_lmi(&c_rows, &d_rows, q, y, s, c_q).scaled(-1.0));
        }
    }
    let x_bar = problem.traj.state_at(t)?;
    let u_bar = problem.traj.input_at(t)?;
    for sc in &problem.state_constraints {
        let (a, b) = match sc {
            StateConstraint::Halfspace { a, b } => (a.clone(), *b),
            StateConstraint::Concave(f) => {
                linearize_concave_constraint(&|x: &DVector<f64>| f(x), &x_bar)
            }
        };
        fams.push(state_halfspace_lmi(&a, b, &x_bar, q, c_q)?.scaled(-1.0));
    }
    for ib in &problem.input_bounds {
        fams.push(input_halfspace_lmi(&ib.a, ib.b, &u_bar, q, y, c_q)?.scaled(-1.0));
    }
    let n_x = model.n_x();
    fams.push(MatExpr::from_const(DMatrix::identity(n_x, n_x) * EPS_PD).minus(q));
    Ok(fams)
}

/// Expressions of every family at one quadrature node.
pub struct QuadNode {
    pub t: f64,
    /// Simpson weight of this node within the interval.
    pub weight: f64,
    /// Family matrices `L_l(t, chi)` in catalog order.
    pub families: Vec<MatExpr>,
}

/// Quadrature catalog of one interval: every family's matrix expression at
/// the Simpson nodes, affine in the interval's scalar unknowns. Node times
/// include both interval endpoints, so the catalog's pointwise values at the
/// nodes agree with the assembled program's own rows there.
pub struct IntervalLmis {
    pub k: usize,
    pub t_start: f64,
    pub span: f64,
    /// Interval unknowns in layout order; every term of every family
    /// expression indexes into this list.
    pub chi: Vec<VarId>,
    pub labels: Vec<String>,
    pub nodes: Vec<QuadNode>,
}

/// Worst pointwise excursion of one family at the quadrature nodes.
#[derive(Clone, Copy, Debug)]
pub struct NodeExcursion {
    pub t: f64,
    pub weight: f64,
    pub lambda_max: f64,
    /// Size of the top eigenvalue cluster; larger than one when the maximum
    /// is attained by several eigenvalues at once.
    pub multiplicity: usize,
}

fn simpson_weight(j: usize, segments: usize, span: f64) -> f64 {
    let scale = if j == 0 || j == segments {
        1.0
    } else if j % 2 == 1 {
        4.0
    } else {
        2.0
    };
    scale * span / (3.0 * segments as f64)
}

fn positive_part_pow(l: f64, p: f64) -> f64 {
    if l > 0.0 {
        l.powf(p)
    } else {
        0.0
    }
}

/// Derivative of `max(0, l)^p` where it exists; the zero subgradient at the
/// hinge point itself.
fn excursion_slope(l: f64, p: f64) -> f64 {
    if l <= 0.0 {
        0.0
    } else if p == 1.0 {
        1.0
    } else {
        p * l.powf(p - 1.0)
    }
}

fn cluster_tol(lmax: f64) -> f64 {
    1e-8 * (1.0 + lmax.abs())
}

impl IntervalLmis {
    /// Build the catalog of interval `k` with `panels` Simpson panels.
    pub fn build(
        problem: &SynthesisProblem,
        assembled: &AssembledProgram,
        k: usize,
        panels: usize,
    ) -> Result<IntervalLmis, SynthError> {
        if panels == 0 {
            return Err(SynthError::InvalidSetup("need at least one quadrature panel".into()));
        }
        if k >= problem.grid.n {
            return Err(SynthError::InvalidSetup(format!(
                "interval {k} outside a grid of {} intervals",
                problem.grid.n
            )));
        }
        let model = &problem.model;
        let spec = &problem.multipliers;
        let l = &assembled.layout;
        let d = problem.grid.dt();
        let t_k = problem.grid.node(k);
        let n_x = model.n_x();
        let q_slices = model.q_slices();
        let c_q = problem.c_q();
        let chi = l.interval_scalars(k);

        let segments = 2 * panels;
        let offsets: Vec<f64> =
            (1..=segments).map(|j| d * j as f64 / segments as f64).collect();
        let trans = discretize_interval(
            model,
            &problem.traj,
            &assembled.transform,
            problem.dynamics,
            problem.alpha,
            t_k,
            d,
            &offsets,
            problem.substeps,
        )?;

        let side_exprs = |side: &SideVars| -> (MatExpr, MatExpr, Vec<Option<LinExpr>>) {
            let n1 = spec.n1_expr(model, side);
            let n2 = spec.n2_expr(model, side);
            let s = side.slacks.iter().map(|s| s.map(LinExpr::variable)).collect();
            (n1, n2, s)
        };
        let (n1_l, n2_l, s_l) = side_exprs(&l.mults[k].0);
        let (n1_r, n2_r, s_r) = side_exprs(&l.mults[k].1);
        let lw = l.lambda_w.get(k).map(|p| (LinExpr::variable(p.0), LinExpr::variable(p.1)));

        let chi_set: BTreeSet<usize> = chi.iter().map(|v| v.0).collect();
        let mut nodes = Vec::with_capacity(segments + 1);
        for j in 0..=segments {
            let (t, q_h, y_h, z_h, n1_h, n2_h, lw_h, s_h) = if j == 0 {
                (
                    t_k,
                    l.q[k].expr(),
                    l.y[k].expr(),
                    l.z[k].0.expr(),
                    n1_l.clone(),
                    n2_l.clone(),
                    lw.as_ref().map(|p| p.0.clone()),
                    s_l.clone(),
                )
            } else {
                // The right endpoint also goes through the transition; the
                // shooting equality makes it agree with `Q_{k+1}` at any
                // feasible point while keeping the expression a function of
                // this interval's unknowns alone.
                let tr = &trans[j - 1];
                let (wm, wp) = foh_weights(tr.h, d);
                let q_h = tr.q_expr(
                    &l.q[k].vec_expr(),
                    &l.y[k].vec_expr(),
                    &l.y[k + 1].vec_expr(),
                    &l.z[k].0.vec_expr(),
                    &l.z[k].1.vec_expr(),
                    n_x,
                );
                let s_h = s_l
                    .iter()
                    .zip(&s_r)
                    .map(|(a, b)| match (a, b) {
                        (Some(a), Some(b)) => Some(a.scaled(wm).plus(&b.scaled(wp))),
                        _ => None,
                    })
                    .collect();
                (
                    t_k + tr.h,
                    q_h,
                    l.y[k].expr().scaled(wm).plus(&l.y[k + 1].expr().scaled(wp)),
                    l.z[k].0.expr().scaled(wm).plus(&l.z[k].1.expr().scaled(wp)),
                    n1_l.scaled(wm).plus(&n1_r.scaled(wp)),
                    n2_l.scaled(wm).plus(&n2_r.scaled(wp)),
                    lw.as_ref().map(|(a, b)| a.scaled(wm).plus(&b.scaled(wp))),
                    s_h,
                )
            };
            let families = family_exprs(
                problem,
                &assembled.transform,
                &q_slices,
                t,
                &q_h,
                &y_h,
                &z_h,
                &n1_h,
                &n2_h,
                lw_h.as_ref(),
                &s_h,
                c_q,
            )?;
            debug_assert!(
                families
                    .iter()
                    .flat_map(|f| f.terms.keys())
                    .all(|v| chi_set.contains(v)),
                "family expression reaches outside the interval unknowns"
            );
            nodes.push(QuadNode { t, weight: simpson_weight(j, segments, d), families });
        }
        Ok(IntervalLmis {
            k,
            t_start: t_k,
            span: d,
            chi,
            labels: family_labels(problem),
            nodes,
        })
    }

    /// Catalog over explicitly supplied node expressions on a uniform
    /// Simpson grid; entry point for synthetic instances and diagnostics.
    pub fn from_node_families(
        t_start: f64,
        span: f64,
        chi: Vec<VarId>,
        labels: Vec<String>,
        panels: usize,
        families_at: impl Fn(f64) -> Vec<MatExpr>,
    ) -> IntervalLmis {
        let segments = 2 * panels;
        let nodes = (0..=segments)
            .map(|j| {
                let t = t_start + span * j as f64 / segments as f64;
                QuadNode { t, weight: simpson_weight(j, segments, span), families: families_at(t) }
            })
            .collect();
        IntervalLmis { k: 0, t_start, span, chi, labels, nodes }
    }

    fn chi_positions(&self) -> BTreeMap<usize, usize> {
        self.chi.iter().enumerate().map(|(i, v)| (v.0, i)).collect()
    }

    /// Excursion integral of one family at the point `x`.
    pub fn violation(&self, c: &CtcsConstraint, x: &[f64]) -> f64 {
        self.nodes
            .iter()
            .map(|node| {
                let m = sym_part(&node.families[c.family].eval(x));
                node.weight * positive_part_pow(lambda_max(&m), c.exponent)
            })
            .sum()
    }

    /// Largest pointwise top eigenvalue of one family across the quadrature
    /// nodes; negative when the family holds with margin on the whole grid.
    pub fn max_eig(&self, family: usize, x: &[f64]) -> f64 {
        self.nodes
            .iter()
            .map(|node| lambda_max(&sym_part(&node.families[family].eval(x))))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Top eigenvalue and its cluster size at every quadrature node.
    pub fn node_excursions(&self, family: usize, x: &[f64]) -> Vec<NodeExcursion> {
        self.nodes
            .iter()
            .map(|node| {
                let m = sym_part(&node.families[family].eval(x));
                let eigs = sym_eigenvalues(&m);
                let lmax = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let tol = cluster_tol(lmax);
                let multiplicity = eigs.iter().filter(|e| lmax - **e <= tol).count();
                NodeExcursion { t: node.t, weight: node.weight, lambda_max: lmax, multiplicity }
            })
            .collect()
    }

    /// Subgradient of the excursion integral with respect to the interval
    /// unknowns, in `chi` order. Exact where the top eigenvalue is simple;
    /// the averaged top-cluster projector otherwise, which still supports
    /// the convex integral from below.
    pub fn subgradient(&self, c: &CtcsConstraint, x: &[f64]) -> DVector<f64> {
        let pos = self.chi_positions();
        let mut g = DVector::zeros(self.chi.len());
        for node in &self.nodes {
            let expr = &node.families[c.family];
            let m = sym_part(&expr.eval(x));
            let guess = lambda_max(&m);
            if excursion_slope(guess, c.exponent) == 0.0 {
                continue;
            }
            let (lmax, w) = top_eig_cluster(&m, cluster_tol(guess));
            let factor = node.weight * excursion_slope(lmax, c.exponent);
            for (v, coef) in &expr.terms {
                if let Some(&i) = pos.get(v) {
                    g[i] += factor * w.dot(coef);
                }
            }
        }
        g
    }
}

/// Quadrature of `max(0, lambda_max L(t))^p` for a numeric matrix path;
/// the same rule [`IntervalLmis`] applies to the affine catalogs.
pub fn excursion_integral<F: Fn(f64) -> DMatrix<f64>>(
    l: F,
    t_start: f64,
    span: f64,
    exponent: f64,
    panels: usize,
) -> f64 {
    let segments = 2 * panels;
    (0..=segments)
        .map(|j| {
            let t = t_start + span * j as f64 / segments as f64;
            let m = sym_part(&l(t));
            simpson_weight(j, segments, span) * positive_part_pow(lambda_max(&m), exponent)
        })
        .sum()
}

/// Penalty weights and stopping rules of the successive convexification
/// loop.
#[derive(Clone, Copy, Debug)]
pub struct ScvxConfig {
    /// Weight of the positive parts of the linearized excursions.
    pub w_h: f64,
    /// Weight of the proximal trust term on the interval unknowns.
    pub w_tr: f64,
    pub max_iterations: usize,
    /// Converged when the trust measure falls below this fraction of its
    /// first value.
    pub trust_decay: f64,
}

impl Default for ScvxConfig {
    fn default() -> Self {
        ScvxConfig { w_h: 20.0, w_tr: 1e5, max_iterations: 30, trust_decay: 1e-8 }
    }
}

/// One accepted round of the convexification loop.
#[derive(Clone, Copy, Debug)]
pub struct ScvxIteration {
    pub iteration: usize,
    /// Synthesis objective at the new iterate, without penalties.
    pub cost: f64,
    /// Weighted positive parts of the linearized excursions.
    pub penalty: f64,
    /// Squared movement of the interval unknowns in this round.
    pub trust: f64,
    /// Largest pointwise excursion of any tightened family at the new
    /// iterate, clamped at zero.
    pub max_violation: f64,
}

/// Why the loop stopped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScvxStop {
    /// Trust measure collapsed; the iterate is a fixed point of the
    /// subproblem.
    Converged,
    IterationCap,
    /// A subproblem failed to solve; the run keeps the last accepted
    /// iterate.
    SubproblemFailed(SolveStatus),
}

/// Outcome of the convexification loop.
pub struct ScvxRun {
    pub trace: Vec<ScvxIteration>,
    pub stop: ScvxStop,
    /// Last accepted iterate, reconstructed as a full solution.
    pub solution: FunnelSolution,
}

/// Violations, subgradients, and the worst pointwise excursion at one
/// iterate. Catalogs are rebuilt per interval and dropped, which caps the
/// working set at a single interval regardless of the grid length.
struct PassData {
    /// `per_interval[k][ci]` is the excursion integral and its subgradient
    /// of constraint `ci` over interval `k`.
    per_interval: Vec<Vec<(f64, DVector<f64>)>>,
    max_violation: f64,
}

fn run_pass(
    problem: &SynthesisProblem,
    assembled: &AssembledProgram,
    constraints: &[CtcsConstraint],
    x: &[f64],
) -> Result<PassData, SynthError> {
    let panel_choices: BTreeSet<usize> = constraints.iter().map(|c| c.panels).collect();
    let mut per_interval = Vec::with_capacity(problem.grid.n);
    let mut max_violation: f64 = 0.0;
    for k in 0..problem.grid.n {
        let mut rows: Vec<Option<(f64, DVector<f64>)>> = vec![None; constraints.len()];
        for &panels in &panel_choices {
            let lmis = IntervalLmis::build(problem, assembled, k, panels)?;
            for (ci, c) in constraints.iter().enumerate() {
                if c.panels != panels {
                    continue;
                }
                let h = lmis.violation(c, x);
                let g = lmis.subgradient(c, x);
                max_violation = max_violation.max(lmis.max_eig(c.family, x));
                rows[ci] = Some((h, g));
            }
        }
        per_interval.push(rows.into_iter().map(|r| r.expect("every constraint visited")).collect());
    }
    Ok(PassData { per_interval, max_violation: max_violation.max(0.0) })
}

/// Drive the tightened excursions of `constraints` to zero starting from a
/// solved iterate, keeping every subproblem convex. Each round solves the
/// assembled program with three additions per interval and constraint: an
/// equality pinning a fresh scalar to the linearized excursion shifted by
/// the tightening offset, a penalty on its positive part weighted by `w_h`,
/// and a proximal trust term on the interval unknowns weighted by `w_tr`.
/// The terminal certificate gets its own trust term. The loop stops when
/// the trust measure decays by [`ScvxConfig::trust_decay`], at the
/// iteration cap, or at the first failed subproblem.
pub fn scvx_iterate(
    problem: &SynthesisProblem,
    constraints: &[CtcsConstraint],
    initial: &FunnelSolution,
    backend: &dyn ConicBackend,
    settings: &SolveSettings,
    config: &ScvxConfig,
) -> Result<ScvxRun, SynthError> {
    if constraints.is_empty() {
        return Err(SynthError::InvalidSetup("no tightened constraint families".into()));
    }
    let n_families = family_labels(problem).len();
    for c in constraints {
        c.validate()?;
        if c.family >= n_families {
            return Err(SynthError::InvalidSetup(format!(
                "family {} outside a catalog of {n_families}",
                c.family
            )));
        }
    }
    if !(config.w_h > 0.0 && config.w_tr > 0.0) {
        return Err(SynthError::NotPositive("penalty weights".into()));
    }
    let assembled = assemble(problem)?;
    let base_vars = assembled.prog.num_vars();
    if initial.x.len() < base_vars {
        return Err(SynthError::dims(
            "initial iterate",
            format!("at least {base_vars} entries"),
            initial.x.len().to_string(),
        ));
    }
    let base_obj = assembled.prog.objective_expr();
    let n = problem.grid.n;
    let chi_lists: Vec<Vec<VarId>> =
        (0..n).map(|k| assembled.layout.interval_scalars(k)).collect();
    let terminal = assembled.layout.terminal_scalars();

    let mut x_bar: Vec<f64> = initial.x.clone();
    let mut last_status = initial.status;
    let mut cost_bar = base_obj.eval(&x_bar);
    let mut accum_time = 0.0;
    let mut trace: Vec<ScvxIteration> = Vec::new();
    let mut stop = ScvxStop::IterationCap;
    let mut trust_first: Option<f64> = None;

    let mut data = run_pass(problem, &assembled, constraints, &x_bar)?;

    for iteration in 0..config.max_iterations {
        let mut prog = assembled.prog.clone();
        let mut v_ids: Vec<VarId> = Vec::with_capacity(n * constraints.len());
        for (k, chi) in chi_lists.iter().enumerate() {
            for (ci, c) in constraints.iter().enumerate() {
                let (h, g) = &data.per_interval[k][ci];
                let v = prog.add_scalar();
                let mut row = LinExpr::constant(h - c.epsilon);
                for (i, var) in chi.iter().enumerate() {
                    if g[i] != 0.0 {
                        row = row
                            .plus(&LinExpr::variable(*var).scaled(g[i]))
                            .minus(&LinExpr::constant(g[i] * x_bar[var.0]));
                    }
                }
                prog.add_eq(row.minus(&LinExpr::variable(v)));
                let m = prog.add_scalar();
                prog.add_nonneg(LinExpr::variable(m));
                prog.add_nonneg(LinExpr::variable(m).minus(&LinExpr::variable(v)));
                prog.add_objective_term(m, config.w_h);
                v_ids.push(v);
            }
            // The weight rides inside the cone rows as its square root,
            // which keeps the objective coefficients near one even for
            // dominant trust weights.
            let sqrt_w = config.w_tr.sqrt();
            let t_k = prog.add_scalar();
            let diffs: Vec<LinExpr> = chi
                .iter()
                .map(|var| {
                    LinExpr::variable(*var)
                        .minus(&LinExpr::constant(x_bar[var.0]))
                        .scaled(sqrt_w)
                })
                .collect();
            prog.add_sq_norm_epigraph(t_k, &diffs);
            prog.add_objective_term(t_k, 1.0);
        }
        let sqrt_w = config.w_tr.sqrt();
        let t_n = prog.add_scalar();
        let diffs: Vec<LinExpr> = terminal
            .iter()
            .map(|var| {
                LinExpr::variable(*var).minus(&LinExpr::constant(x_bar[var.0])).scaled(sqrt_w)
            })
            .collect();
        prog.add_sq_norm_epigraph(t_n, &diffs);
        prog.add_objective_term(t_n, 1.0);

        let sol = backend.solve(&prog, settings)?;
        accum_time += sol.solve_time;
        if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::AlmostOptimal) {
            stop = ScvxStop::SubproblemFailed(sol.status);
            break;
        }

        let trust: f64 = chi_lists
            .iter()
            .flat_map(|chi| chi.iter())
            .chain(terminal.iter())
            .map(|var| {
                let dx = sol.x[var.0] - x_bar[var.0];
                dx * dx
            })
            .sum();
        let penalty: f64 =
            config.w_h * v_ids.iter().map(|v| sol.value_of(*v).max(0.0)).sum::<f64>();

        x_bar = sol.x;
        x_bar.truncate(base_vars);
        last_status = sol.status;
        cost_bar = base_obj.eval(&x_bar);
        data = run_pass(problem, &assembled, constraints, &x_bar)?;

        trace.push(ScvxIteration {
            iteration,
            cost: cost_bar,
            penalty,
            trust,
            max_violation: data.max_violation,
        });

        let first = *trust_first.get_or_insert(trust);
        if first <= 1e-16 || trust <= config.trust_decay * first {
            stop = ScvxStop::Converged;
            break;
        }
    }

    let solution = extract_solution(
        problem,
        &assembled,
        &ConicSolution {
            status: last_status,
            x: x_bar,
            objective: cost_bar,
            iterations: trace.len() as u32,
            solve_time: accum_time,
        },
    );
    Ok(ScvxRun { trace, stop, solution })
}
