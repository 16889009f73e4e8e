//! The matrix inequalities of the funnel synthesis: the differential
//! invariance condition, halfspace containment, tube radius bounds, and the
//! dissipation-form residual used to cross-check them.
//!
//! The invariance condition certifies, along a nominal trajectory, that
//! `V = eta^T Q(t)^-1 eta` obeys `dV/dt + alpha V - lambda_w |w|^2 <= 0` for
//! every deviation consistent with the channel multipliers. In the decision
//! variables `(Q, Y = K Q, N1, N2, lambda_w)` it is one affine matrix
//! inequality per evaluation time:
//!
//! ```text
//!   [ H11 + H11^T - dQ/dt   *     *        *   ]
//!   [ N2 T22^-T E^T         -N2   *        *   ]        <= 0
//!   [ (F - W G)^T           0     -lw I    *   ]
//!   [ T11 (C Q + D Y)       0     T11 G    -N1 ]
//! ```
//!
//! with `H11 = (A - W C) Q + (B - W D) Y + (alpha/2) Q` and
//! `W = E T22^-1 T21`. Rows 2 and 4 exist only with channels, row 3 only
//! with disturbance inputs. The multiplier transforms all have `T12 = 0`,
//! which this layout exploits.

use nalgebra::{DMatrix, DVector};

use crate::conic::{LinExpr, MatExpr};
use crate::error::SynthError;
use crate::linalg::{commutation_matrix, kron, spd_inverse};
use crate::model::{LinearFractionalModel, Linearization};
use crate::multipliers::{quadratic_form, Transform};

/// How the certificate matrix evolves between nodes.
///
/// With `Matched`, `dQ/dt` equals the symmetrized closed-loop update
/// `H11 + H11^T` plus a free defect `Z`, so the certificate follows the
/// shaped dynamics. With `Free`, `dQ/dt = Z` directly; the node values then
/// interpolate with piecewise quadratic segments whose positivity between
/// nodes can be enforced by an ordering condition on the slopes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunnelDynamics {
    Matched,
    Free,
}

/// Coefficients of `H11 = m1 Q + m2 Y` at one evaluation time.
#[derive(Clone, Debug)]
pub struct H11Mats {
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
}

/// Build the `H11` coefficient matrices from a linearization point.
pub fn h11_mats(
    model: &LinearFractionalModel,
    transform: &Transform,
    lin: &Linearization,
    alpha: f64,
) -> H11Mats {
    let n_x = model.n_x();
    let m1 = &lin.a + DMatrix::identity(n_x, n_x) * (alpha / 2.0) - &transform.w * &model.c_o;
    let m2 = &lin.b - &transform.w * &model.d_o;
    H11Mats { m1, m2 }
}

/// `H11` as an affine expression in `Q` and `Y`.
pub fn h11_expr(mats: &H11Mats, q: &MatExpr, y: &MatExpr) -> MatExpr {
    q.lmul(&mats.m1).plus(&y.lmul(&mats.m2))
}

/// Coefficient matrices of the column-stacked certificate derivative,
/// `vec(dQ/dt) = a_q vec(Q) + b_qy vec(Y) + vec(Z)`.
pub fn vectorized_q_dynamics(
    kind: FunnelDynamics,
    mats: &H11Mats,
    n_x: usize,
    n_u: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    match kind {
        FunnelDynamics::Free => (
            DMatrix::zeros(n_x * n_x, n_x * n_x),
            DMatrix::zeros(n_x * n_x, n_u * n_x),
        ),
        FunnelDynamics::Matched => {
            let eye = DMatrix::identity(n_x, n_x);
            let a_q = kron(&eye, &mats.m1) + kron(&mats.m1, &eye);
            let b_qy = (DMatrix::identity(n_x * n_x, n_x * n_x) + commutation_matrix(n_x, n_x))
                * kron(&eye, &mats.m2);
            (a_q, b_qy)
        }
    }
}

/// Assemble the invariance inequality at one evaluation time, returned as
/// the matrix that must be negative semidefinite. `lambda_w` is required
/// exactly when the model has disturbance inputs.
pub fn build_dlmi(
    model: &LinearFractionalModel,
    transform: &Transform,
    lin: &Linearization,
    alpha: f64,
    q: &MatExpr,
    y: &MatExpr,
    qdot: &MatExpr,
    n1: &MatExpr,
    n2: &MatExpr,
    lambda_w: Option<&LinExpr>,
) -> Result<MatExpr, SynthError> {
    let n_x = model.n_x();
    let n_w = model.n_w();
    let n_p = model.n_p();
    let m1 = transform.m1;
    if (n_w > 0) != lambda_w.is_some() {
        return Err(SynthError::InvalidSetup(
            "lambda_w must be supplied exactly when the model has disturbance inputs".into(),
        ));
    }
    if q.shape() != (n_x, n_x) {
        return Err(SynthError::dims("Q", format!("{n_x}x{n_x}"), format!("{:?}", q.shape())));
    }

    let mats = h11_mats(model, transform, lin, alpha);
    let hxx = h11_expr(&mats, q, y).plus_transpose().minus(qdot);

    let cq_dy = q.lmul(&model.c_o).plus(&y.lmul(&model.d_o));
    let f_tilde = &lin.f - &transform.w * &model.g_o;

    // Assemble the lower triangle row by row; the upper part mirrors it.
    let mut grid: Vec<Vec<MatExpr>> = Vec::new();
    grid.push(vec![hxx]);
    if n_p > 0 {
        grid.push(vec![
            n2.rmul(&(transform.t22_inv.transpose() * model.e.transpose())),
            n2.scaled(-1.0),
        ]);
    }
    if n_w > 0 {
        let lw = lambda_w.unwrap();
        let mut row = vec![MatExpr::from_const(f_tilde.transpose())];
        if n_p > 0 {
            row.push(MatExpr::zeros(n_w, n_p));
        }
        row.push(MatExpr::from_scalar_expr(lw, &(DMatrix::identity(n_w, n_w) * -1.0)));
        grid.push(row);
    }
    if m1 > 0 {
        let mut row = vec![cq_dy.lmul(&transform.t11)];
        row.push(MatExpr::zeros(m1, n_p));
        if n_w > 0 {
            row.push(MatExpr::from_const(&transform.t11 * &model.g_o));
        }
        row.push(n1.scaled(-1.0));
        grid.push(row);
    }

    // Complete the square grid with transposes of the lower triangle.
    let nb = grid.len();
    let mut full: Vec<Vec<MatExpr>> = Vec::with_capacity(nb);
    for i in 0..nb {
        let mut row = Vec::with_capacity(nb);
        for j in 0..nb {
            if j < grid[i].len() {
                row.push(grid[i][j].clone());
            } else {
                row.push(grid[j][i].transpose());
            }
        }
        full.push(row);
    }
    Ok(MatExpr::from_blocks(&full))
}

/// Numeric values of one certificate evaluation point.
#[derive(Clone, Debug)]
pub struct CertificatePoint {
    pub q: DMatrix<f64>,
    pub qdot: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub n1: DMatrix<f64>,
    pub n2: DMatrix<f64>,
    pub lambda_w: f64,
}

/// Residual of the dissipation inequality in the deviation coordinates
/// `(eta, dp, w)`:
///
/// ```text
///   [ Acl^T P + P Acl - P dQ/dt P + alpha P    P E    P F ]
///   [ *                                        0      0   ]   +  M
///   [ *                                        0    -lw I ]
/// ```
///
/// with `P = Q^-1`, `Acl = A + B K`, `K = Y Q^-1`, and `M` the multiplier
/// form pulled back through `dq = (C + D K) eta + G w`. Negative
/// semidefiniteness of this matrix is what the assembled inequality
/// certifies; it is derived here directly from the Lyapunov derivative, so
/// agreement in sign validates the assembly.
pub fn dissipation_residual(
    model: &LinearFractionalModel,
    transform: &Transform,
    lin: &Linearization,
    alpha: f64,
    point: &CertificatePoint,
) -> Result<DMatrix<f64>, SynthError> {
    let n_x = model.n_x();
    let n_p = model.n_p();
    let n_q = model.n_q();
    let n_w = model.n_w();
    let p = spd_inverse(&point.q)?;
    let k = &point.y * &p;
    let a_cl = &lin.a + &lin.b * &k;
    let c_cl = &model.c_o + &model.d_o * &k;

    let n = n_x + n_p + n_w;
    let mut s0 = DMatrix::zeros(n, n);
    let sxx = a_cl.transpose() * &p + &p * &a_cl - &p * &point.qdot * &p + &p * alpha;
    s0.view_mut((0, 0), (n_x, n_x)).copy_from(&sxx);
    if n_p > 0 {
        let pe = &p * &model.e;
        s0.view_mut((0, n_x), (n_x, n_p)).copy_from(&pe);
        s0.view_mut((n_x, 0), (n_p, n_x)).copy_from(&pe.transpose());
    }
    if n_w > 0 {
        let pf = &p * &lin.f;
        s0.view_mut((0, n_x + n_p), (n_x, n_w)).copy_from(&pf);
        s0.view_mut((n_x + n_p, 0), (n_w, n_x)).copy_from(&pf.transpose());
        for i in 0..n_w {
            s0[(n_x + n_p + i, n_x + n_p + i)] = -point.lambda_w;
        }
    }

    if n_p == 0 {
        return Ok(s0);
    }

    // Deviation map (eta, dp, w) -> (dq, dp).
    let mut j = DMatrix::zeros(n_q + n_p, n);
    j.view_mut((0, 0), (n_q, n_x)).copy_from(&c_cl);
    if n_w > 0 {
        j.view_mut((0, n_x + n_p), (n_q, n_w)).copy_from(&model.g_o);
    }
    for i in 0..n_p {
        j[(n_q + i, n_x + i)] = 1.0;
    }
    let form = quadratic_form(transform, &point.n1, &point.n2, n_q, n_p)?;
    Ok(s0 + j.transpose() * form * j)
}

/// Halfspace containment of the state tube: `a^T x <= b` for every state in
/// the ellipsoid around the nominal point. The nominal must satisfy the
/// constraint strictly; the returned matrix must be positive semidefinite.
pub fn state_halfspace_lmi(
    a: &DVector<f64>,
    b: f64,
    x_bar: &DVector<f64>,
    q: &MatExpr,
    c_q: f64,
) -> Result<MatExpr, SynthError> {
    let margin = b - a.dot(x_bar);
    if margin <= 0.0 {
        return Err(SynthError::InvalidSetup(format!(
            "state constraint violated by the nominal trajectory (margin {margin:.3e})"
        )));
    }
    let n_x = x_bar.len();
    let a_row = DMatrix::from_fn(1, n_x, |_, j| a[j]);
    let aq = q.lmul(&a_row).scaled(c_q);
    let grid = vec![
        vec![MatExpr::from_const(DMatrix::from_element(1, 1, margin * margin)), aq.clone()],
        vec![aq.transpose(), q.scaled(c_q)],
    ];
    Ok(MatExpr::from_blocks(&grid))
}

/// Halfspace containment of the input tube: `a^T u <= b` for every feedback
/// input over the state ellipsoid. Same shape as the state version with
/// `Y` in place of `Q` in the coupling row.
pub fn input_halfspace_lmi(
    a: &DVector<f64>,
    b: f64,
    u_bar: &DVector<f64>,
    q: &MatExpr,
    y: &MatExpr,
    c_q: f64,
) -> Result<MatExpr, SynthError> {
    let margin = b - a.dot(u_bar);
    if margin <= 0.0 {
        return Err(SynthError::InvalidSetup(format!(
            "input constraint violated by the nominal input (margin {margin:.3e})"
        )));
    }
    let n_u = u_bar.len();
    let a_row = DMatrix::from_fn(1, n_u, |_, j| a[j]);
    let ay = y.lmul(&a_row).scaled(c_q);
    let grid = vec![
        vec![MatExpr::from_const(DMatrix::from_element(1, 1, margin * margin)), ay.clone()],
        vec![ay.transpose(), q.scaled(c_q)],
    ];
    Ok(MatExpr::from_blocks(&grid))
}

/// Tube radius bound for one channel: the returned matrix is positive
/// semidefinite iff `s >= c_q * max |C_i eta + D_i xi|^2` over the state
/// ellipsoid with `xi = K eta`.
pub fn radius_bound_lmi(
    c_rows: &DMatrix<f64>,
    d_rows: &DMatrix<f64>,
    q: &MatExpr,
    y: &MatExpr,
    s: &LinExpr,
    c_q: f64,
) -> MatExpr {
    let n_qi = c_rows.nrows();
    let coupling = q.lmul(c_rows).plus(&y.lmul(d_rows)).scaled(c_q.sqrt());
    let s_block = MatExpr::from_scalar_expr(s, &DMatrix::identity(n_qi, n_qi));
    let grid = vec![
        vec![s_block, coupling.clone()],
        vec![coupling.transpose(), q.clone()],
    ];
    MatExpr::from_blocks(&grid)
}

/// Supporting halfspace `a^T x <= b` of a concave constraint `f(x) <= 0` at
/// the linearization point: every `x` with `a^T x <= b` satisfies the
/// original constraint. The gradient comes from central differences.
pub fn linearize_concave_constraint<F>(f: &F, x_bar: &DVector<f64>) -> (DVector<f64>, f64)
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x_bar.len();
    let h = 1e-6 * x_bar.norm().max(1.0);
    let mut grad = DVector::zeros(n);
    let mut xp = x_bar.clone();
    for k in 0..n {
        xp[k] = x_bar[k] + h;
        let fp = f(&xp);
        xp[k] = x_bar[k] - h;
        let fm = f(&xp);
        xp[k] = x_bar[k];
        grad[k] = (fp - fm) / (2.0 * h);
    }
    let b = grad.dot(x_bar) - f(x_bar);
    (grad, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ConicProgram;
    use crate::linalg::{lambda_max, lambda_min};
    use crate::model::Channel;
    use crate::multipliers::{allocate_side_vars, ChannelMultiplier, MultiplierSpec};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
    }

    fn rand_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let m = rand_mat(rng, d, d, 1.0);
        &m * m.transpose() + DMatrix::identity(d, d) * 0.3
    }

    /// Random model with a sector channel (2 in, 2 out), a gain channel
    /// (1 in, 1 out), and a curvature channel (2 in, 2 out); the curvature
    /// channel's q rows have zero disturbance feedthrough.
    fn random_instance(rng: &mut ChaCha8Rng) -> (LinearFractionalModel, MultiplierSpec) {
        let (n_x, n_u, n_w) = (3, 2, 1);
        let mk = |nq: usize, np: usize| {
            Channel::new(nq, np, Arc::new(move |_t, _q: &DVector<f64>| DVector::zeros(np)))
        };
        let mut g_o = rand_mat(rng, 5, n_w, 0.2);
        g_o.view_mut((3, 0), (2, 1)).fill(0.0);
        let model = LinearFractionalModel {
            a_o: rand_mat(rng, n_x, n_x, 1.0),
            b_o: rand_mat(rng, n_x, n_u, 1.0),
            f_o: rand_mat(rng, n_x, n_w, 0.5),
            e: rand_mat(rng, n_x, 5, 0.5),
            c_o: rand_mat(rng, 5, n_x, 0.5),
            d_o: rand_mat(rng, 5, n_u, 0.3),
            g_o,
            channels: vec![mk(2, 2), mk(1, 1), mk(2, 2)],
        };
        let k1 = rand_mat(rng, 2, 2, 0.5);
        let k2 = &k1 + rand_spd(rng, 2);
        let spec = MultiplierSpec {
            channels: vec![
                ChannelMultiplier::Sector { k1, k2, weight: rand_spd(rng, 2) },
                ChannelMultiplier::Lipschitz { gamma: rng.random_range(0.5..2.0) },
                ChannelMultiplier::Smooth { beta: rng.random_range(0.5..2.0), lambda: 0.4 },
            ],
        };
        (model, spec)
    }

    /// Build the inequality with decision-variable expressions, pick random
    /// values, then choose the derivative defect so the matrix is strictly
    /// negative definite by a Schur complement argument. Returns everything
    /// needed to evaluate both the assembled matrix and the dissipation
    /// residual.
    fn feasible_point(
        rng: &mut ChaCha8Rng,
        model: &LinearFractionalModel,
        spec: &MultiplierSpec,
        shrink: f64,
    ) -> (Linearization, f64, CertificatePoint, DMatrix<f64>) {
        let transform = spec.transform(model);
        let alpha = 2.0;
        let lin = Linearization {
            a: model.a_o.clone(),
            b: model.b_o.clone(),
            f: model.f_o.clone(),
            phi_prime: DMatrix::zeros(model.n_p(), model.n_q()),
            q_bar: DVector::zeros(model.n_q()),
        };

        let mut prog = ConicProgram::new();
        let qv = prog.add_sym_matrix(model.n_x());
        let yv = prog.add_matrix(model.n_u(), model.n_x());
        let zv = prog.add_sym_matrix(model.n_x());
        let mv = allocate_side_vars(&mut prog, spec);
        let lw = prog.add_scalar();

        let mut x = vec![0.0; prog.num_vars()];
        let q_val = rand_spd(rng, model.n_x());
        let y_val = rand_mat(rng, model.n_u(), model.n_x(), 0.5);
        for i in 0..model.n_x() {
            for j in i..model.n_x() {
                x[qv.entry_id(i, j).0] = q_val[(i, j)];
            }
        }
        for i in 0..model.n_u() {
            for j in 0..model.n_x() {
                x[yv.entry_id(i, j).0] = y_val[(i, j)];
            }
        }
        let lambdas_base: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..1.5)).collect();
        let slacks_base: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
        let lw_base = rng.random_range(0.5..0.9) * alpha;

        let n1e = spec.n1_expr(model, &mv);
        let n2e = spec.n2_expr(model, &mv);
        let lwe = LinExpr::variable(lw);
        let dlmi = build_dlmi(
            model,
            &transform,
            &lin,
            alpha,
            &qv.expr(),
            &yv.expr(),
            &zv.expr(),
            &n1e,
            &n2e,
            Some(&lwe),
        )
        .unwrap();

        // The trailing block needs its diagonal to dominate the fixed
        // coupling through G; scale the multiplier values up until it does.
        // With Z = 0 the off-diagonal and trailing blocks are unaffected by
        // the derivative defect, so evaluate once and carve out H12 and H22.
        let n_x = model.n_x();
        let mut tau = 1.0;
        let (d0, h12, h22, lambdas, slacks, lw_val) = loop {
            let lambdas: Vec<f64> = lambdas_base.iter().map(|v| v * tau).collect();
            let slacks: Vec<f64> = slacks_base.iter().map(|v| v * tau).collect();
            let lw_val = lw_base;
            for (i, v) in mv.lambdas.iter().enumerate() {
                if let Some(v) = v {
                    x[v.0] = lambdas[i];
                }
            }
            for (i, v) in mv.slacks.iter().enumerate() {
                if let Some(v) = v {
                    x[v.0] = slacks[i];
                }
            }
            x[lw.0] = lw_val;
            let d0 = dlmi.eval(&x);
            let rest = d0.nrows() - n_x;
            let h12 = d0.view((n_x, 0), (rest, n_x)).into_owned();
            let h22 = d0.view((n_x, n_x), (rest, rest)).into_owned();
            if lambda_max(&h22) < -1e-9 {
                break (d0, h12, h22, lambdas, slacks, lw_val);
            }
            tau *= 2.0;
            assert!(tau < 1e6, "could not reach a negative definite trailing block");
        };
        let h11_sym = d0.view((0, 0), (n_x, n_x)).into_owned();
        let neg_h22_inv = spd_inverse(&(-&h22)).unwrap();
        let need = lambda_max(&(h12.transpose() * neg_h22_inv * &h12));
        let c = need * shrink + if shrink >= 1.0 { 0.05 } else { 0.0 };
        let qdot = &h11_sym + DMatrix::identity(n_x, n_x) * c;

        // Re-evaluate through the expression path with Z set, and check it
        // agrees with the carved blocks.
        for i in 0..n_x {
            for j in i..n_x {
                x[zv.entry_id(i, j).0] = qdot[(i, j)];
            }
        }
        let d_full = dlmi.eval(&x);
        let mut d_manual = d0.clone();
        d_manual
            .view_mut((0, 0), (n_x, n_x))
            .copy_from(&(&h11_sym - &qdot));
        assert_abs_diff_eq!((&d_full - &d_manual).amax(), 0.0, epsilon = 1e-12);

        let (n1, n2) = spec.n_values(model, &lambdas, &slacks);
        let point = CertificatePoint { q: q_val, qdot, y: y_val, n1, n2, lambda_w: lw_val };
        (lin, alpha, point, d_full)
    }

    #[test]
    fn dissipation_residual_matches_assembled_inequality() {
        // Feasible assembled inequality implies nonpositive dissipation
        // residual, and an infeasible one implies a positive eigenvalue:
        // the two derivations agree in sign on random instances.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let (model, spec) = random_instance(&mut rng);
            spec.validate(&model).unwrap();
            let transform = spec.transform(&model);
            let (lin, alpha, point, d) = feasible_point(&mut rng, &model, &spec, 1.0);
            assert!(lambda_max(&d) <= 1e-10, "trial {trial}: assembled matrix not <= 0");
            let r = dissipation_residual(&model, &transform, &lin, alpha, &point).unwrap();
            let top = lambda_max(&r);
            assert!(top <= 1e-8, "trial {trial}: dissipation residual {top:.3e}");
        }
    }

    #[test]
    fn dissipation_residual_flags_invalid_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut flagged = 0;
        for _ in 0..20 {
            let (model, spec) = random_instance(&mut rng);
            let transform = spec.transform(&model);
            // Underscale the defect so the assembled matrix has a positive
            // eigenvalue; the residual must catch it too (the reductions are
            // equivalences, not one-way bounds).
            let (lin, alpha, point, d) = feasible_point(&mut rng, &model, &spec, 0.3);
            if lambda_max(&d) > 1e-9 {
                let r = dissipation_residual(&model, &transform, &lin, alpha, &point).unwrap();
                assert!(lambda_max(&r) > 0.0, "residual failed to flag an invalid point");
                flagged += 1;
            }
        }
        assert!(flagged >= 15, "too few invalid instances generated: {flagged}");
    }

    #[test]
    fn inequality_without_channels_or_disturbance() {
        // Purely linear, undisturbed model: the matrix collapses to the
        // Lyapunov block alone.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = rand_mat(&mut rng, 2, 2, 1.0);
        let b = rand_mat(&mut rng, 2, 1, 1.0);
        let model = LinearFractionalModel::linear(a.clone(), b.clone(), DMatrix::zeros(2, 0));
        let spec = MultiplierSpec { channels: vec![] };
        let transform = spec.transform(&model);
        let lin = model.linearize(0.0, &dvector![0.0, 0.0], &dvector![0.0]);
        let alpha = 1.0;

        let mut prog = ConicProgram::new();
        let qv = prog.add_sym_matrix(2);
        let yv = prog.add_matrix(1, 2);
        let zv = prog.add_sym_matrix(2);
        let dlmi = build_dlmi(
            &model,
            &transform,
            &lin,
            alpha,
            &qv.expr(),
            &yv.expr(),
            &zv.expr(),
            &MatExpr::zeros(0, 0),
            &MatExpr::zeros(0, 0),
            None,
        )
        .unwrap();
        assert_eq!(dlmi.shape(), (2, 2));

        let q_val = rand_spd(&mut rng, 2);
        let y_val = rand_mat(&mut rng, 1, 2, 0.5);
        let mut x = vec![0.0; prog.num_vars()];
        for i in 0..2 {
            for j in i..2 {
                x[qv.entry_id(i, j).0] = q_val[(i, j)];
            }
        }
        x[yv.entry_id(0, 0).0] = y_val[(0, 0)];
        x[yv.entry_id(0, 1).0] = y_val[(0, 1)];
        let d = dlmi.eval(&x);
        let h11 = (&a + DMatrix::identity(2, 2) * (alpha / 2.0)) * &q_val + &b * &y_val;
        let want = &h11 + h11.transpose();
        assert_abs_diff_eq!((d - want).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lambda_w_requirement_is_checked() {
        let model = LinearFractionalModel::linear(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::from_element(2, 1, 0.1),
        );
        let spec = MultiplierSpec { channels: vec![] };
        let transform = spec.transform(&model);
        let lin = model.linearize(0.0, &dvector![0.0, 0.0], &dvector![0.0]);
        let mut prog = ConicProgram::new();
        let qv = prog.add_sym_matrix(2);
        let yv = prog.add_matrix(1, 2);
        let zv = prog.add_sym_matrix(2);
        let out = build_dlmi(
            &model,
            &transform,
            &lin,
            1.0,
            &qv.expr(),
            &yv.expr(),
            &zv.expr(),
            &MatExpr::zeros(0, 0),
            &MatExpr::zeros(0, 0),
            None,
        );
        assert!(out.is_err());
    }

    #[test]
    fn vectorized_dynamics_match_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (n_x, n_u) = (3, 2);
        let mats = H11Mats {
            m1: rand_mat(&mut rng, n_x, n_x, 1.0),
            m2: rand_mat(&mut rng, n_x, n_u, 1.0),
        };
        let q = rand_spd(&mut rng, n_x);
        let y = rand_mat(&mut rng, n_u, n_x, 1.0);
        let z = rand_spd(&mut rng, n_x);

        let (a_q, b_qy) = vectorized_q_dynamics(FunnelDynamics::Matched, &mats, n_x, n_u);
        let h11 = &mats.m1 * &q + &mats.m2 * &y;
        let want = &h11 + h11.transpose() + &z;
        let got_vec = &a_q * crate::linalg::vec_of(&q)
            + &b_qy * crate::linalg::vec_of(&y)
            + crate::linalg::vec_of(&z);
        let got = crate::linalg::unvec(&got_vec, n_x, n_x);
        assert_abs_diff_eq!((got - want).amax(), 0.0, epsilon = 1e-12);

        let (a_q0, b_qy0) = vectorized_q_dynamics(FunnelDynamics::Free, &mats, n_x, n_u);
        assert_abs_diff_eq!(a_q0.amax(), 0.0);
        assert_abs_diff_eq!(b_qy0.amax(), 0.0);
    }

    #[test]
    fn state_halfspace_contains_exactly_the_tube_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let q_val = rand_spd(&mut rng, 3);
        let a = dvector![1.0, -0.5, 0.25];
        let x_bar = dvector![0.1, 0.2, -0.3];
        let c_q = 1.7;
        let extent = (c_q * (a.transpose() * &q_val * &a)[(0, 0)]).sqrt();

        let q_expr = MatExpr::from_const(q_val.clone());
        for (b_shift, expect_psd) in [(1.01, true), (0.99, false)] {
            let b = a.dot(&x_bar) + extent * b_shift;
            let lmi = state_halfspace_lmi(&a, b, &x_bar, &q_expr, c_q).unwrap();
            let m = lmi.eval(&[]);
            assert_eq!(lambda_min(&m) >= -1e-10, expect_psd, "shift {b_shift}");
        }
        assert!(state_halfspace_lmi(&a, a.dot(&x_bar) - 0.1, &x_bar, &q_expr, c_q).is_err());
    }

    #[test]
    fn input_halfspace_contains_exactly_the_feedback_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let q_val = rand_spd(&mut rng, 3);
        let y_val = rand_mat(&mut rng, 2, 3, 1.0);
        let a = dvector![0.8, -0.6];
        let u_bar = dvector![0.0, 0.5];
        let c_q = 0.9;
        // Max of a^T K eta over the tube: sqrt(c_q a^T Y Q^-1 Y^T a).
        let q_inv = spd_inverse(&q_val).unwrap();
        let extent = (c_q * (a.transpose() * &y_val * &q_inv * y_val.transpose() * &a)[(0, 0)]).sqrt();

        let q_expr = MatExpr::from_const(q_val.clone());
        let y_expr = MatExpr::from_const(y_val.clone());
        for (b_shift, expect_psd) in [(1.01, true), (0.99, false)] {
            let b = a.dot(&u_bar) + extent * b_shift;
            let lmi = input_halfspace_lmi(&a, b, &u_bar, &q_expr, &y_expr, c_q).unwrap();
            let m = lmi.eval(&[]);
            assert_eq!(lambda_min(&m) >= -1e-10, expect_psd, "shift {b_shift}");
        }
    }

    #[test]
    fn radius_bound_is_tight_at_the_tube_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q_val = rand_spd(&mut rng, 3);
        let y_val = rand_mat(&mut rng, 2, 3, 0.7);
        let c_rows = rand_mat(&mut rng, 2, 3, 1.0);
        let d_rows = rand_mat(&mut rng, 2, 2, 0.5);
        let c_q = 1.3;
        let q_inv = spd_inverse(&q_val).unwrap();
        let k = &y_val * &q_inv;
        let c_cl = &c_rows + &d_rows * &k;
        let smax = c_q * lambda_max(&(&c_cl * &q_val * c_cl.transpose()));

        let q_expr = MatExpr::from_const(q_val.clone());
        let y_expr = MatExpr::from_const(y_val.clone());
        for (scale, expect_psd) in [(1.01, true), (0.99, false)] {
            let s = LinExpr::constant(smax * scale);
            let lmi = radius_bound_lmi(&c_rows, &d_rows, &q_expr, &y_expr, &s, c_q);
            let m = lmi.eval(&[]);
            assert_eq!(lambda_min(&m) >= -1e-10, expect_psd, "scale {scale}");
        }
    }

    #[test]
    fn concave_constraint_linearization_is_an_inner_approximation() {
        // Keep-out disk of radius 0.5 at (1, 2): f(x) = r - |pos - c| <= 0.
        let center = dvector![1.0, 2.0];
        let radius = 0.5;
        let f = |x: &DVector<f64>| radius - (x - &center).norm();
        let x_bar = dvector![2.5, 3.0];
        let (a, b) = linearize_concave_constraint(&f, &x_bar);
        // The nominal keeps its margin.
        assert!(a.dot(&x_bar) < b);
        assert_abs_diff_eq!(b - a.dot(&x_bar), -f(&x_bar), epsilon = 1e-6);
        // Every point of the halfspace satisfies the original constraint.
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..500 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-4.0..6.0));
            if a.dot(&x) <= b {
                assert!(f(&x) <= 1e-9, "halfspace point violates the constraint");
            }
        }
    }
}
