//! Exact discretization of the certificate dynamics between grid nodes.
//!
//! Between nodes, the input-side unknowns (`Y`, the derivative defect `Z`,
//! and the scalar multipliers) interpolate linearly. The column-stacked
//! certificate then obeys a linear time-varying ODE whose transition
//! operators are integrated once per interval:
//!
//! ```text
//!   vec(Q)(t_k + h) = phi(h) vec(Q_k) + by_m(h) vec(Y_k) + by_p(h) vec(Y_k+1)
//!                   + bz_m(h) vec(Z_k^-) + bz_p(h) vec(Z_k^+)
//! ```
//!
//! With the free derivative parameterization the operators have closed
//! forms; with the matched one they come from a fixed-step RK4 sweep over
//! the joint matrix ODE. Requested offsets are hit exactly by chaining the
//! sweep from one offset to the next.

use nalgebra::DMatrix;

use crate::conic::MatExpr;
use crate::error::SynthError;
use crate::linalg::rk4_step_mat;
use crate::lmi::{h11_mats, vectorized_q_dynamics, FunnelDynamics};
use crate::model::{LinearFractionalModel, NominalTrajectory};
use crate::multipliers::Transform;

/// Uniform time grid with `n` intervals over `[t0, tf]`.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub tf: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, n: usize) -> Result<Self, SynthError> {
        if !(tf > t0) {
            return Err(SynthError::InvalidSetup(format!("empty horizon [{t0}, {tf}]")));
        }
        if n == 0 {
            return Err(SynthError::InvalidSetup("need at least one interval".into()));
        }
        Ok(TimeGrid { t0, tf, n })
    }

    pub fn dt(&self) -> f64 {
        (self.tf - self.t0) / self.n as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n);
        if k == self.n {
            self.tf
        } else {
            self.t0 + self.dt() * k as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.node(k)).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.n + 1
    }
}

/// Linear interpolation weights at offset `h` into an interval of length
/// `d`: `(weight of the left value, weight of the right value)`.
pub fn foh_weights(h: f64, d: f64) -> (f64, f64) {
    let lam = h / d;
    (1.0 - lam, lam)
}

/// Transition operators from the start of an interval to one offset.
#[derive(Clone, Debug)]
pub struct PartialTransition {
    /// Offset into the interval.
    pub h: f64,
    pub phi: DMatrix<f64>,
    pub by_m: DMatrix<f64>,
    pub by_p: DMatrix<f64>,
    pub bz_m: DMatrix<f64>,
    pub bz_p: DMatrix<f64>,
}

impl PartialTransition {
    /// Certificate value at the offset as an affine expression of the
    /// interval's unknowns, reshaped back to `n_x x n_x`. The inputs are the
    /// column-stacked expressions of `Q_k`, the two `Y` endpoint values, and
    /// the two `Z` endpoint values.
    pub fn q_expr(
        &self,
        q_k: &MatExpr,
        y_m: &MatExpr,
        y_p: &MatExpr,
        z_m: &MatExpr,
        z_p: &MatExpr,
        n_x: usize,
    ) -> MatExpr {
        let v = q_k
            .lmul(&self.phi)
            .plus(&y_m.lmul(&self.by_m))
            .plus(&y_p.lmul(&self.by_p))
            .plus(&z_m.lmul(&self.bz_m))
            .plus(&z_p.lmul(&self.bz_p));
        v.reshape(n_x, n_x)
    }

    /// Numeric counterpart of [`Self::q_expr`].
    pub fn q_value(
        &self,
        q_k: &DMatrix<f64>,
        y_m: &DMatrix<f64>,
        y_p: &DMatrix<f64>,
        z_m: &DMatrix<f64>,
        z_p: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let n_x = q_k.nrows();
        let v = &self.phi * crate::linalg::vec_of(q_k)
            + &self.by_m * crate::linalg::vec_of(y_m)
            + &self.by_p * crate::linalg::vec_of(y_p)
            + &self.bz_m * crate::linalg::vec_of(z_m)
            + &self.bz_p * crate::linalg::vec_of(z_p);
        crate::linalg::unvec(&v, n_x, n_x)
    }
}

/// Integrate the transition operators of one interval `[t_k, t_k + d]` and
/// return them at each requested offset. Offsets must be strictly
/// increasing, positive, and at most `d` (up to roundoff). `substeps` is
/// the RK4 step count for a full interval; partial spans use a
/// proportional count.
pub fn discretize_interval(
    model: &LinearFractionalModel,
    traj: &NominalTrajectory,
    transform: &Transform,
    kind: FunnelDynamics,
    alpha: f64,
    t_k: f64,
    d: f64,
    offsets: &[f64],
    substeps: usize,
) -> Result<Vec<PartialTransition>, SynthError> {
    if offsets.is_empty() {
        return Ok(Vec::new());
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) || offsets[0] <= 0.0 {
        return Err(SynthError::InvalidSetup("offsets must be strictly increasing and positive".into()));
    }
    if offsets[offsets.len() - 1] > d * (1.0 + 1e-12) {
        return Err(SynthError::InvalidSetup("offset beyond the interval".into()));
    }

    let n_x = model.n_x();
    let nv = n_x * n_x;

    if kind == FunnelDynamics::Free {
        // phi = I, no Y coupling, and the Z integrals have closed forms.
        let eye = DMatrix::identity(nv, nv);
        return Ok(offsets
            .iter()
            .map(|&h| PartialTransition {
                h,
                phi: eye.clone(),
                by_m: DMatrix::zeros(nv, model.n_u() * n_x),
                by_p: DMatrix::zeros(nv, model.n_u() * n_x),
                bz_m: &eye * (h - h * h / (2.0 * d)),
                bz_p: &eye * (h * h / (2.0 * d)),
            })
            .collect());
    }

    let n_u = model.n_u();
    let ny = n_u * n_x;
    // State of the joint ODE: [phi | by_m | by_p | bz_m | bz_p].
    let width = nv + 2 * ny + 2 * nv;
    let mut x = DMatrix::zeros(nv, width);
    x.view_mut((0, 0), (nv, nv)).copy_from(&DMatrix::identity(nv, nv));

    let rhs = |t: f64, x: &DMatrix<f64>| -> DMatrix<f64> {
        let lin = traj
            .linearize_at(model, t)
            .expect("nominal trajectory must cover the interval");
        let mats = h11_mats(model, transform, &lin, alpha);
        let (a_q, b_qy) = vectorized_q_dynamics(kind, &mats, n_x, n_u);
        let (wm, wp) = foh_weights(t - t_k, d);
        let mut dx = &a_q * x;
        dx.view_mut((0, nv), (nv, ny)).add_assign_by(&b_qy, wm);
        dx.view_mut((0, nv + ny), (nv, ny)).add_assign_by(&b_qy, wp);
        for i in 0..nv {
            dx[(i, nv + 2 * ny + i)] += wm;
            dx[(i, nv + 2 * ny + nv + i)] += wp;
        }
        dx
    };

    let mut out = Vec::with_capacity(offsets.len());
    let mut h_prev = 0.0;
    for &h_target in offsets {
        // Spans come from the exact offsets, not an accumulated clock, so
        // the step count cannot flip on roundoff.
        let span = h_target - h_prev;
        let steps = ((substeps as f64 * span / d - 1e-9).ceil() as usize).max(1);
        let step = span / steps as f64;
        let mut t = t_k + h_prev;
        for _ in 0..steps {
            x = rk4_step_mat(&rhs, t, &x, step);
            t += step;
        }
        h_prev = h_target;
        out.push(PartialTransition {
            h: h_target,
            phi: x.view((0, 0), (nv, nv)).into_owned(),
            by_m: x.view((0, nv), (nv, ny)).into_owned(),
            by_p: x.view((0, nv + ny), (nv, ny)).into_owned(),
            bz_m: x.view((0, nv + 2 * ny), (nv, nv)).into_owned(),
            bz_p: x.view((0, nv + 2 * ny + nv), (nv, nv)).into_owned(),
        });
    }
    Ok(out)
}

trait AddAssignScaled {
    fn add_assign_by(&mut self, other: &DMatrix<f64>, scale: f64);
}

impl AddAssignScaled for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign_by(&mut self, other: &DMatrix<f64>, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for j in 0..self.ncols() {
            for i in 0..self.nrows() {
                self[(i, j)] += other[(i, j)] * scale;
            }
        }
    }
}

/// Closed-form certificate value inside an interval for the free
/// parameterization: `Q(h) = Q_k + h Z^- + h^2 (Z^+ - Z^-) / (2 d)`.
pub fn free_kind_q_at(
    q_k: &DMatrix<f64>,
    z_m: &DMatrix<f64>,
    z_p: &DMatrix<f64>,
    h: f64,
    d: f64,
) -> DMatrix<f64> {
    q_k + z_m * h + (z_p - z_m) * (h * h / (2.0 * d))
}
