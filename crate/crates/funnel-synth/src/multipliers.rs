//! Channel multipliers: quadratic constraints that over-approximate the
//! second-order channel residuals.
//!
//! Each channel deviation pair `(dq_i, dp_i)` is constrained by a quadratic
//! form parameterized through a constant transform `T` and two weight blocks
//! `N1, N2 > 0`:
//!
//! ```text
//!   [dq; dp]^T T^T blkdiag(N1^-1, -N2^-1) T [dq; dp] >= 0
//! ```
//!
//! Three families are supported per channel: an incremental gain bound
//! (Lipschitz), a curvature bound with a tube-radius slack (smooth), and a
//! matrix sector bound. All three keep `T12 = 0`, which the matrix
//! inequality assembly relies on.

use nalgebra::DMatrix;

use crate::conic::{ConicProgram, LinExpr, MatExpr, VarId};
use crate::error::SynthError;
use crate::model::LinearFractionalModel;

/// Smallest admissible multiplier scale; keeps `N1, N2` invertible.
pub const LAMBDA_MIN: f64 = 1e-9;

/// Multiplier family for one channel.
#[derive(Clone, Debug)]
pub enum ChannelMultiplier {
    /// `|phi(q1) - phi(q2)| <= gamma |q1 - q2|`; the scale is a decision
    /// variable per evaluation point.
    Lipschitz { gamma: f64 },
    /// `|phi'(q1) - phi'(q2)| <= beta |q1 - q2|`, so the residual obeys
    /// `|dp| <= (beta/2) |dq|^2`. The scale `lambda` is fixed by
    /// configuration; the tube radius slack `s` is the decision variable and
    /// is tied to the funnel by a separate radius bound.
    Smooth { beta: f64, lambda: f64 },
    /// `(K2 dq - dp)^T S^-1 (dp - K1 dq) >= 0` with fixed weight `S > 0`;
    /// the scale is a decision variable per evaluation point.
    Sector { k1: DMatrix<f64>, k2: DMatrix<f64>, weight: DMatrix<f64> },
}

/// Multiplier choice for every channel of a model, in channel order.
#[derive(Clone, Debug)]
pub struct MultiplierSpec {
    pub channels: Vec<ChannelMultiplier>,
}

impl MultiplierSpec {
    pub fn uniform_lipschitz(n: usize, gamma: f64) -> Self {
        MultiplierSpec {
            channels: (0..n).map(|_| ChannelMultiplier::Lipschitz { gamma }).collect(),
        }
    }

    /// Check the spec against the model: one entry per channel, positive
    /// constants, sector dimensions, and zero disturbance feedthrough on
    /// smooth channels (their radius bound has no disturbance term).
    pub fn validate(&self, model: &LinearFractionalModel) -> Result<(), SynthError> {
        if self.channels.len() != model.channels.len() {
            return Err(SynthError::dims(
                "multiplier channels",
                model.channels.len().to_string(),
                self.channels.len().to_string(),
            ));
        }
        let q_slices = model.q_slices();
        for (i, (m, ch)) in self.channels.iter().zip(&model.channels).enumerate() {
            match m {
                ChannelMultiplier::Lipschitz { gamma } => {
                    if !(*gamma > 0.0) {
                        return Err(SynthError::NotPositive(format!("gamma of channel {i}")));
                    }
                }
                ChannelMultiplier::Smooth { beta, lambda } => {
                    if !(*beta > 0.0) {
                        return Err(SynthError::NotPositive(format!("beta of channel {i}")));
                    }
                    if !(*lambda >= LAMBDA_MIN) {
                        return Err(SynthError::NotPositive(format!("lambda of channel {i}")));
                    }
                    let g_rows = model.g_o.rows(q_slices[i].start, ch.input_dim);
                    if g_rows.amax() != 0.0 {
                        return Err(SynthError::InvalidSetup(format!(
                            "smooth multiplier on channel {i} requires zero disturbance \
                             feedthrough into its q rows"
                        )));
                    }
                }
                ChannelMultiplier::Sector { k1, k2, weight } => {
                    let want = (ch.output_dim, ch.input_dim);
                    if k1.shape() != want || k2.shape() != want {
                        return Err(SynthError::dims(
                            format!("sector bounds of channel {i}"),
                            format!("{}x{}", want.0, want.1),
                            format!("{}x{} / {}x{}", k1.nrows(), k1.ncols(), k2.nrows(), k2.ncols()),
                        ));
                    }
                    if weight.shape() != (ch.output_dim, ch.output_dim) {
                        return Err(SynthError::dims(
                            format!("sector weight of channel {i}"),
                            format!("{0}x{0}", ch.output_dim),
                            format!("{}x{}", weight.nrows(), weight.ncols()),
                        ));
                    }
                    if crate::linalg::lambda_min(weight) <= 0.0 {
                        return Err(SynthError::NotPositive(format!("sector weight of channel {i}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Row sizes of the `N1` block per channel (the transformed q rows).
    pub fn n1_dims(&self, model: &LinearFractionalModel) -> Vec<usize> {
        self.channels
            .iter()
            .zip(&model.channels)
            .map(|(m, ch)| match m {
                ChannelMultiplier::Sector { .. } => ch.output_dim,
                _ => ch.input_dim,
            })
            .collect()
    }

    /// Does any channel need a tube radius slack and its radius bound?
    pub fn channel_needs_slack(&self, i: usize) -> bool {
        matches!(self.channels[i], ChannelMultiplier::Smooth { .. })
    }

    /// Does the channel carry a free multiplier scale?
    pub fn channel_needs_lambda(&self, i: usize) -> bool {
        !self.channel_needs_slack(i)
    }

    /// Assemble the constant transform blocks for the whole channel stack.
    pub fn transform(&self, model: &LinearFractionalModel) -> Transform {
        let n_q = model.n_q();
        let n_p = model.n_p();
        let m1: usize = self.n1_dims(model).iter().sum();
        let mut t11 = DMatrix::zeros(m1, n_q);
        let mut t21 = DMatrix::zeros(n_p, n_q);
        let mut t22 = DMatrix::zeros(n_p, n_p);
        let mut t22_inv = DMatrix::zeros(n_p, n_p);
        let (mut r1, mut qo, mut po) = (0, 0, 0);
        for (m, ch) in self.channels.iter().zip(&model.channels) {
            match m {
                ChannelMultiplier::Sector { k1, k2, .. } => {
                    t11.view_mut((r1, qo), (ch.output_dim, ch.input_dim)).copy_from(&(k2 - k1));
                    t21.view_mut((po, qo), (ch.output_dim, ch.input_dim)).copy_from(&(k2 + k1));
                    for d in 0..ch.output_dim {
                        t22[(po + d, po + d)] = -2.0;
                        t22_inv[(po + d, po + d)] = -0.5;
                    }
                    r1 += ch.output_dim;
                }
                _ => {
                    for d in 0..ch.input_dim {
                        t11[(r1 + d, qo + d)] = 1.0;
                    }
                    for d in 0..ch.output_dim {
                        t22[(po + d, po + d)] = 1.0;
                        t22_inv[(po + d, po + d)] = 1.0;
                    }
                    r1 += ch.input_dim;
                }
            }
            qo += ch.input_dim;
            po += ch.output_dim;
        }
        let w = &model.e * &t22_inv * &t21;
        Transform { t11, t21, t22, t22_inv, w, m1 }
    }

    /// Affine `N1` block given the per-channel decision variables.
    pub fn n1_expr(&self, model: &LinearFractionalModel, vars: &SideVars) -> MatExpr {
        let dims = self.n1_dims(model);
        let m1: usize = dims.iter().sum();
        let mut out = MatExpr::zeros(m1, m1);
        let mut off = 0;
        for (i, m) in self.channels.iter().enumerate() {
            let d = dims[i];
            match m {
                ChannelMultiplier::Lipschitz { .. } => {
                    let mut coeff = DMatrix::zeros(m1, m1);
                    for k in 0..d {
                        coeff[(off + k, off + k)] = 1.0;
                    }
                    out.terms.insert(vars.lambdas[i].unwrap().0, coeff);
                }
                ChannelMultiplier::Smooth { lambda, .. } => {
                    for k in 0..d {
                        out.constant[(off + k, off + k)] = *lambda;
                    }
                }
                ChannelMultiplier::Sector { weight, .. } => {
                    let mut coeff = DMatrix::zeros(m1, m1);
                    coeff.view_mut((off, off), (d, d)).copy_from(weight);
                    out.terms.insert(vars.lambdas[i].unwrap().0, coeff);
                }
            }
            off += d;
        }
        out
    }

    /// Affine `N2` block given the per-channel decision variables.
    pub fn n2_expr(&self, model: &LinearFractionalModel, vars: &SideVars) -> MatExpr {
        let n_p = model.n_p();
        let mut out = MatExpr::zeros(n_p, n_p);
        let mut off = 0;
        for (i, (m, ch)) in self.channels.iter().zip(&model.channels).enumerate() {
            let d = ch.output_dim;
            match m {
                ChannelMultiplier::Lipschitz { gamma } => {
                    let mut coeff = DMatrix::zeros(n_p, n_p);
                    for k in 0..d {
                        coeff[(off + k, off + k)] = gamma * gamma;
                    }
                    out.terms.insert(vars.lambdas[i].unwrap().0, coeff);
                }
                ChannelMultiplier::Smooth { beta, lambda } => {
                    let mut coeff = DMatrix::zeros(n_p, n_p);
                    for k in 0..d {
                        coeff[(off + k, off + k)] = lambda * beta * beta;
                    }
                    out.terms.insert(vars.slacks[i].unwrap().0, coeff);
                }
                ChannelMultiplier::Sector { weight, .. } => {
                    let mut coeff = DMatrix::zeros(n_p, n_p);
                    coeff.view_mut((off, off), (d, d)).copy_from(weight);
                    out.terms.insert(vars.lambdas[i].unwrap().0, coeff);
                }
            }
            off += d;
        }
        out
    }

    /// Numeric `N1, N2` from per-channel scale and slack values; used by
    /// oracles and the invariance checks.
    pub fn n_values(
        &self,
        model: &LinearFractionalModel,
        lambdas: &[f64],
        slacks: &[f64],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut prog = ConicProgram::new();
        let vars = allocate_side_vars(&mut prog, self);
        let mut x = vec![0.0; prog.num_vars()];
        for (i, v) in vars.lambdas.iter().enumerate() {
            if let Some(v) = v {
                x[v.0] = lambdas[i];
            }
        }
        for (i, v) in vars.slacks.iter().enumerate() {
            if let Some(v) = v {
                x[v.0] = slacks[i];
            }
        }
        let n1 = self.n1_expr(model, &vars).eval(&x);
        let n2 = self.n2_expr(model, &vars).eval(&x);
        (n1, n2)
    }
}

/// Constant transform blocks of the stacked channels. `T12 = 0` throughout,
/// so the absorbed feedthrough is `W = E T22^-1 T21` and the transformed
/// q rows use `T11` directly.
#[derive(Clone, Debug)]
pub struct Transform {
    pub t11: DMatrix<f64>,
    pub t21: DMatrix<f64>,
    pub t22: DMatrix<f64>,
    pub t22_inv: DMatrix<f64>,
    /// `E T22^-1 T21`, the correction to the state block.
    pub w: DMatrix<f64>,
    /// Total row count of `N1`.
    pub m1: usize,
}

/// Decision variables of the multipliers at one evaluation point: a scale
/// per Lipschitz or sector channel, a radius slack per smooth channel.
#[derive(Clone, Debug)]
pub struct SideVars {
    pub lambdas: Vec<Option<VarId>>,
    pub slacks: Vec<Option<VarId>>,
}

/// Create the multiplier variables for one evaluation point and return the
/// handles; scale lower bounds are the caller's responsibility via
/// [`lambda_bound_rows`].
pub fn allocate_side_vars(prog: &mut ConicProgram, spec: &MultiplierSpec) -> SideVars {
    let mut lambdas = Vec::with_capacity(spec.channels.len());
    let mut slacks = Vec::with_capacity(spec.channels.len());
    for i in 0..spec.channels.len() {
        if spec.channel_needs_lambda(i) {
            lambdas.push(Some(prog.add_scalar()));
            slacks.push(None);
        } else {
            lambdas.push(None);
            slacks.push(Some(prog.add_scalar()));
        }
    }
    SideVars { lambdas, slacks }
}

/// Nonnegativity rows `lambda_i >= LAMBDA_MIN` for the free scales. Radius
/// slacks need no row: their bound already forces them nonnegative.
pub fn lambda_bound_rows(vars: &SideVars) -> Vec<LinExpr> {
    vars.lambdas
        .iter()
        .flatten()
        .map(|v| LinExpr::variable(*v).minus(&LinExpr::constant(LAMBDA_MIN)))
        .collect()
}

/// Closed-form sector quadratic form on `[dq; dp]` at scale `lambda`:
/// `2 lambda (K2 dq - dp)^T S^-1 (dp - K1 dq)` as a symmetric matrix.
pub fn sector_quadratic_form(
    k1: &DMatrix<f64>,
    k2: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>, SynthError> {
    let s_inv = crate::linalg::spd_inverse(weight)?;
    let n_q = k1.ncols();
    let n_p = k1.nrows();
    let qq = -(k1.transpose() * &s_inv * k2 + k2.transpose() * &s_inv * k1);
    let pq = &s_inv * (k1 + k2);
    let pp = &s_inv * (-2.0);
    let mut m = DMatrix::zeros(n_q + n_p, n_q + n_p);
    m.view_mut((0, 0), (n_q, n_q)).copy_from(&qq);
    m.view_mut((n_q, 0), (n_p, n_q)).copy_from(&pq);
    m.view_mut((0, n_q), (n_q, n_p)).copy_from(&pq.transpose());
    m.view_mut((n_q, n_q), (n_p, n_p)).copy_from(&pp);
    Ok(m * lambda)
}

/// Full multiplier quadratic form on the stacked `[dq; dp]` built from the
/// transform and numeric `N1, N2`. Nonnegative on all deviations consistent
/// with the channel bounds.
pub fn quadratic_form(
    transform: &Transform,
    n1: &DMatrix<f64>,
    n2: &DMatrix<f64>,
    n_q: usize,
    n_p: usize,
) -> Result<DMatrix<f64>, SynthError> {
    let mut t = DMatrix::zeros(transform.m1 + n_p, n_q + n_p);
    t.view_mut((0, 0), (transform.m1, n_q)).copy_from(&transform.t11);
    t.view_mut((transform.m1, 0), (n_p, n_q)).copy_from(&transform.t21);
    t.view_mut((transform.m1, n_q), (n_p, n_p)).copy_from(&transform.t22);
    let n1_inv = crate::linalg::spd_inverse(n1)?;
    let n2_inv = crate::linalg::spd_inverse(n2)?;
    let mut mid = DMatrix::zeros(transform.m1 + n_p, transform.m1 + n_p);
    mid.view_mut((0, 0), (transform.m1, transform.m1)).copy_from(&n1_inv);
    mid.view_mut((transform.m1, transform.m1), (n_p, n_p)).copy_from(&(-n2_inv));
    Ok(t.transpose() * mid * t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Channel;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dvector, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(d, d) * 0.5
    }

    /// Model with three channels exercising all three multiplier families:
    /// dims q = (2, 1, 2), p = (2, 1, 2).
    fn mixed_model() -> LinearFractionalModel {
        let mk = |nq: usize, np: usize| {
            Channel::new(nq, np, Arc::new(move |_t, _q: &DVector<f64>| DVector::zeros(np)))
        };
        let n_q = 5;
        let n_p = 5;
        LinearFractionalModel {
            a_o: DMatrix::zeros(3, 3),
            b_o: DMatrix::zeros(3, 2),
            f_o: DMatrix::zeros(3, 1),
            e: DMatrix::from_fn(3, n_p, |i, j| ((i + 2 * j) as f64 * 0.3).sin()),
            c_o: DMatrix::from_fn(n_q, 3, |i, j| ((i * 3 + j) as f64 * 0.2).cos()),
            d_o: DMatrix::zeros(n_q, 2),
            g_o: DMatrix::zeros(n_q, 1),
            channels: vec![mk(2, 2), mk(1, 1), mk(2, 2)],
        }
    }

    fn mixed_spec(rng: &mut ChaCha8Rng) -> MultiplierSpec {
        let k1 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let k2 = &k1 + random_spd(rng, 2);
        MultiplierSpec {
            channels: vec![
                ChannelMultiplier::Sector { k1, k2, weight: random_spd(rng, 2) },
                ChannelMultiplier::Lipschitz { gamma: 1.5 },
                ChannelMultiplier::Smooth { beta: 2.0, lambda: 0.3 },
            ],
        }
    }

    #[test]
    fn transform_dimensions_and_feedthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = mixed_model();
        let spec = mixed_spec(&mut rng);
        spec.validate(&model).unwrap();
        let tr = spec.transform(&model);
        assert_eq!(tr.m1, 5);
        assert_eq!(tr.t11.shape(), (5, 5));
        assert_eq!(tr.t22.shape(), (5, 5));
        // T22 inverse is consistent.
        assert_abs_diff_eq!((&tr.t22 * &tr.t22_inv - DMatrix::identity(5, 5)).amax(), 0.0, epsilon = 1e-14);
        // Identity-transform channels contribute nothing to W.
        let w_expected = &model.e * &tr.t22_inv * &tr.t21;
        assert_abs_diff_eq!((&tr.w - w_expected).amax(), 0.0, epsilon = 1e-14);
        let q_cols_ch2 = tr.t21.columns(2, 3);
        assert_abs_diff_eq!(q_cols_ch2.amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sector_reconstruction_identity() {
        // The transform route through N1 = N2 = lambda S reproduces the
        // closed-form sector matrix at scale 2 / lambda, exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let k1 = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let k2 = &k1 + random_spd(&mut rng, 3);
            let s = random_spd(&mut rng, 3);
            let lambda = rng.random_range(0.2..3.0);

            let ch = Channel::new(3, 3, Arc::new(|_t, _q: &DVector<f64>| DVector::zeros(3)));
            let model = LinearFractionalModel {
                a_o: DMatrix::zeros(1, 1),
                b_o: DMatrix::zeros(1, 1),
                f_o: DMatrix::zeros(1, 0),
                e: DMatrix::zeros(1, 3),
                c_o: DMatrix::zeros(3, 1),
                d_o: DMatrix::zeros(3, 1),
                g_o: DMatrix::zeros(3, 0),
                channels: vec![ch],
            };
            let spec = MultiplierSpec {
                channels: vec![ChannelMultiplier::Sector {
                    k1: k1.clone(),
                    k2: k2.clone(),
                    weight: s.clone(),
                }],
            };
            let tr = spec.transform(&model);
            let (n1, n2) = spec.n_values(&model, &[lambda], &[0.0]);
            let via_transform = quadratic_form(&tr, &n1, &n2, 3, 3).unwrap();
            let closed = sector_quadratic_form(&k1, &k2, &s, 2.0 / lambda).unwrap();
            assert_abs_diff_eq!((via_transform - closed).amax(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sector_form_nonnegative_inside_sector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k1 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let k2 = &k1 + random_spd(&mut rng, 2);
        let s = random_spd(&mut rng, 2);
        let m = sector_quadratic_form(&k1, &k2, &s, 0.8).unwrap();
        for _ in 0..200 {
            let dq = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let u: f64 = rng.random_range(0.0..1.0);
            let dp = (&k1 + (&k2 - &k1) * u) * &dq;
            let z = dq.clone().insert_rows(2, 2, 0.0) + dp.insert_rows(0, 2, 0.0);
            let val = (z.transpose() * &m * &z)[(0, 0)];
            assert!(val >= -1e-10, "sector form negative: {val}");
        }
        // A point outside the sector makes the form negative.
        let dq = dvector![1.0, 0.0];
        let dp = &k2 * &dq * 2.0 - &k1 * &dq;
        let z = dq.insert_rows(2, 2, 0.0) + dp.insert_rows(0, 2, 0.0);
        let val = (z.transpose() * &m * &z)[(0, 0)];
        assert!(val < 0.0);
    }

    #[test]
    fn gain_bound_form_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = mixed_model();
        let spec = MultiplierSpec {
            channels: vec![
                ChannelMultiplier::Lipschitz { gamma: 2.0 },
                ChannelMultiplier::Lipschitz { gamma: 0.5 },
                ChannelMultiplier::Lipschitz { gamma: 1.0 },
            ],
        };
        let tr = spec.transform(&model);
        let (n1, n2) = spec.n_values(&model, &[0.7, 1.3, 0.2], &[0.0, 0.0, 0.0]);
        let form = quadratic_form(&tr, &n1, &n2, 5, 5).unwrap();
        let gammas = [2.0, 0.5, 1.0];
        let dims = [2usize, 1, 2];
        for _ in 0..200 {
            // Per channel, draw dp with |dp_i| <= gamma_i |dq_i|.
            let mut dq = DVector::zeros(5);
            let mut dp = DVector::zeros(5);
            let mut off = 0;
            for (d, g) in dims.iter().zip(gammas) {
                let qi = DVector::from_fn(*d, |_, _| rng.random_range(-1.0..1.0f64));
                let mut pi = DVector::from_fn(*d, |_, _| rng.random_range(-1.0..1.0f64));
                let scale = rng.random_range(0.0..1.0) * g * qi.norm();
                if pi.norm() > 0.0 {
                    pi *= scale / pi.norm();
                }
                dq.rows_mut(off, *d).copy_from(&qi);
                dp.rows_mut(off, *d).copy_from(&pi);
                off += d;
            }
            let z = dq.clone().insert_rows(5, 5, 0.0) + dp.insert_rows(0, 5, 0.0);
            let val = (z.transpose() * &form * &z)[(0, 0)];
            assert!(val >= -1e-10, "gain form negative: {val}");
        }
        // Violating the gain on channel 1 flips the sign.
        let mut dq = DVector::zeros(5);
        dq[2] = 1.0;
        let mut dp = DVector::zeros(5);
        dp[2] = 1.0;
        let z = dq.insert_rows(5, 5, 0.0) + dp.insert_rows(0, 5, 0.0);
        let val = (z.transpose() * &form * &z)[(0, 0)];
        assert!(val < 0.0);
    }

    #[test]
    fn curvature_bound_form_sign() {
        // With slack s bounding the squared tube radius of dq, the residual
        // bound |dp| <= (beta/2) |dq|^2 keeps the form nonnegative.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = LinearFractionalModel {
            a_o: DMatrix::zeros(1, 1),
            b_o: DMatrix::zeros(1, 1),
            f_o: DMatrix::zeros(1, 0),
            e: DMatrix::zeros(1, 2),
            c_o: DMatrix::zeros(2, 1),
            d_o: DMatrix::zeros(2, 1),
            g_o: DMatrix::zeros(2, 0),
            channels: vec![Channel::new(2, 2, Arc::new(|_t, _q: &DVector<f64>| DVector::zeros(2)))],
        };
        let beta = 1.7;
        let spec = MultiplierSpec {
            channels: vec![ChannelMultiplier::Smooth { beta, lambda: 0.4 }],
        };
        let tr = spec.transform(&model);
        let s_slack = 2.0;
        let (n1, n2) = spec.n_values(&model, &[0.0], &[s_slack]);
        let form = quadratic_form(&tr, &n1, &n2, 2, 2).unwrap();
        for _ in 0..200 {
            let mut dq = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0f64));
            let r: f64 = rng.random_range(0.0..s_slack.sqrt());
            if dq.norm() > 0.0 {
                dq *= r / dq.norm();
            }
            let mut dp = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0f64));
            let cap = 0.5 * beta * dq.norm_squared();
            if dp.norm() > 0.0 {
                dp *= rng.random_range(0.0..1.0) * cap / dp.norm();
            }
            let z = dq.clone().insert_rows(2, 2, 0.0) + dp.insert_rows(0, 2, 0.0);
            let val = (z.transpose() * &form * &z)[(0, 0)];
            assert!(val >= -1e-10, "curvature form negative: {val}");
        }
    }

    #[test]
    fn expr_blocks_match_numeric_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = mixed_model();
        let spec = mixed_spec(&mut rng);
        let mut prog = ConicProgram::new();
        let vars = allocate_side_vars(&mut prog, &spec);
        assert!(vars.lambdas[0].is_some());
        assert!(vars.lambdas[1].is_some());
        assert!(vars.slacks[2].is_some());
        let mut x = vec![0.0; prog.num_vars()];
        x[vars.lambdas[0].unwrap().0] = 0.9;
        x[vars.lambdas[1].unwrap().0] = 1.7;
        x[vars.slacks[2].unwrap().0] = 0.6;
        let n1 = spec.n1_expr(&model, &vars).eval(&x);
        let n2 = spec.n2_expr(&model, &vars).eval(&x);
        let (n1_ref, n2_ref) = spec.n_values(&model, &[0.9, 1.7, 0.0], &[0.0, 0.0, 0.6]);
        assert_abs_diff_eq!((n1 - n1_ref).amax(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((n2 - n2_ref).amax(), 0.0, epsilon = 1e-14);
        assert_eq!(lambda_bound_rows(&vars).len(), 2);
    }

    #[test]
    fn validation_rejects_feedthrough_on_smooth_channels() {
        let mut model = mixed_model();
        let spec = MultiplierSpec {
            channels: vec![
                ChannelMultiplier::Lipschitz { gamma: 1.0 },
                ChannelMultiplier::Lipschitz { gamma: 1.0 },
                ChannelMultiplier::Smooth { beta: 1.0, lambda: 0.1 },
            ],
        };
        spec.validate(&model).unwrap();
        // Disturbance feedthrough into the smooth channel's q rows.
        model.g_o[(3, 0)] = 0.1;
        assert!(spec.validate(&model).is_err());
        model.g_o[(3, 0)] = 0.0;
        model.g_o[(0, 0)] = 0.1;
        spec.validate(&model).unwrap();
    }
}
