//! Plant models in linear fractional form and nominal trajectories.
//!
//! The dynamics are written as a linear core interconnected with stacked
//! nonlinearity channels:
//!
//! ```text
//!   dx/dt = A_o x + B_o u + F_o w + E phi(t, q),   q = C_o x + D_o u + G_o w
//! ```
//!
//! where `phi` maps the channel input `q` (dimension `n_q`) to the channel
//! output `p` (dimension `n_p`) blockwise: channel `i` reads only its own
//! slice of `q` and writes only its own slice of `p`. Every model-specific
//! quantity the synthesis needs (closed-loop Jacobians, channel residuals,
//! nominal rollouts) is derived from this one structure.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::SynthError;
use crate::linalg::rk4_step_vec;

/// Function signature of one nonlinearity channel, `(t, q_i) -> p_i`.
pub type ChannelFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Analytic channel Jacobian, `(t, q_i) -> d phi_i / d q_i`.
pub type ChannelJacFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// One nonlinearity channel with an optional analytic Jacobian. Without one,
/// Jacobians come from central differences with a step scaled to the
/// argument's magnitude.
#[derive(Clone)]
pub struct Channel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub map: ChannelFn,
    pub jacobian: Option<ChannelJacFn>,
}

impl Channel {
    pub fn new(input_dim: usize, output_dim: usize, map: ChannelFn) -> Self {
        Channel { input_dim, output_dim, map, jacobian: None }
    }

    pub fn with_jacobian(mut self, jac: ChannelJacFn) -> Self {
        self.jacobian = Some(jac);
        self
    }

    pub fn eval(&self, t: f64, q: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(q.len(), self.input_dim);
        (self.map)(t, q)
    }

    pub fn jac(&self, t: f64, q: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.jacobian {
            return j(t, q);
        }
        let h = 1e-6 * q.norm().max(1.0);
        let mut out = DMatrix::zeros(self.output_dim, self.input_dim);
        let mut qp = q.clone();
        for k in 0..self.input_dim {
            qp[k] = q[k] + h;
            let fp = (self.map)(t, &qp);
            qp[k] = q[k] - h;
            let fm = (self.map)(t, &qp);
            qp[k] = q[k];
            out.set_column(k, &((fp - fm) / (2.0 * h)));
        }
        out
    }
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

/// Linearization of the interconnection along a nominal point: the matrices
/// of the error dynamics `d eta/dt = A eta + B xi + F w + E dp` with channel
/// deviation input `dq = C_o eta + D_o xi + G_o w`.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    /// Block-diagonal channel Jacobian at the nominal channel input.
    pub phi_prime: DMatrix<f64>,
    /// Nominal channel input where the Jacobian was taken.
    pub q_bar: DVector<f64>,
}

/// Plant in linear fractional form. The core matrices are constant; all time
/// variation enters through the channels and the nominal trajectory.
#[derive(Clone, Debug)]
pub struct LinearFractionalModel {
    pub a_o: DMatrix<f64>,
    pub b_o: DMatrix<f64>,
    pub f_o: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub c_o: DMatrix<f64>,
    pub d_o: DMatrix<f64>,
    pub g_o: DMatrix<f64>,
    pub channels: Vec<Channel>,
}

impl LinearFractionalModel {
    /// A purely linear plant (no channels, empty `E`).
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>, f: DMatrix<f64>) -> Self {
        let n_x = a.nrows();
        LinearFractionalModel {
            e: DMatrix::zeros(n_x, 0),
            c_o: DMatrix::zeros(0, n_x),
            d_o: DMatrix::zeros(0, b.ncols()),
            g_o: DMatrix::zeros(0, f.ncols()),
            a_o: a,
            b_o: b,
            f_o: f,
            channels: Vec::new(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.a_o.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_o.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.f_o.ncols()
    }

    pub fn n_p(&self) -> usize {
        self.e.ncols()
    }

    pub fn n_q(&self) -> usize {
        self.c_o.nrows()
    }

    /// Row ranges of each channel inside the stacked `q` vector.
    pub fn q_slices(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.channels.len());
        let mut off = 0;
        for ch in &self.channels {
            out.push(off..off + ch.input_dim);
            off += ch.input_dim;
        }
        out
    }

    /// Row ranges of each channel inside the stacked `p` vector.
    pub fn p_slices(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.channels.len());
        let mut off = 0;
        for ch in &self.channels {
            out.push(off..off + ch.output_dim);
            off += ch.output_dim;
        }
        out
    }

    /// Check that all matrix dimensions agree with each other and with the
    /// channel stack.
    pub fn validate(&self) -> Result<(), SynthError> {
        let (n_x, n_u, n_w) = (self.n_x(), self.n_u(), self.n_w());
        let n_q: usize = self.channels.iter().map(|c| c.input_dim).sum();
        let n_p: usize = self.channels.iter().map(|c| c.output_dim).sum();
        let checks: [(&str, (usize, usize), (usize, usize)); 7] = [
            ("A_o", (n_x, n_x), self.a_o.shape()),
            ("B_o", (n_x, n_u), self.b_o.shape()),
            ("F_o", (n_x, n_w), self.f_o.shape()),
            ("E", (n_x, n_p), self.e.shape()),
            ("C_o", (n_q, n_x), self.c_o.shape()),
            ("D_o", (n_q, n_u), self.d_o.shape()),
            ("G_o", (n_q, n_w), self.g_o.shape()),
        ];
        for (name, want, got) in checks {
            if want != got {
                return Err(SynthError::dims(
                    name,
                    format!("{}x{}", want.0, want.1),
                    format!("{}x{}", got.0, got.1),
                ));
            }
        }
        Ok(())
    }

    /// Stacked channel output at `(t, q)`.
    pub fn phi(&self, t: f64, q: &DVector<f64>) -> DVector<f64> {
        let mut p = DVector::zeros(self.n_p());
        let mut qo = 0;
        let mut po = 0;
        for ch in &self.channels {
            let qi = q.rows(qo, ch.input_dim).into_owned();
            p.rows_mut(po, ch.output_dim).copy_from(&ch.eval(t, &qi));
            qo += ch.input_dim;
            po += ch.output_dim;
        }
        p
    }

    /// Block-diagonal stacked channel Jacobian at `(t, q)`.
    pub fn phi_jacobian(&self, t: f64, q: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n_p(), self.n_q());
        let mut qo = 0;
        let mut po = 0;
        for ch in &self.channels {
            let qi = q.rows(qo, ch.input_dim).into_owned();
            j.view_mut((po, qo), (ch.output_dim, ch.input_dim))
                .copy_from(&ch.jac(t, &qi));
            qo += ch.input_dim;
            po += ch.output_dim;
        }
        j
    }

    /// Channel input at a state, input, and disturbance.
    pub fn channel_input(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.c_o * x + &self.d_o * u + &self.g_o * w
    }

    /// Full nonlinear vector field.
    pub fn dynamics(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let q = self.channel_input(x, u, w);
        &self.a_o * x + &self.b_o * u + &self.f_o * w + &self.e * self.phi(t, &q)
    }

    /// Error-dynamics matrices along a nominal point (disturbance zero): the
    /// channel Jacobian is absorbed into the linear core, leaving the
    /// second-order channel residual as the only uncertainty.
    pub fn linearize(&self, t: f64, x_bar: &DVector<f64>, u_bar: &DVector<f64>) -> Linearization {
        let w0 = DVector::zeros(self.n_w());
        let q_bar = self.channel_input(x_bar, u_bar, &w0);
        let jp = self.phi_jacobian(t, &q_bar);
        let ejp = &self.e * &jp;
        Linearization {
            a: &self.a_o + &ejp * &self.c_o,
            b: &self.b_o + &ejp * &self.d_o,
            f: &self.f_o + &ejp * &self.g_o,
            phi_prime: jp,
            q_bar,
        }
    }

    /// Second-order channel residual `phi(q) - phi(q_bar) - phi'(q_bar) dq`
    /// for a deviation `dq = q - q_bar`.
    pub fn channel_residual(&self, t: f64, q: &DVector<f64>, q_bar: &DVector<f64>) -> DVector<f64> {
        self.phi(t, q) - self.phi(t, q_bar) - self.phi_jacobian(t, q_bar) * (q - q_bar)
    }
}

/// Open-loop input signal used to integrate and later replay a nominal
/// trajectory.
#[derive(Clone)]
pub enum InputProfile {
    /// Linear interpolation between values given at the node times.
    FirstOrderHold(Vec<DVector<f64>>),
    /// Arbitrary time function.
    Analytic(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl std::fmt::Debug for InputProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputProfile::FirstOrderHold(v) => f.debug_tuple("FirstOrderHold").field(&v.len()).finish(),
            InputProfile::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

/// One integration interval's dense output: substep times, states, and state
/// derivatives, kept for cubic Hermite interpolation between substeps.
#[derive(Clone, Debug)]
struct FineSegment {
    ts: Vec<f64>,
    xs: Vec<DVector<f64>>,
    dxs: Vec<DVector<f64>>,
}

/// A nominal trajectory: node times and states plus a dense interpolant and
/// the input profile that produced it.
#[derive(Clone, Debug)]
pub struct NominalTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub input: InputProfile,
    fine: Vec<FineSegment>,
}

impl NominalTrajectory {
    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn tf(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn num_nodes(&self) -> usize {
        self.times.len()
    }

    fn check_horizon(&self, t: f64) -> Result<f64, SynthError> {
        let (t0, tf) = (self.t0(), self.tf());
        let slack = 1e-9 * (tf - t0).max(1.0);
        if t < t0 - slack || t > tf + slack {
            return Err(SynthError::OutOfHorizon { t, t0, tf });
        }
        Ok(t.clamp(t0, tf))
    }

    /// Interval index holding `t` (last interval at `tf`).
    fn interval_of(&self, t: f64) -> usize {
        match self.times.binary_search_by(|tk| tk.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(self.times.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.times.len() - 2),
        }
    }

    /// Nominal input at `t`.
    pub fn input_at(&self, t: f64) -> Result<DVector<f64>, SynthError> {
        let t = self.check_horizon(t)?;
        match &self.input {
            InputProfile::Analytic(f) => Ok(f(t)),
            InputProfile::FirstOrderHold(us) => {
                let k = self.interval_of(t);
                let (tk, tk1) = (self.times[k], self.times[k + 1]);
                let lam = (t - tk) / (tk1 - tk);
                Ok(&us[k] * (1.0 - lam) + &us[k + 1] * lam)
            }
        }
    }

    /// Nominal state at `t`, cubic Hermite between stored substeps.
    pub fn state_at(&self, t: f64) -> Result<DVector<f64>, SynthError> {
        let t = self.check_horizon(t)?;
        let k = self.interval_of(t);
        let seg = &self.fine[k];
        let j = match seg.ts.binary_search_by(|tj| tj.partial_cmp(&t).unwrap()) {
            Ok(j) => return Ok(seg.xs[j].clone()),
            Err(j) => j.saturating_sub(1).min(seg.ts.len() - 2),
        };
        let (ta, tb) = (seg.ts[j], seg.ts[j + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(&seg.xs[j] * h00
            + &seg.dxs[j] * (h10 * h)
            + &seg.xs[j + 1] * h01
            + &seg.dxs[j + 1] * (h11 * h))
    }

    /// Error-dynamics matrices along the trajectory at `t`.
    pub fn linearize_at(&self, model: &LinearFractionalModel, t: f64) -> Result<Linearization, SynthError> {
        let x = self.state_at(t)?;
        let u = self.input_at(t)?;
        Ok(model.linearize(t, &x, &u))
    }
}

/// Integrate the undisturbed plant from `x0` over the node times with the
/// given input, using fixed-step RK4 with `substeps` steps per interval.
/// Node times must be strictly increasing.
pub fn integrate_nominal(
    model: &LinearFractionalModel,
    x0: DVector<f64>,
    input: InputProfile,
    times: &[f64],
    substeps: usize,
) -> Result<NominalTrajectory, SynthError> {
    model.validate()?;
    if times.len() < 2 {
        return Err(SynthError::InvalidSetup("need at least two node times".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SynthError::InvalidSetup("node times must be strictly increasing".into()));
    }
    if x0.len() != model.n_x() {
        return Err(SynthError::dims("x0", model.n_x().to_string(), x0.len().to_string()));
    }
    if substeps == 0 {
        return Err(SynthError::InvalidSetup("substeps must be positive".into()));
    }

    // Input lookup valid during integration, before the trajectory exists.
    let input_at = |t: f64| -> DVector<f64> {
        match &input {
            InputProfile::Analytic(f) => f(t),
            InputProfile::FirstOrderHold(us) => {
                let k = times
                    .windows(2)
                    .position(|w| t <= w[1])
                    .unwrap_or(times.len() - 2);
                let lam = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);
                &us[k] * (1.0 - lam) + &us[k + 1] * lam
            }
        }
    };
    if let InputProfile::FirstOrderHold(us) = &input {
        if us.len() != times.len() {
            return Err(SynthError::dims("input nodes", times.len().to_string(), us.len().to_string()));
        }
    }

    let w0 = DVector::zeros(model.n_w());
    let field = |t: f64, x: &DVector<f64>| model.dynamics(t, x, &input_at(t), &w0);

    let mut states = Vec::with_capacity(times.len());
    let mut fine = Vec::with_capacity(times.len() - 1);
    let mut x = x0;
    states.push(x.clone());
    for k in 0..times.len() - 1 {
        let h = (times[k + 1] - times[k]) / substeps as f64;
        let mut ts = Vec::with_capacity(substeps + 1);
        let mut xs = Vec::with_capacity(substeps + 1);
        let mut dxs = Vec::with_capacity(substeps + 1);
        let mut t = times[k];
        ts.push(t);
        xs.push(x.clone());
        dxs.push(field(t, &x));
        for _ in 0..substeps {
            x = rk4_step_vec(&field, t, &x, h);
            t += h;
            ts.push(t);
            xs.push(x.clone());
            dxs.push(field(t, &x));
        }
        states.push(x.clone());
        fine.push(FineSegment { ts, xs, dxs });
    }

    Ok(NominalTrajectory { times: times.to_vec(), states, input, fine })
}

/// Per-channel incremental gain and curvature bounds used to size the
/// multipliers, estimated by sampling if no closed form is supplied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConstants {
    /// Bound on `|phi(q1) - phi(q2)| / |q1 - q2|`.
    pub gamma: f64,
    /// Bound on `|phi'(q1) - phi'(q2)| / |q1 - q2|` (spectral norm).
    pub beta: f64,
}

/// Estimate channel constants by sampling argument pairs in a ball of the
/// given radius around the nominal channel inputs, inflated by a safety
/// factor. Prefer closed-form bounds where available; this is a fallback
/// and a cross-check.
pub fn estimate_channel_constants(
    model: &LinearFractionalModel,
    traj: &NominalTrajectory,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<ChannelConstants>, SynthError> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let safety = 1.1;
    let n_t = 16usize;
    let (t0, tf) = (traj.t0(), traj.tf());
    let slices = model.q_slices();
    let mut out = Vec::with_capacity(model.channels.len());
    for (ci, ch) in model.channels.iter().enumerate() {
        let mut gamma: f64 = 0.0;
        let mut beta: f64 = 0.0;
        for it in 0..n_t {
            let t = t0 + (tf - t0) * it as f64 / (n_t - 1) as f64;
            let x = traj.state_at(t)?;
            let u = traj.input_at(t)?;
            let q_bar = model.channel_input(&x, &u, &DVector::zeros(model.n_w()));
            let qc = q_bar.rows(slices[ci].start, ch.input_dim).into_owned();
            for _ in 0..samples {
                let mut draw = || {
                    let d = DVector::from_fn(ch.input_dim, |_, _| rng.random_range(-1.0..1.0));
                    &qc + d * radius
                };
                let (q1, q2) = (draw(), draw());
                let dq = (&q1 - &q2).norm();
                if dq < 1e-12 {
                    continue;
                }
                let dphi = (ch.eval(t, &q1) - ch.eval(t, &q2)).norm();
                gamma = gamma.max(dphi / dq);
                let djac = crate::linalg::spectral_norm(&(ch.jac(t, &q1) - ch.jac(t, &q2)));
                beta = beta.max(djac / dq);
            }
        }
        out.push(ChannelConstants { gamma: gamma * safety, beta: beta * safety });
    }
    Ok(out)
}
