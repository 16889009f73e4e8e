//! Six-degree-of-freedom quadrotor with ZYX Euler attitude.
//!
//! States `x = (r, v, Phi, Omega)`: inertial position and velocity, Euler
//! angles `(roll, pitch, yaw)`, body rates. Inputs `u = (F_z, tau)`:
//! collective thrust along the body z axis and body torques.
//!
//! Three nonlinearity channels cover the nonlinear parts of the velocity,
//! attitude-kinematics, and body-rate equations; the roll rate's direct
//! `Omega_1` term and the torque map `J^-1 tau` stay in the linear part.
//! The nominal trajectory is a star-shaped loop recovered from the path by
//! differential flatness at zero yaw.

use nalgebra::{dvector, DMatrix, DVector, Matrix3, Vector3};
use std::sync::Arc;

use crate::discretization::TimeGrid;
use crate::error::SynthError;
use crate::lmi::FunnelDynamics;
use crate::model::{integrate_nominal, Channel, InputProfile, LinearFractionalModel, NominalTrajectory};
use crate::multipliers::{ChannelMultiplier, MultiplierSpec};
use crate::synthesis::{CostKind, InputBound, SynthesisProblem};

pub const MASS: f64 = 1.325;
pub const GRAVITY: f64 = 9.81;
/// Loop time of the preset star path.
pub const T_FINAL: f64 = 15.78;

pub fn inertia() -> Vector3<f64> {
    Vector3::new(0.03843, 0.02719, 0.060528)
}

/// Thrust direction in the inertial frame for ZYX angles `(roll, pitch,
/// yaw)`: the body z axis.
fn thrust_axis(phi: f64, theta: f64, psi: f64) -> Vector3<f64> {
    let (sr, cr) = (phi.sin(), phi.cos());
    let (st, ct) = (theta.sin(), theta.cos());
    let (sy, cy) = (psi.sin(), psi.cos());
    Vector3::new(cr * st * cy + sr * sy, cr * st * sy - sr * cy, cr * ct)
}

fn channels() -> Vec<Channel> {
    let m = MASS;
    // q = (roll, pitch, yaw, F_z) -> specific force on the velocity states.
    let thrust = Channel::new(
        4,
        3,
        Arc::new(move |_t: f64, q: &DVector<f64>| {
            let n = thrust_axis(q[0], q[1], q[2]);
            let p = n * (q[3] / m) - Vector3::new(0.0, 0.0, GRAVITY);
            dvector![p[0], p[1], p[2]]
        }),
    )
    .with_jacobian(Arc::new(move |_t: f64, q: &DVector<f64>| {
        let (phi, theta, psi, fz) = (q[0], q[1], q[2], q[3]);
        let (sr, cr) = (phi.sin(), phi.cos());
        let (st, ct) = (theta.sin(), theta.cos());
        let (sy, cy) = (psi.sin(), psi.cos());
        let s = fz / m;
        let mut j = DMatrix::zeros(3, 4);
        j[(0, 0)] = s * (-sr * st * cy + cr * sy);
        j[(1, 0)] = s * (-sr * st * sy - cr * cy);
        j[(2, 0)] = s * (-sr * ct);
        j[(0, 1)] = s * (cr * ct * cy);
        j[(1, 1)] = s * (cr * ct * sy);
        j[(2, 1)] = s * (-cr * st);
        j[(0, 2)] = s * (-cr * st * sy + sr * cy);
        j[(1, 2)] = s * (cr * st * cy + sr * sy);
        j[(2, 2)] = 0.0;
        let n = thrust_axis(phi, theta, psi);
        j[(0, 3)] = n[0] / m;
        j[(1, 3)] = n[1] / m;
        j[(2, 3)] = n[2] / m;
        j
    }));

    // q = (roll, pitch, Omega_2, Omega_3) -> Euler-angle rates beyond the
    // direct roll-rate term.
    let kinematics = Channel::new(
        4,
        3,
        Arc::new(|_t: f64, q: &DVector<f64>| {
            let (phi, theta, w2, w3) = (q[0], q[1], q[2], q[3]);
            let (sr, cr) = (phi.sin(), phi.cos());
            let (tt, ct) = (theta.tan(), theta.cos());
            let sigma = sr * w2 + cr * w3;
            dvector![tt * sigma, cr * w2 - sr * w3, sigma / ct]
        }),
    )
    .with_jacobian(Arc::new(|_t: f64, q: &DVector<f64>| {
        let (phi, theta, w2, w3) = (q[0], q[1], q[2], q[3]);
        let (sr, cr) = (phi.sin(), phi.cos());
        let (tt, ct) = (theta.tan(), theta.cos());
        let sigma = sr * w2 + cr * w3;
        let dsigma = cr * w2 - sr * w3;
        let mut j = DMatrix::zeros(3, 4);
        j[(0, 0)] = tt * dsigma;
        j[(1, 0)] = -sigma;
        j[(2, 0)] = dsigma / ct;
        j[(0, 1)] = sigma / (ct * ct);
        j[(1, 1)] = 0.0;
        j[(2, 1)] = sigma * tt / ct;
        j[(0, 2)] = tt * sr;
        j[(1, 2)] = cr;
        j[(2, 2)] = sr / ct;
        j[(0, 3)] = tt * cr;
        j[(1, 3)] = -sr;
        j[(2, 3)] = cr / ct;
        j
    }));

    // q = Omega -> gyroscopic body-rate coupling.
    let j_diag = inertia();
    let gyro = Channel::new(
        3,
        3,
        Arc::new(move |_t: f64, q: &DVector<f64>| {
            let w = Vector3::new(q[0], q[1], q[2]);
            let p = -j_diag.map(|v| 1.0 / v).component_mul(&w.cross(&j_diag.component_mul(&w)));
            dvector![p[0], p[1], p[2]]
        }),
    )
    .with_jacobian(Arc::new(move |_t: f64, q: &DVector<f64>| {
        let w = Vector3::new(q[0], q[1], q[2]);
        let jw = j_diag.component_mul(&w);
        let d = Matrix3::from_diagonal(&j_diag);
        let grad = skew(&w) * d - skew(&jw);
        let j_inv = Matrix3::from_diagonal(&j_diag.map(|v| 1.0 / v));
        let full = -j_inv * grad;
        DMatrix::from_fn(3, 3, |r, c| full[(r, c)])
    }));

    vec![thrust, kinematics, gyro]
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// The twelve-state plant with three nonlinearity channels.
pub fn model() -> LinearFractionalModel {
    let mut a_o = DMatrix::zeros(12, 12);
    for i in 0..3 {
        a_o[(i, 3 + i)] = 1.0;
    }
    // Roll rate enters the roll-angle equation directly.
    a_o[(6, 9)] = 1.0;

    let mut b_o = DMatrix::zeros(12, 4);
    let j_diag = inertia();
    for i in 0..3 {
        b_o[(9 + i, 1 + i)] = 1.0 / j_diag[i];
    }

    let mut e = DMatrix::zeros(12, 9);
    for i in 0..9 {
        e[(3 + i, i)] = 1.0;
    }

    // Channel reads: q1 = (Phi, F_z), q2 = (roll, pitch, Omega_2, Omega_3),
    // q3 = Omega.
    let mut c_o = DMatrix::zeros(11, 12);
    let mut d_o = DMatrix::zeros(11, 4);
    for i in 0..3 {
        c_o[(i, 6 + i)] = 1.0;
    }
    d_o[(3, 0)] = 1.0;
    c_o[(4, 6)] = 1.0;
    c_o[(5, 7)] = 1.0;
    c_o[(6, 10)] = 1.0;
    c_o[(7, 11)] = 1.0;
    for i in 0..3 {
        c_o[(8 + i, 9 + i)] = 1.0;
    }

    LinearFractionalModel {
        a_o,
        b_o,
        f_o: DMatrix::zeros(12, 0),
        e,
        c_o,
        d_o,
        g_o: DMatrix::zeros(11, 0),
        channels: channels(),
    }
}

/// Preset input box: thrust in `[0, 18]`, torques within `0.1`.
pub fn input_box() -> Vec<InputBound> {
    InputBound::box_bounds(&dvector![0.0, -0.1, -0.1, -0.1], &dvector![18.0, 0.1, 0.1, 0.1])
}

/// Preset terminal certificate: position within 0.2, velocity within 0.1,
/// angles within five degrees, rates within two degrees per second.
pub fn terminal_set() -> DMatrix<f64> {
    let deg = std::f64::consts::PI / 180.0;
    let mut d = DVector::zeros(12);
    for i in 0..3 {
        d[i] = 0.2 * 0.2;
        d[3 + i] = 0.1 * 0.1;
        d[6 + i] = (5.0 * deg) * (5.0 * deg);
        d[9 + i] = (2.0 * deg) * (2.0 * deg);
    }
    DMatrix::from_diagonal(&d)
}

/// Curvature bounds of the three channels, estimated by sampling over the
/// flight envelope.
pub fn channel_betas() -> [f64; 3] {
    [20.0, 5.0, 1.0]
}

/// All three channels under the curvature bound with a common fixed scale.
pub fn smooth_multipliers(lambda: f64) -> MultiplierSpec {
    MultiplierSpec {
        channels: channel_betas()
            .into_iter()
            .map(|beta| ChannelMultiplier::Smooth { beta, lambda })
            .collect(),
    }
}

/// Star-path geometry: a five-lobed radius ripple around a circle, plus a
/// gentle altitude wave. Starts and ends at the same point after one loop.
struct StarPath {
    center: (f64, f64),
    radius: f64,
    ripple: f64,
    lobes: f64,
    phase: f64,
    z0: f64,
    z_wave: f64,
    omega: f64,
}

impl StarPath {
    fn preset() -> StarPath {
        let omega = 2.0 * std::f64::consts::PI / T_FINAL;
        // Start near (-3, 4) at the tip of a lobe.
        let phase = (1.5f64).atan2(-2.0);
        let reach: f64 = (2.0f64 * 2.0 + 1.5 * 1.5).sqrt();
        let ripple = 0.12;
        StarPath {
            center: (-1.0, 2.5),
            radius: reach / (1.0 + ripple),
            ripple,
            lobes: 5.0,
            phase,
            z0: 1.0,
            z_wave: 0.2,
            omega,
        }
    }

    /// Position and its first three time derivatives.
    fn derivatives(&self, t: f64) -> [Vector3<f64>; 4] {
        let w = self.omega;
        let lw = self.lobes * w;
        let ang = w * t + self.phase;
        let (sa, ca) = (ang.sin(), ang.cos());
        let (sl, cl) = ((self.lobes * w * t).sin(), (self.lobes * w * t).cos());
        let ar = self.radius * self.ripple;
        let rad = self.radius + ar * cl;
        let rad1 = -ar * lw * sl;
        let rad2 = -ar * lw * lw * cl;
        let rad3 = ar * lw * lw * lw * sl;

        let x = self.center.0 + rad * ca;
        let x1 = rad1 * ca - rad * w * sa;
        let x2 = rad2 * ca - 2.0 * rad1 * w * sa - rad * w * w * ca;
        let x3 = rad3 * ca - 3.0 * rad2 * w * sa - 3.0 * rad1 * w * w * ca + rad * w * w * w * sa;

        let y = self.center.1 + rad * sa;
        let y1 = rad1 * sa + rad * w * ca;
        let y2 = rad2 * sa + 2.0 * rad1 * w * ca - rad * w * w * sa;
        let y3 = rad3 * sa + 3.0 * rad2 * w * ca - 3.0 * rad1 * w * w * sa - rad * w * w * w * ca;

        let zw = w;
        let z = self.z0 + self.z_wave * (zw * t).sin();
        let z1 = self.z_wave * zw * (zw * t).cos();
        let z2 = -self.z_wave * zw * zw * (zw * t).sin();
        let z3 = -self.z_wave * zw * zw * zw * (zw * t).cos();

        [
            Vector3::new(x, y, z),
            Vector3::new(x1, y1, z1),
            Vector3::new(x2, y2, z2),
            Vector3::new(x3, y3, z3),
        ]
    }
}

/// Attitude, thrust, and their rates along the path by differential
/// flatness at zero yaw.
fn flat_state(path: &StarPath, t: f64) -> (Vector3<f64>, Vector3<f64>, f64) {
    let d = path.derivatives(t);
    let v = d[2] + Vector3::new(0.0, 0.0, GRAVITY);
    let speed = v.norm();
    let n = v / speed;
    let fz = MASS * speed;

    let phi = (-n[1]).asin();
    let theta = n[0].atan2(n[2]);

    // Euler-angle rates from the normalized thrust direction's rate.
    let vdot = d[3];
    let ndot = (vdot - n * n.dot(&vdot)) / speed;
    let phi_dot = -ndot[1] / (1.0 - n[1] * n[1]).sqrt();
    let theta_dot = (ndot[0] * n[2] - n[0] * ndot[2]) / (n[0] * n[0] + n[2] * n[2]);

    let eul = Vector3::new(phi, theta, 0.0);
    let eul_rate = Vector3::new(phi_dot, theta_dot, 0.0);
    (eul, eul_rate, fz)
}

/// Body rates from Euler angles and their rates (ZYX convention).
fn body_rates(eul: &Vector3<f64>, eul_rate: &Vector3<f64>) -> Vector3<f64> {
    let (sr, cr) = (eul[0].sin(), eul[0].cos());
    let (st, ct) = (eul[1].sin(), eul[1].cos());
    let map = Matrix3::new(1.0, 0.0, -st, 0.0, cr, sr * ct, 0.0, -sr, cr * ct);
    map * eul_rate
}

fn omega_at(path: &StarPath, t: f64) -> Vector3<f64> {
    let (eul, eul_rate, _) = flat_state(path, t);
    body_rates(&eul, &eul_rate)
}

/// Nominal input over the loop: thrust from the flat state, torques from
/// the body-rate derivative (central difference on the analytic rates).
pub fn nominal_input() -> InputProfile {
    let path = Arc::new(StarPath::preset());
    let j_diag = inertia();
    InputProfile::Analytic(Arc::new(move |t: f64| {
        let (_, _, fz) = flat_state(&path, t);
        let h = 1e-5;
        let omega_dot = (omega_at(&path, t + h) - omega_at(&path, t - h)) / (2.0 * h);
        let omega = omega_at(&path, t);
        let tau = j_diag.component_mul(&omega_dot) + omega.cross(&j_diag.component_mul(&omega));
        dvector![fz, tau[0], tau[1], tau[2]]
    }))
}

/// Exact state on the star path at time `t`.
pub fn path_state(t: f64) -> DVector<f64> {
    let path = StarPath::preset();
    let d = path.derivatives(t);
    let (eul, _, _) = flat_state(&path, t);
    let omega = omega_at(&path, t);
    let mut x = DVector::zeros(12);
    for i in 0..3 {
        x[i] = d[0][i];
        x[3 + i] = d[1][i];
        x[6 + i] = eul[i];
        x[9 + i] = omega[i];
    }
    x
}

/// Nominal trajectory: one star loop, integrated from the flat initial
/// state under the flatness-recovered inputs.
pub fn nominal(model: &LinearFractionalModel, grid: &TimeGrid, substeps: usize) -> Result<NominalTrajectory, SynthError> {
    integrate_nominal(model, path_state(0.0), nominal_input(), &grid.times(), substeps)
}

/// Scenario parameters of the preset quadrotor problem.
#[derive(Clone, Debug)]
pub struct QuadrotorScenario {
    pub n: usize,
    pub checking_points: usize,
    /// Fixed curvature-multiplier scale shared by the three channels.
    pub lambda: f64,
}

impl Default for QuadrotorScenario {
    fn default() -> Self {
        QuadrotorScenario { n: 15, checking_points: 0, lambda: 0.3 }
    }
}

/// Full preset problem: star loop, input box, terminal cap, entry-trace
/// objective, undisturbed.
pub fn problem(scenario: &QuadrotorScenario) -> Result<SynthesisProblem, SynthError> {
    let model = model();
    let grid = TimeGrid::new(0.0, T_FINAL, scenario.n)?;
    let traj = nominal(&model, &grid, 100)?;
    Ok(SynthesisProblem {
        model,
        traj,
        grid,
        multipliers: smooth_multipliers(scenario.lambda),
        dynamics: FunnelDynamics::Free,
        alpha: 0.0,
        w_max: 0.0,
        state_constraints: vec![],
        input_bounds: input_box(),
        terminal_set: Some(terminal_set()),
        cost: CostKind::TraceInverse,
        cost_weight: None,
        checking_points: scenario.checking_points,
        slope_ordering: true,
        substeps: 50,
    })
}
