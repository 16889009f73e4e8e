//! Planar unicycle: position, heading, speed and turn-rate inputs.
//!
//! States `x = (p_x, p_y, theta)`, inputs `u = (v, omega)`:
//! `dp_x = v cos(theta)`, `dp_y = v sin(theta)`, `dtheta = omega`.
//! The two products `v cos(theta)` and `v sin(theta)` are carried as
//! separate scalar nonlinearity channels, both reading `q = (theta, v)`.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use std::sync::Arc;

use crate::discretization::TimeGrid;
use crate::error::SynthError;
use crate::lmi::FunnelDynamics;
use crate::model::{integrate_nominal, Channel, InputProfile, LinearFractionalModel, NominalTrajectory};
use crate::multipliers::{ChannelMultiplier, MultiplierSpec};
use crate::synthesis::{CostKind, InputBound, StateConstraint, SynthesisProblem};

/// Speed bound of the preset input box.
pub const V_MAX: f64 = 2.0;
/// Horizon of the preset scenario.
pub const T_FINAL: f64 = 5.0;

/// Nominal forward speed; solves for an endpoint of exactly `(5, 5, 0)`
/// together with [`turn_amplitude`].
pub const V_NOMINAL: f64 = 1.660592492619;

/// Amplitude of the nominal turn-rate sine; the heading peaks at `pi/2`
/// halfway, giving a symmetric S-curve from the origin to `(5, 5)`.
pub fn turn_amplitude() -> f64 {
    std::f64::consts::PI * std::f64::consts::PI / 10.0
}

fn channels() -> Vec<Channel> {
    let cos_ch = Channel::new(2, 1, Arc::new(|_t: f64, q: &DVector<f64>| dvector![q[1] * q[0].cos()]))
        .with_jacobian(Arc::new(|_t: f64, q: &DVector<f64>| {
            dmatrix![-q[1] * q[0].sin(), q[0].cos()]
        }));
    let sin_ch = Channel::new(2, 1, Arc::new(|_t: f64, q: &DVector<f64>| dvector![q[1] * q[0].sin()]))
        .with_jacobian(Arc::new(|_t: f64, q: &DVector<f64>| {
            dmatrix![q[1] * q[0].cos(), q[0].sin()]
        }));
    vec![cos_ch, sin_ch]
}

fn model_with_disturbance(n_w: usize, position_gain: f64) -> LinearFractionalModel {
    let mut f_o = DMatrix::zeros(3, n_w);
    if n_w == 2 {
        f_o[(0, 0)] = position_gain;
        f_o[(1, 1)] = position_gain;
    }
    LinearFractionalModel {
        a_o: DMatrix::zeros(3, 3),
        b_o: dmatrix![0.0, 0.0; 0.0, 0.0; 0.0, 1.0],
        f_o,
        e: dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0],
        c_o: dmatrix![0.0, 0.0, 1.0; 0.0, 0.0, 0.0; 0.0, 0.0, 1.0; 0.0, 0.0, 0.0],
        d_o: dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 0.0; 1.0, 0.0],
        g_o: DMatrix::zeros(4, n_w),
        channels: channels(),
    }
}

/// Undisturbed plant.
pub fn model() -> LinearFractionalModel {
    model_with_disturbance(0, 0.0)
}

/// Plant with an additive disturbance of the given gain on both position
/// rates.
pub fn disturbed_model(position_gain: f64) -> LinearFractionalModel {
    model_with_disturbance(2, position_gain)
}

/// Global increment bound per channel over `|v| <= v_max`: twice the sharp
/// Lipschitz constant of the channel map, covering the linearization
/// remainder from both ends.
pub fn lipschitz_gamma(v_max: f64) -> f64 {
    2.0 * v_max.max(1.0)
}

/// Global Jacobian increment slope per channel over `|v| <= v_max`.
pub fn lsmooth_beta(v_max: f64) -> f64 {
    v_max.max(std::f64::consts::SQRT_2)
}

/// Both channels under the increment-norm bound with the given constant.
pub fn lipschitz_multipliers(gamma: f64) -> MultiplierSpec {
    MultiplierSpec { channels: vec![ChannelMultiplier::Lipschitz { gamma }; 2] }
}

/// Both channels under the curvature bound with the given constants.
pub fn smooth_multipliers(beta: f64, lambda: f64) -> MultiplierSpec {
    MultiplierSpec { channels: vec![ChannelMultiplier::Smooth { beta, lambda }; 2] }
}

/// Nominal input profile: constant speed, sinusoidal turn rate.
pub fn nominal_input() -> InputProfile {
    let a = turn_amplitude();
    InputProfile::Analytic(Arc::new(move |t: f64| {
        dvector![V_NOMINAL, a * (2.0 * std::f64::consts::PI * t / T_FINAL).sin()]
    }))
}

/// Nominal trajectory from the origin for either plant variant.
pub fn nominal(model: &LinearFractionalModel, grid: &TimeGrid, substeps: usize) -> Result<NominalTrajectory, SynthError> {
    integrate_nominal(model, DVector::zeros(3), nominal_input(), &grid.times(), substeps)
}

/// The two circular obstacles of the preset scenario: centers and radii.
/// They flank the middle leg of the S-curve about one meter off the path.
pub fn obstacles() -> [(DVector<f64>, f64); 2] {
    [(dvector![1.5, 2.2], 0.5), (dvector![3.5, 2.8], 0.5)]
}

/// Obstacles as concave keep-out constraints `r^2 - |pos - c|^2 <= 0`.
pub fn obstacle_constraints() -> Vec<StateConstraint> {
    obstacles()
        .into_iter()
        .map(|(c, r)| {
            StateConstraint::Concave(Arc::new(move |x: &DVector<f64>| {
                let dx = x[0] - c[0];
                let dy = x[1] - c[1];
                r * r - dx * dx - dy * dy
            }))
        })
        .collect()
}

/// Preset input box `0 <= v <= 2`, `|omega| <= 2`.
pub fn input_box() -> Vec<InputBound> {
    InputBound::box_bounds(&dvector![0.0, -2.0], &dvector![2.0, 2.0])
}

/// Preset terminal certificate cap.
pub fn terminal_set() -> DMatrix<f64> {
    DMatrix::from_diagonal(&dvector![0.08, 0.08, 0.06])
}

/// Scenario parameters beyond the multiplier choice.
#[derive(Clone, Debug)]
pub struct UnicycleScenario {
    pub n: usize,
    pub checking_points: usize,
    pub dynamics: FunnelDynamics,
    /// Peak disturbance; positive values switch to the disturbed plant.
    pub w_max: f64,
    /// Disturbance gain on the position channels of the disturbed plant.
    pub position_gain: f64,
    pub alpha: f64,
}

impl Default for UnicycleScenario {
    fn default() -> Self {
        UnicycleScenario {
            n: 9,
            checking_points: 0,
            dynamics: FunnelDynamics::Free,
            w_max: 0.0,
            position_gain: 0.02,
            alpha: 0.0,
        }
    }
}

/// Full preset problem: S-curve nominal, obstacle corridor, input box,
/// terminal cap, entry-trace objective.
pub fn problem(multipliers: MultiplierSpec, scenario: &UnicycleScenario) -> Result<SynthesisProblem, SynthError> {
    let model = if scenario.w_max > 0.0 {
        disturbed_model(scenario.position_gain)
    } else {
        model()
    };
    let grid = TimeGrid::new(0.0, T_FINAL, scenario.n)?;
    let traj = nominal(&model, &grid, 100)?;
    Ok(SynthesisProblem {
        model,
        traj,
        grid,
        multipliers,
        dynamics: scenario.dynamics,
        alpha: scenario.alpha,
        w_max: scenario.w_max,
        state_constraints: obstacle_constraints(),
        input_bounds: input_box(),
        terminal_set: Some(terminal_set()),
        cost: CostKind::TraceInverse,
        cost_weight: None,
        checking_points: scenario.checking_points,
        slope_ordering: scenario.dynamics == FunnelDynamics::Free,
        substeps: 50,
    })
}
