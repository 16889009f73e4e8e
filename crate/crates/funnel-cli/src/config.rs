//! JSON problem configuration: schema, validation with explicit field
//! paths, and conversion into a synthesis problem.
//!
//! Every rejection names the offending field as a JSON-pointer-style path
//! such as `/model/custom/a_o`. Dimension cross-checks all run here,
//! before any assembly work starts.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use funnel_synth::ctcs::{all_family_constraints, CtcsConstraint, ScvxConfig};
use funnel_synth::discretization::TimeGrid;
use funnel_synth::error::SynthError;
use funnel_synth::lmi::FunnelDynamics;
use funnel_synth::model::{
    estimate_channel_constants, integrate_nominal, Channel, InputProfile, LinearFractionalModel,
};
use funnel_synth::multipliers::{ChannelMultiplier, MultiplierSpec};
use funnel_synth::synthesis::{CostKind, InputBound, StateConstraint, SynthesisProblem};
use funnel_synth::systems::{quadrotor, unicycle};
use funnel_synth::verify::DisturbancePolicy;

/// A config rejection, pointing at the field that caused it.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }
}

/// Row-major matrix literal as it appears in JSON.
pub type MatrixRows = Vec<Vec<f64>>;

/// Top-level problem document. Field names are the schema; unknown keys
/// are rejected with their path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelConfig,
    pub horizon: HorizonConfig,
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    /// Circular keep-out regions on the first two state coordinates;
    /// `None` keeps a builtin model's preset course.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<Vec<ObstacleConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_bounds: Option<InputBoundsConfig>,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default = "default_dynamics")]
    pub dynamics: FunnelDynamics,
    pub alpha: AlphaConfig,
    /// Terminal certificate cap `Q_f`; `None` keeps a builtin preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<MatrixRows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scvx: Option<ScvxSettings>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default = "default_dense_grid")]
    pub dense_grid: usize,
    #[serde(default = "default_sim_steps")]
    pub sim_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_dynamics() -> FunnelDynamics {
    FunnelDynamics::Free
}
fn default_rollouts() -> usize {
    100
}
fn default_dense_grid() -> usize {
    100
}
fn default_sim_steps() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelConfig {
    Builtin(BuiltinModel),
    Custom(Box<CustomModel>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    Unicycle,
    Quadrotor,
}

/// User-supplied linear-fractional plant. Matrices are row-major nested
/// arrays; the nonlinearity is one scalar map per channel drawn from a
/// named catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub a_o: MatrixRows,
    pub b_o: MatrixRows,
    /// Disturbance input map; omit for an undisturbed plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_o: Option<MatrixRows>,
    pub e: MatrixRows,
    pub c_o: MatrixRows,
    pub d_o: MatrixRows,
    /// Disturbance feedthrough into the channel inputs; omit for zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_o: Option<MatrixRows>,
    pub channels: Vec<ChannelConfig>,
    pub x0: Vec<f64>,
    /// Nominal input values at the grid nodes, interpolated linearly.
    pub input: Vec<Vec<f64>>,
}

/// One scalar nonlinearity channel: `phi_i(q_i) = scale * map(q_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub map: ChannelMap,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMap {
    Sin,
    Cos,
    Tanh,
}

impl ChannelMap {
    fn apply(self, q: f64) -> f64 {
        match self {
            ChannelMap::Sin => q.sin(),
            ChannelMap::Cos => q.cos(),
            ChannelMap::Tanh => q.tanh(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub t0: f64,
    pub tf: f64,
    /// Number of grid subintervals.
    pub n: usize,
    /// Interior checking points per subinterval.
    #[serde(default)]
    pub n_s: usize,
}

/// Multiplier class and its constants, or instructions to estimate them
/// by sampling the nonlinearity around the nominal path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    Lipschitz {
        gamma: OneOrMany,
    },
    Lsmooth {
        beta: OneOrMany,
        lambda: f64,
    },
    Estimated {
        multiplier: EstimatedKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        /// Sampling radius around the nominal channel inputs.
        radius: f64,
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatedKind {
    Lipschitz,
    Lsmooth,
}

/// A scalar broadcast to every channel, or one value per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn resolve(&self, channels: usize, path: &str) -> Result<Vec<f64>, ConfigError> {
        match self {
            OneOrMany::One(v) => Ok(vec![*v; channels]),
            OneOrMany::Many(vs) if vs.len() == channels => Ok(vs.clone()),
            OneOrMany::Many(vs) => Err(ConfigError::new(
                path,
                format!("expected {channels} per-channel values, got {}", vs.len()),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    #[serde(default)]
    pub w_max: f64,
    /// Gain of the disturbance map on the position channels of the
    /// builtin disturbed unicycle; ignored elsewhere.
    #[serde(default = "default_position_gain")]
    pub position_gain: f64,
}

fn default_position_gain() -> f64 {
    0.02
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        DisturbanceConfig { w_max: 0.0, position_gain: default_position_gain() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBoundsConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    #[default]
    TraceInverse,
    NegTrace,
    NegLogDet,
}

impl CostConfig {
    fn kind(&self) -> CostKind {
        match self {
            CostConfig::TraceInverse => CostKind::TraceInverse,
            CostConfig::NegTrace => CostKind::NegTrace,
            CostConfig::NegLogDet => CostKind::NegLogDet,
        }
    }
}

/// Fixed decay rate, or a bracket searched for the best feasible rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaConfig {
    Fixed(f64),
    Search {
        search: [f64; 2],
        #[serde(default = "default_alpha_iterations")]
        iterations: usize,
    },
}

fn default_alpha_iterations() -> usize {
    12
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScvxSettings {
    pub w_h: f64,
    pub w_tr: f64,
    pub max_iterations: usize,
    /// Constraint tightening inside the linearized subproblems.
    pub epsilon: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_panels")]
    pub panels: usize,
}

fn default_exponent() -> f64 {
    2.0
}
fn default_panels() -> usize {
    32
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyConfig {
    #[default]
    ConstantInTime,
    PiecewiseConstant,
    WorstCaseDirection,
}

impl PolicyConfig {
    pub fn policy(self) -> DisturbancePolicy {
        match self {
            PolicyConfig::ConstantInTime => DisturbancePolicy::ConstantInTime,
            PolicyConfig::PiecewiseConstant => DisturbancePolicy::PiecewiseConstant,
            PolicyConfig::WorstCaseDirection => DisturbancePolicy::WorstCaseDirection,
        }
    }
}

/// Parse a config document, reporting type errors with the path of the
/// offending field.
pub fn parse(bytes: &[u8]) -> Result<ProblemConfig, ConfigError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ConfigError::new("/", format!("config is not UTF-8: {e}")))?;
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = format!("/{}", e.path().to_string().replace('.', "/"));
        ConfigError::new(path, e.inner().to_string())
    })
}

/// The executable parts of a validated config.
pub struct BuiltProblem {
    pub problem: SynthesisProblem,
    pub alpha: AlphaConfig,
    pub scvx: Option<(ScvxConfig, Vec<CtcsConstraint>)>,
}

fn matrix(path: &str, rows: &MatrixRows) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() {
        return Err(ConfigError::new(path, "matrix has no rows"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(ConfigError::new(path, "matrix rows are empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(ConfigError::new(
                path,
                format!("ragged rows: row {i} has {} entries, expected {ncols}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

fn expect_dims(
    path: &str,
    m: &DMatrix<f64>,
    nrows: usize,
    ncols: usize,
) -> Result<(), ConfigError> {
    if m.nrows() != nrows || m.ncols() != ncols {
        return Err(ConfigError::new(
            path,
            format!("expected a {nrows}x{ncols} matrix, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn build_custom_model(
    custom: &CustomModel,
) -> Result<(LinearFractionalModel, DVector<f64>, Vec<DVector<f64>>), ConfigError> {
    let a_o = matrix("/model/custom/a_o", &custom.a_o)?;
    let n_x = a_o.nrows();
    expect_dims("/model/custom/a_o", &a_o, n_x, n_x)?;
    let b_o = matrix("/model/custom/b_o", &custom.b_o)?;
    if b_o.nrows() != n_x {
        return Err(ConfigError::new("/model/custom/b_o", format!("expected {n_x} rows")));
    }
    let n_u = b_o.ncols();
    let e = matrix("/model/custom/e", &custom.e)?;
    if e.nrows() != n_x {
        return Err(ConfigError::new("/model/custom/e", format!("expected {n_x} rows")));
    }
    let c_o = matrix("/model/custom/c_o", &custom.c_o)?;
    if c_o.ncols() != n_x {
        return Err(ConfigError::new("/model/custom/c_o", format!("expected {n_x} columns")));
    }
    let n_q = c_o.nrows();
    let d_o = matrix("/model/custom/d_o", &custom.d_o)?;
    expect_dims("/model/custom/d_o", &d_o, n_q, n_u)?;

    if custom.channels.is_empty() {
        return Err(ConfigError::new("/model/custom/channels", "at least one channel is required"));
    }
    if custom.channels.len() != n_q {
        return Err(ConfigError::new(
            "/model/custom/channels",
            format!(
                "scalar channels must cover the {n_q} channel inputs, got {}",
                custom.channels.len()
            ),
        ));
    }
    if e.ncols() != custom.channels.len() {
        return Err(ConfigError::new(
            "/model/custom/e",
            format!("expected {} columns, one per channel output", custom.channels.len()),
        ));
    }

    let f_o = match &custom.f_o {
        Some(rows) => {
            let m = matrix("/model/custom/f_o", rows)?;
            if m.nrows() != n_x {
                return Err(ConfigError::new("/model/custom/f_o", format!("expected {n_x} rows")));
            }
            m
        }
        None => DMatrix::zeros(n_x, 0),
    };
    let n_w = f_o.ncols();
    let g_o = match &custom.g_o {
        Some(rows) => {
            let m = matrix("/model/custom/g_o", rows)?;
            expect_dims("/model/custom/g_o", &m, n_q, n_w)?;
            m
        }
        None => DMatrix::zeros(n_q, n_w),
    };

    let channels = custom
        .channels
        .iter()
        .map(|c| {
            let (map, scale) = (c.map, c.scale);
            Channel::new(1, 1, Arc::new(move |_t: f64, q: &DVector<f64>| {
                DVector::from_element(1, scale * map.apply(q[0]))
            }))
        })
        .collect();

    let model = LinearFractionalModel { a_o, b_o, f_o, e, c_o, d_o, g_o, channels };

    if custom.x0.len() != n_x {
        return Err(ConfigError::new(
            "/model/custom/x0",
            format!("expected {n_x} entries, got {}", custom.x0.len()),
        ));
    }
    let x0 = DVector::from_column_slice(&custom.x0);

    let mut input_nodes = Vec::with_capacity(custom.input.len());
    for (i, node) in custom.input.iter().enumerate() {
        if node.len() != n_u {
            return Err(ConfigError::new(
                format!("/model/custom/input/{i}"),
                format!("expected {n_u} entries, got {}", node.len()),
            ));
        }
        input_nodes.push(DVector::from_column_slice(node));
    }
    Ok((model, x0, input_nodes))
}

fn multipliers_for(
    config: &ProblemConfig,
    model: &LinearFractionalModel,
    traj: &funnel_synth::model::NominalTrajectory,
) -> Result<MultiplierSpec, ConfigError> {
    let channels = model.channels.len();
    let spec = match &config.nonlinearity {
        NonlinearityConfig::Lipschitz { gamma } => {
            let gammas = gamma.resolve(channels, "/nonlinearity/gamma")?;
            MultiplierSpec {
                channels: gammas
                    .into_iter()
                    .map(|gamma| ChannelMultiplier::Lipschitz { gamma })
                    .collect(),
            }
        }
        NonlinearityConfig::Lsmooth { beta, lambda } => {
            let betas = beta.resolve(channels, "/nonlinearity/beta")?;
            MultiplierSpec {
                channels: betas
                    .into_iter()
                    .map(|beta| ChannelMultiplier::Smooth { beta, lambda: *lambda })
                    .collect(),
            }
        }
        NonlinearityConfig::Estimated { multiplier, lambda, radius, samples, seed } => {
            let constants = estimate_channel_constants(model, traj, *radius, *samples, *seed)
                .map_err(|e| ConfigError::new("/nonlinearity", e.to_string()))?;
            match multiplier {
                EstimatedKind::Lipschitz => MultiplierSpec {
                    channels: constants
                        .iter()
                        .map(|c| ChannelMultiplier::Lipschitz { gamma: c.gamma })
                        .collect(),
                },
                EstimatedKind::Lsmooth => {
                    let lambda = lambda.ok_or_else(|| {
                        ConfigError::new(
                            "/nonlinearity/lambda",
                            "required when the estimated multiplier is lsmooth",
                        )
                    })?;
                    MultiplierSpec {
                        channels: constants
                            .iter()
                            .map(|c| ChannelMultiplier::Smooth { beta: c.beta, lambda })
                            .collect(),
                    }
                }
            }
        }
    };
    Ok(spec)
}

fn obstacle_constraints(
    obstacles: &[ObstacleConfig],
    n_x: usize,
) -> Result<Vec<StateConstraint>, ConfigError> {
    if n_x < 2 && !obstacles.is_empty() {
        return Err(ConfigError::new(
            "/obstacles",
            "keep-out regions need at least two state coordinates",
        ));
    }
    obstacles
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if o.center.len() != 2 {
                return Err(ConfigError::new(
                    format!("/obstacles/{i}/center"),
                    format!("expected 2 coordinates, got {}", o.center.len()),
                ));
            }
            if !(o.radius > 0.0) {
                return Err(ConfigError::new(
                    format!("/obstacles/{i}/radius"),
                    "must be positive",
                ));
            }
            let (cx, cy, r) = (o.center[0], o.center[1], o.radius);
            Ok(StateConstraint::Concave(Arc::new(move |x: &DVector<f64>| {
                let dx = x[0] - cx;
                let dy = x[1] - cy;
                r * r - dx * dx - dy * dy
            })))
        })
        .collect()
}

fn input_bounds_for(bounds: &InputBoundsConfig, n_u: usize) -> Result<Vec<InputBound>, ConfigError> {
    if bounds.lower.len() != n_u {
        return Err(ConfigError::new(
            "/input_bounds/lower",
            format!("expected {n_u} entries, got {}", bounds.lower.len()),
        ));
    }
    if bounds.upper.len() != n_u {
        return Err(ConfigError::new(
            "/input_bounds/upper",
            format!("expected {n_u} entries, got {}", bounds.upper.len()),
        ));
    }
    for i in 0..n_u {
        if !(bounds.upper[i] > bounds.lower[i]) {
            return Err(ConfigError::new(
                format!("/input_bounds/upper/{i}"),
                "upper bound must exceed the lower bound",
            ));
        }
    }
    Ok(InputBound::box_bounds(
        &DVector::from_column_slice(&bounds.lower),
        &DVector::from_column_slice(&bounds.upper),
    ))
}

fn expect_horizon(
    horizon: &HorizonConfig,
    t0: f64,
    tf: f64,
    what: &str,
) -> Result<(), ConfigError> {
    if (horizon.t0 - t0).abs() > 1e-12 || (horizon.tf - tf).abs() > 1e-12 {
        return Err(ConfigError::new(
            "/horizon",
            format!("the {what} nominal path spans [{t0}, {tf}]"),
        ));
    }
    Ok(())
}

fn initial_alpha(alpha: &AlphaConfig) -> Result<f64, ConfigError> {
    match alpha {
        AlphaConfig::Fixed(a) if *a >= 0.0 => Ok(*a),
        AlphaConfig::Fixed(_) => Err(ConfigError::new("/alpha", "decay rate must be nonnegative")),
        AlphaConfig::Search { search: [lo, hi], iterations } => {
            if !(*hi > *lo) || *lo < 0.0 {
                return Err(ConfigError::new("/alpha/search", "bracket must satisfy 0 <= lo < hi"));
            }
            if *iterations == 0 {
                return Err(ConfigError::new("/alpha/iterations", "must be positive"));
            }
            Ok(*lo)
        }
    }
}

/// Validate a parsed config and build the synthesis problem it describes.
pub fn build(config: &ProblemConfig) -> Result<BuiltProblem, ConfigError> {
    let horizon = &config.horizon;
    if horizon.n == 0 {
        return Err(ConfigError::new("/horizon/n", "at least one subinterval is required"));
    }
    if !(horizon.tf > horizon.t0) {
        return Err(ConfigError::new("/horizon/tf", "horizon must have positive length"));
    }
    let alpha0 = initial_alpha(&config.alpha)?;

    let mut problem = match &config.model {
        ModelConfig::Builtin(BuiltinModel::Unicycle) => {
            expect_horizon(horizon, 0.0, unicycle::T_FINAL, "builtin unicycle")?;
            let scenario = unicycle::UnicycleScenario {
                n: horizon.n,
                checking_points: horizon.n_s,
                dynamics: config.dynamics,
                w_max: config.disturbance.w_max,
                position_gain: config.disturbance.position_gain,
                alpha: alpha0,
            };
            // The preset multipliers are placeholders; the config's
            // nonlinearity block replaces them below.
            unicycle::problem(unicycle::lipschitz_multipliers(1.0), &scenario)
                .map_err(|e| ConfigError::new("/model", e.to_string()))?
        }
        ModelConfig::Builtin(BuiltinModel::Quadrotor) => {
            expect_horizon(horizon, 0.0, quadrotor::T_FINAL, "builtin quadrotor")?;
            if config.disturbance.w_max != 0.0 {
                return Err(ConfigError::new(
                    "/disturbance/w_max",
                    "the builtin quadrotor has no disturbance input",
                ));
            }
            let scenario = quadrotor::QuadrotorScenario {
                n: horizon.n,
                checking_points: horizon.n_s,
                lambda: 0.3,
            };
            let mut p = quadrotor::problem(&scenario)
                .map_err(|e| ConfigError::new("/model", e.to_string()))?;
            p.dynamics = config.dynamics;
            p.slope_ordering = config.dynamics == FunnelDynamics::Free;
            p.alpha = alpha0;
            p
        }
        ModelConfig::Custom(custom) => {
            let (model, x0, input_nodes) = build_custom_model(custom)?;
            let grid = TimeGrid::new(horizon.t0, horizon.tf, horizon.n)
                .map_err(|e| ConfigError::new("/horizon", e.to_string()))?;
            if input_nodes.len() != grid.num_nodes() {
                return Err(ConfigError::new(
                    "/model/custom/input",
                    format!(
                        "expected {} node values for n = {}, got {}",
                        grid.num_nodes(),
                        horizon.n,
                        input_nodes.len()
                    ),
                ));
            }
            if config.disturbance.w_max > 0.0 && model.n_w() == 0 {
                return Err(ConfigError::new(
                    "/disturbance/w_max",
                    "positive disturbance level but the model has no disturbance columns (f_o)",
                ));
            }
            let traj = integrate_nominal(
                &model,
                x0,
                InputProfile::FirstOrderHold(input_nodes),
                &grid.times(),
                100,
            )
            .map_err(|e| ConfigError::new("/model/custom", e.to_string()))?;
            SynthesisProblem {
                model,
                traj,
                grid,
                multipliers: MultiplierSpec { channels: vec![] },
                dynamics: config.dynamics,
                alpha: alpha0,
                w_max: config.disturbance.w_max,
                state_constraints: vec![],
                input_bounds: vec![],
                terminal_set: None,
                cost: config.cost.kind(),
                cost_weight: None,
                checking_points: horizon.n_s,
                slope_ordering: config.dynamics == FunnelDynamics::Free,
                substeps: 50,
            }
        }
    };

    problem.multipliers = multipliers_for(config, &problem.model, &problem.traj)?;
    problem.cost = config.cost.kind();
    if let Some(obstacles) = &config.obstacles {
        problem.state_constraints = obstacle_constraints(obstacles, problem.model.n_x())?;
    }
    if let Some(bounds) = &config.input_bounds {
        problem.input_bounds = input_bounds_for(bounds, problem.model.n_u())?;
    }
    if let Some(rows) = &config.terminal {
        let n_x = problem.model.n_x();
        let m = matrix("/terminal", rows)?;
        expect_dims("/terminal", &m, n_x, n_x)?;
        problem.terminal_set = Some(m);
    }

    if config.rollouts == 0 {
        return Err(ConfigError::new("/rollouts", "at least one rollout is required"));
    }
    if config.sim_steps < 100 {
        return Err(ConfigError::new("/sim_steps", "at least 100 steps per subinterval"));
    }
    if config.dense_grid == 0 {
        return Err(ConfigError::new("/dense_grid", "must be positive"));
    }

    let scvx = match &config.scvx {
        Some(s) => {
            if !(s.w_h > 0.0) || !(s.w_tr > 0.0) {
                return Err(ConfigError::new("/scvx", "penalty and trust weights must be positive"));
            }
            if s.max_iterations == 0 {
                return Err(ConfigError::new("/scvx/max_iterations", "must be positive"));
            }
            let mut constraints = all_family_constraints(&problem);
            for c in &mut constraints {
                c.epsilon = s.epsilon;
                c.exponent = s.exponent;
                c.panels = s.panels;
            }
            for (i, c) in constraints.iter().enumerate() {
                c.validate().map_err(|e| ConfigError::new(format!("/scvx ({i})"), e.to_string()))?;
            }
            let scvx_config = ScvxConfig {
                w_h: s.w_h,
                w_tr: s.w_tr,
                max_iterations: s.max_iterations,
                ..ScvxConfig::default()
            };
            Some((scvx_config, constraints))
        }
        None => None,
    };

    problem.validate().map_err(|e| match e {
        SynthError::DimensionMismatch { context, expected, actual } => ConfigError::new(
            "/",
            format!("dimension mismatch in {context}: expected {expected}, got {actual}"),
        ),
        other => ConfigError::new("/", other.to_string()),
    })?;

    Ok(BuiltProblem { problem, alpha: config.alpha, scvx })
}
