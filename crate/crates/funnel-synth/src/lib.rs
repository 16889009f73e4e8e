//! Time-varying invariant funnel synthesis for disturbed nonlinear systems.
//!
//! Given a nominal trajectory of a nonlinear system whose nonlinearities enter
//! through a linear fractional form, this crate computes a time-varying
//! ellipsoidal tube (a funnel) around the trajectory together with linear
//! time-varying feedback gains, such that every state starting inside the tube
//! stays inside it for all admissible disturbances. The construction certifies
//! a dissipation inequality for the tracking error through a differential
//! linear matrix inequality over the tube shape `Q(t)`, the gain parameter
//! `Y(t) = K(t) Q(t)`, and multipliers that bound the effect of the
//! nonlinearity residual. Discretizing the variables with first-order hold and
//! imposing the matrix inequalities on a time grid yields a semidefinite
//! program.
//!
//! Module map:
//!
//! - [`model`]: linear fractional system descriptions, nominal trajectories,
//!   disturbance bounds, linearization along a trajectory.
//! - [`multipliers`]: quadratic constraints that bound the nonlinearity
//!   residual (sector, Lipschitz, and smoothness based forms).
//! - [`lmi`]: the invariance matrix inequality blocks, halfspace containment
//!   inequalities, and cost terms.
//! - [`discretization`]: time grids, first-order hold signals, vectorized
//!   shape dynamics, interval transition matrices, and shape reconstruction
//!   between grid nodes.
//! - [`conic`]: a small backend-agnostic conic program representation with a
//!   Clarabel backend.
//! - [`synthesis`]: assembly of the full semidefinite program and extraction
//!   of the funnel solution and gains.
//! - [`ctcs`]: continuous-time constraint satisfaction, either through
//!   checking points between grid nodes or through integral violation
//!   penalties driven by a successive convexification loop.
//! - [`verify`]: empirical certification by closed-loop rollouts from the
//!   funnel boundary and dense eigenvalue traces of the constraint blocks.
//! - [`systems`]: the two bundled studies (a planar unicycle and a 12-state
//!   quadrotor).

pub mod conic;
pub mod ctcs;
pub mod discretization;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod multipliers;
pub mod synthesis;
pub mod systems;
pub mod verify;

pub use error::SynthError;

/// Crate version, for run manifests emitted by downstream tools.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
