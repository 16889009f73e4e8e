//! Bundled example plants with nominal trajectories and synthesis presets.

pub mod quadrotor;
pub mod unicycle;
