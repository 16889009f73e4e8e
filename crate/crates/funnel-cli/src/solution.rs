//! On-disk solution format: node-indexed matrices as row-major nested
//! arrays, plus the raw decision vector so later verification passes can
//! re-evaluate solver residuals exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use funnel_synth::conic::SolveStatus;
use funnel_synth::lmi::FunnelDynamics;
use funnel_synth::synthesis::{FunnelSolution, SideValues};

use crate::config::{ConfigError, MatrixRows};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub alpha: f64,
    pub c_q: f64,
    pub dynamics: FunnelDynamics,
    pub times: Vec<f64>,
    pub q: Vec<MatrixRows>,
    pub y: Vec<MatrixRows>,
    pub z_minus: Vec<MatrixRows>,
    pub z_plus: Vec<MatrixRows>,
    /// Node feedback gains `K = Y Q^{-1}`, for consumers that only need
    /// the controller; ignored when reading the file back.
    pub gains: Vec<MatrixRows>,
    pub sides: Vec<SideFile>,
    /// Full decision vector of the assembled conic program.
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideFile {
    pub left: SideValues,
    pub right: SideValues,
}

fn to_rows(m: &DMatrix<f64>) -> MatrixRows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows(path: &str, rows: &MatrixRows) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(ConfigError { path: path.into(), message: "empty matrix".into() });
    }
    let ncols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(ConfigError {
                path: path.into(),
                message: format!("ragged rows: row {i} has {} entries", row.len()),
            });
        }
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl SolutionFile {
    pub fn from_solution(sol: &FunnelSolution) -> Self {
        let gains = sol.node_gains().map(|gs| gs.iter().map(to_rows).collect()).unwrap_or_default();
        SolutionFile {
            status: sol.status,
            objective: sol.objective,
            iterations: sol.iterations,
            solve_time: sol.solve_time,
            alpha: sol.alpha,
            c_q: sol.c_q,
            dynamics: sol.dynamics,
            times: sol.times.clone(),
            q: sol.q.iter().map(to_rows).collect(),
            y: sol.y.iter().map(to_rows).collect(),
            z_minus: sol.z.iter().map(|(zm, _)| to_rows(zm)).collect(),
            z_plus: sol.z.iter().map(|(_, zp)| to_rows(zp)).collect(),
            gains,
            sides: sol
                .sides
                .iter()
                .map(|(l, r)| SideFile { left: l.clone(), right: r.clone() })
                .collect(),
            x: sol.x.clone(),
        }
    }

    pub fn into_solution(self) -> Result<FunnelSolution, ConfigError> {
        let nodes = self.times.len();
        if nodes < 2 {
            return Err(ConfigError {
                path: "/times".into(),
                message: "a solution needs at least two node times".into(),
            });
        }
        let intervals = nodes - 1;
        let expect_len = |path: &str, len: usize, want: usize| -> Result<(), ConfigError> {
            if len != want {
                return Err(ConfigError {
                    path: path.into(),
                    message: format!("expected {want} entries, got {len}"),
                });
            }
            Ok(())
        };
        expect_len("/q", self.q.len(), nodes)?;
        expect_len("/y", self.y.len(), nodes)?;
        expect_len("/z_minus", self.z_minus.len(), intervals)?;
        expect_len("/z_plus", self.z_plus.len(), intervals)?;
        expect_len("/sides", self.sides.len(), intervals)?;

        let mut q = Vec::with_capacity(nodes);
        for (k, rows) in self.q.iter().enumerate() {
            let m = from_rows(&format!("/q/{k}"), rows)?;
            if m.nrows() != m.ncols() {
                return Err(ConfigError {
                    path: format!("/q/{k}"),
                    message: "certificate blocks must be square".into(),
                });
            }
            q.push(m);
        }
        let n_x = q[0].nrows();
        let mut y = Vec::with_capacity(nodes);
        for (k, rows) in self.y.iter().enumerate() {
            let m = from_rows(&format!("/y/{k}"), rows)?;
            if m.ncols() != n_x {
                return Err(ConfigError {
                    path: format!("/y/{k}"),
                    message: format!("expected {n_x} columns"),
                });
            }
            y.push(m);
        }
        let mut z = Vec::with_capacity(intervals);
        for k in 0..intervals {
            let zm = from_rows(&format!("/z_minus/{k}"), &self.z_minus[k])?;
            let zp = from_rows(&format!("/z_plus/{k}"), &self.z_plus[k])?;
            z.push((zm, zp));
        }
        Ok(FunnelSolution {
            status: self.status,
            objective: self.objective,
            iterations: self.iterations,
            solve_time: self.solve_time,
            alpha: self.alpha,
            c_q: self.c_q,
            dynamics: self.dynamics,
            times: self.times,
            q,
            y,
            z,
            sides: self.sides.into_iter().map(|s| (s.left, s.right)).collect(),
            x: self.x,
        })
    }
}
