//! Result bundle assembly: every output is built in memory first, then
//! written with per-file atomic renames, so a run directory never holds a
//! half-written artifact.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use funnel_synth::conic::SolveStatus;
use funnel_synth::ctcs::{ScvxIteration, ScvxStop};
use funnel_synth::verify::RolloutReport;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense_grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverStats {
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScvxStats {
    pub iterations: usize,
    pub stop: String,
    pub final_max_violation: f64,
    /// Last trust value over the first, the convergence measure.
    pub trust_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyStats {
    pub rollouts: usize,
    pub policy: String,
    pub exceedances: usize,
    pub worst_level: f64,
    pub worst_input_margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyEntry {
    pub index: usize,
    pub label: String,
    pub max_lambda: f64,
}

/// Run manifest: the config it ran from (verbatim), content hash,
/// component versions, stage wall times, and per-stage statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub overrides: Overrides,
    pub versions: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scvx: Option<ScvxStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyStats>,
    #[serde(default)]
    pub eig_families: Vec<FamilyEntry>,
    /// Seconds per stage; the only fields expected to differ between
    /// reruns of the same config.
    pub wall_times: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, raw_config: &[u8]) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("funnel-cli".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("funnel-synth".into(), funnel_synth::VERSION.into());
        versions.insert("backend".into(), "clarabel".into());
        Manifest {
            command: command.into(),
            config,
            config_sha256: hex_sha256(raw_config),
            overrides: Overrides::default(),
            versions,
            solver: None,
            scvx: None,
            verify: None,
            eig_families: Vec::new(),
            wall_times: BTreeMap::new(),
            files: Vec::new(),
        }
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn report_from(report: &RolloutReport, rollouts: usize) -> VerifyStats {
    VerifyStats {
        rollouts,
        policy: format!("{:?}", report.policy),
        exceedances: report.exceedances,
        worst_level: report.worst_level,
        worst_input_margin: report.worst_input_margin,
    }
}

/// Iteration trace with the trust column normalized so the first
/// iteration reads 1.
pub fn scvx_trace_csv(trace: &[ScvxIteration]) -> String {
    let mut out = String::from("iteration,cost,penalty,trust,max_violation\n");
    let trust0 = trace.first().map(|r| r.trust).unwrap_or(0.0);
    let scale = if trust0 > 0.0 { trust0 } else { 1.0 };
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.iteration,
            row.cost,
            row.penalty,
            row.trust / scale,
            row.max_violation
        ));
    }
    out
}

pub fn stop_label(stop: &ScvxStop) -> String {
    match stop {
        ScvxStop::Converged => "converged".into(),
        ScvxStop::IterationCap => "iteration_cap".into(),
        ScvxStop::SubproblemFailed(status) => format!("subproblem_failed({status:?})"),
    }
}

/// Files of one run, staged in memory until `write`.
#[derive(Default)]
pub struct ResultBundle {
    files: Vec<(String, Vec<u8>)>,
}

impl ResultBundle {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Create the output directory and move every staged file into place
    /// via a same-directory temporary and rename.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, dir.join(name))?;
        }
        Ok(())
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializing run artifacts cannot fail");
    out.push(b'\n');
    out
}
