//! Experiment harness: declarative experiment specs, the closed-loop
//! runner, and the operations behind each `ranloop` subcommand.
//!
//! An experiment spec is a TOML file:
//!
//! ```toml
//! name = "case1"
//! sim_config = "cell.toml"      # path, relative to this file
//! q = 0.99
//! delta_phi_mbps = 0.1          # optional, requirement quantization
//! windows_per_point = 200       # optional, sweep windows per candidate
//! warmup_windows = 2            # optional
//! sweep_seed = 1                # optional
//!
//! [beta_grid]
//! values = [0.8, 0.85, 0.9, 0.95, 1.0]
//!
//! # Requirement schedule: either explicit vectors...
//! [[requirement]]
//! at_ms = 0.0                   # must land on a window boundary
//! mbps = [1.5, 0.1, 0.1, 0.1]
//! query_seed = 42               # optional
//!
//! # ...or a camera-framing schedule resolved through the rApp:
//! # [rapp]
//! # topology = "topology.json"  # optional, defaults to the four-corner sector
//! # profile = { framing_mbps = 2.0, adjacent_mbps = 1.0, far_mbps = 0.0 }
//! #
//! # [[framing]]
//! # at_ms = 0.0
//! # camera = 0
//! ```
//!
//! Timestamps must be strictly increasing and aligned to measurement
//! windows — the controller only observes at that cadence.

mod closed_loop;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ransim::SimConfig;
use crate::rapp::{self, CameraTopology, F1Model, PriorityProfile};
use crate::xapp::{
    self, read_sweep_csv, run_sweep, write_sweep_csv, BetaGrid, PolicyTable, RequirementQuery,
    SweepConfig,
};

pub use closed_loop::{run_closed_loop, EpisodeOutcome, RunOptions, RunReport, Transport};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit code for this failure: 2 for anything the operator can
    /// fix in a spec or config, 1 otherwise. (Exit code 3 is reserved for
    /// runs that completed with infeasible requirements.)
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 2,
            CliError::Internal(_) => 1,
        }
    }
}

fn default_delta_phi() -> f64 {
    0.1
}

fn default_windows_per_point() -> u64 {
    200
}

fn default_warmup_windows() -> u64 {
    2
}

#[derive(Debug, Deserialize)]
struct BetaGridFile {
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct RequirementItemFile {
    at_ms: f64,
    mbps: Vec<f64>,
    query_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct FramingItemFile {
    at_ms: f64,
    camera: u32,
    query_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct RappFile {
    topology: Option<String>,
    profile: PriorityProfile,
}

#[derive(Debug, Deserialize)]
struct SpecFile {
    name: String,
    sim_config: String,
    q: f64,
    #[serde(default = "default_delta_phi")]
    delta_phi_mbps: f64,
    #[serde(default = "default_windows_per_point")]
    windows_per_point: u64,
    #[serde(default = "default_warmup_windows")]
    warmup_windows: u64,
    #[serde(default)]
    sweep_seed: u64,
    beta_grid: BetaGridFile,
    #[serde(default, rename = "requirement")]
    requirements: Vec<RequirementItemFile>,
    #[serde(default, rename = "framing")]
    framings: Vec<FramingItemFile>,
    rapp: Option<RappFile>,
}

/// One entry of the resolved requirement schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleItem {
    pub at_ms: f64,
    pub query: RequirementQuery,
    /// Camera that triggered this entry, when the schedule came from the
    /// rApp.
    pub framing_camera: Option<u32>,
}

/// A fully loaded and validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub sim_config: SimConfig,
    pub q: f64,
    pub delta_phi_mbps: f64,
    pub windows_per_point: u64,
    pub warmup_windows: u64,
    pub sweep_seed: u64,
    pub beta_grid: BetaGrid,
    pub schedule: Vec<ScheduleItem>,
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: SpecFile =
            toml::from_str(&text).map_err(|e| CliError::validation(format!("bad spec: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(file, base)
    }

    fn from_file(file: SpecFile, base: &Path) -> Result<Self, CliError> {
        let sim_config_path = base.join(&file.sim_config);
        let sim_config = SimConfig::load(&sim_config_path)
            .map_err(|e| CliError::validation(format!("bad sim config: {e}")))?;
        let beta_grid = BetaGrid::new(file.beta_grid.values)
            .map_err(|e| CliError::validation(e.to_string()))?;
        if !(file.q > 0.0 && file.q < 1.0) {
            return Err(CliError::validation("q must lie strictly between 0 and 1"));
        }
        if !(file.delta_phi_mbps > 0.0) {
            return Err(CliError::validation("delta_phi_mbps must be positive"));
        }
        if file.windows_per_point == 0 {
            return Err(CliError::validation("windows_per_point must be at least 1"));
        }

        let schedule = match (!file.requirements.is_empty(), !file.framings.is_empty()) {
            (true, true) => {
                return Err(CliError::validation(
                    "spec mixes [[requirement]] and [[framing]] schedules; pick one",
                ))
            }
            (false, false) => Vec::new(),
            (true, false) => file
                .requirements
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    if item.mbps.len() != sim_config.n_ues() {
                        return Err(CliError::validation(format!(
                            "requirement at {} ms has {} values for {} UEs",
                            item.at_ms,
                            item.mbps.len(),
                            sim_config.n_ues()
                        )));
                    }
                    Ok(ScheduleItem {
                        at_ms: item.at_ms,
                        query: RequirementQuery {
                            mbps: item.mbps.clone(),
                            rng_seed: item.query_seed.unwrap_or(i as u64),
                        },
                        framing_camera: None,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
            (false, true) => {
                let rapp_file = file
                    .rapp
                    .as_ref()
                    .ok_or_else(|| CliError::validation("[[framing]] schedule needs a [rapp] section"))?;
                let topology = match &rapp_file.topology {
                    None => CameraTopology::four_corner(),
                    Some(rel) => {
                        let topo_path = base.join(rel);
                        CameraTopology::load(&topo_path)
                            .map_err(|e| CliError::validation(format!("bad topology: {e}")))?
                    }
                };
                if topology.n_cameras() != sim_config.n_ues() {
                    return Err(CliError::validation(format!(
                        "topology has {} cameras but the cell has {} UEs",
                        topology.n_cameras(),
                        sim_config.n_ues()
                    )));
                }
                file.framings
                    .iter()
                    .enumerate()
                    .map(|(i, item)| {
                        let query = rapp::requirements_from_detection(
                            item.camera,
                            &topology,
                            &rapp_file.profile,
                            item.query_seed.unwrap_or(i as u64),
                        )
                        .map_err(|e| CliError::validation(e.to_string()))?;
                        Ok(ScheduleItem {
                            at_ms: item.at_ms,
                            query,
                            framing_camera: Some(item.camera),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
        };

        let spec = Self {
            name: file.name,
            sim_config,
            q: file.q,
            delta_phi_mbps: file.delta_phi_mbps,
            windows_per_point: file.windows_per_point,
            warmup_windows: file.warmup_windows,
            sweep_seed: file.sweep_seed,
            beta_grid,
            schedule,
        };
        spec.validate_schedule()?;
        Ok(spec)
    }

    fn validate_schedule(&self) -> Result<(), CliError> {
        let t_a = self.sim_config.measurement_window_ms;
        let mut prev = f64::NEG_INFINITY;
        for item in &self.schedule {
            if item.at_ms <= prev {
                return Err(CliError::validation(
                    "requirement schedule timestamps must be strictly increasing",
                ));
            }
            prev = item.at_ms;
            let ratio = item.at_ms / t_a;
            if (ratio - ratio.round()).abs() > 1e-9 {
                return Err(CliError::validation(format!(
                    "requirement change at {} ms is not aligned to the {} ms window cadence",
                    item.at_ms, t_a
                )));
            }
            if item.at_ms < 0.0 || item.at_ms >= self.sim_config.sim_duration_ms {
                return Err(CliError::validation(format!(
                    "requirement change at {} ms falls outside the run",
                    item.at_ms
                )));
            }
        }
        Ok(())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            windows_per_point: self.windows_per_point,
            warmup_windows: self.warmup_windows,
            base_seed: self.sweep_seed,
        }
    }
}

/// Run the characterization sweep and write the dataset CSV.
pub fn cmd_sweep(spec: &ExperimentSpec, out_path: &Path) -> Result<(), CliError> {
    let dataset = run_sweep(&spec.beta_grid, &spec.sim_config, &spec.sweep_config())
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let file = fs::File::create(out_path).map_err(|e| CliError::io(out_path, e))?;
    write_sweep_csv(&dataset, file).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}

/// Build the policy table from a sweep dataset CSV and persist it.
pub fn cmd_build_table(
    spec: &ExperimentSpec,
    dataset_path: &Path,
    out_path: &Path,
) -> Result<PolicyTable, CliError> {
    let file = fs::File::open(dataset_path).map_err(|e| CliError::io(dataset_path, e))?;
    let dataset = read_sweep_csv(file, spec.sim_config.measurement_window_ms)
        .map_err(|e| CliError::validation(format!("bad sweep dataset: {e}")))?;
    if dataset.n_ues != spec.sim_config.n_ues() {
        return Err(CliError::validation(format!(
            "dataset covers {} UEs but the cell has {}",
            dataset.n_ues,
            spec.sim_config.n_ues()
        )));
    }
    let table = PolicyTable::build(
        &dataset,
        spec.q,
        spec.delta_phi_mbps,
        spec.beta_grid.values().to_vec(),
        spec.sim_config.config_hash(),
    );
    table.save(out_path).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(table)
}

/// Load a policy table and refuse stale ones.
pub fn load_table_checked(spec: &ExperimentSpec, table_path: &Path) -> Result<PolicyTable, CliError> {
    let table = PolicyTable::load(table_path)
        .map_err(|e| CliError::validation(format!("bad policy table: {e}")))?;
    table
        .check_compatibility(
            &spec.sim_config.config_hash(),
            spec.q,
            spec.sim_config.measurement_window_ms,
            spec.beta_grid.values(),
        )
        .map_err(|e| CliError::validation(e.to_string()))?;
    Ok(table)
}

/// One row of the evaluation table produced by `cmd_eval`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub episode: usize,
    pub at_ms: f64,
    pub requirement_mbps: Vec<f64>,
    pub p_s: f64,
    pub p_s_baseline: f64,
    pub delta_ps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub avg_p_s: f64,
    pub avg_p_s_baseline: f64,
    pub avg_delta_ps: f64,
}

/// Score an existing pair of window CSVs (controlled run and its
/// baseline) against the spec's requirement schedule.
pub fn cmd_eval(
    spec: &ExperimentSpec,
    run_csv: &Path,
    baseline_csv: &Path,
) -> Result<EvalTable, CliError> {
    let run_file = fs::File::open(run_csv).map_err(|e| CliError::io(run_csv, e))?;
    let run_windows = crate::ransim::read_windows_csv(run_file)
        .map_err(|e| CliError::validation(format!("bad run csv: {e}")))?;
    let base_file = fs::File::open(baseline_csv).map_err(|e| CliError::io(baseline_csv, e))?;
    let base_windows = crate::ransim::read_windows_csv(base_file)
        .map_err(|e| CliError::validation(format!("bad baseline csv: {e}")))?;
    if spec.schedule.is_empty() {
        return Err(CliError::validation("spec has no requirement schedule to evaluate"));
    }

    let t_a = spec.sim_config.measurement_window_ms;
    let n_windows = run_windows.len().min(base_windows.len());
    let mut rows = Vec::new();
    for (i, item) in spec.schedule.iter().enumerate() {
        let start = (item.at_ms / t_a).round() as usize;
        let end = spec
            .schedule
            .get(i + 1)
            .map(|next| (next.at_ms / t_a).round() as usize)
            .unwrap_or(n_windows)
            .min(n_windows);
        if start >= end {
            return Err(CliError::validation(format!(
                "episode {i} at {} ms covers no completed windows",
                item.at_ms
            )));
        }
        let report =
            xapp::evaluate_success(&item.query.mbps, &run_windows[start..end], &base_windows[start..end]);
        rows.push(EvalRow {
            episode: i,
            at_ms: item.at_ms,
            requirement_mbps: item.query.mbps.clone(),
            p_s: report.p_s,
            p_s_baseline: report.p_s_baseline,
            delta_ps: report.delta_ps,
        });
    }
    let n = rows.len() as f64;
    Ok(EvalTable {
        avg_p_s: rows.iter().map(|r| r.p_s).sum::<f64>() / n,
        avg_p_s_baseline: rows.iter().map(|r| r.p_s_baseline).sum::<f64>() / n,
        avg_delta_ps: rows.iter().map(|r| r.delta_ps).sum::<f64>() / n,
        rows,
    })
}

/// Write the evaluation table as CSV.
pub fn write_eval_csv<W: std::io::Write>(table: &EvalTable, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "at_ms", "requirement", "p_s", "p_s_baseline", "delta_ps"])
        .map_err(|e| CliError::Internal(e.to_string()))?;
    for row in &table.rows {
        let req = row
            .requirement_mbps
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("|");
        w.write_record(&[
            row.episode.to_string(),
            row.at_ms.to_string(),
            req,
            row.p_s.to_string(),
            row.p_s_baseline.to_string(),
            row.delta_ps.to_string(),
        ])
        .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    w.write_record(&[
        "average".to_string(),
        String::new(),
        String::new(),
        table.avg_p_s.to_string(),
        table.avg_p_s_baseline.to_string(),
        table.avg_delta_ps.to_string(),
    ])
    .map_err(|e| CliError::Internal(e.to_string()))?;
    w.flush().map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}

/// Options for `cmd_curves`.
#[derive(Debug, Clone)]
pub struct CurvesOptions {
    pub b_values: Vec<f64>,
    pub anchor_lo: (f64, f64),
    pub anchor_hi: (f64, f64),
    pub points_per_curve: usize,
}

impl Default for CurvesOptions {
    fn default() -> Self {
        // b from -1 to 1 in 0.2 steps, skipping the undefined 0.
        let b_values = (-5..=5)
            .filter(|&i| i != 0)
            .map(|i| i as f64 / 5.0)
            .collect();
        Self {
            b_values,
            anchor_lo: (0.1, 0.0),
            anchor_hi: (10.0, 0.95),
            points_per_curve: 100,
        }
    }
}

/// Emit an F1-vs-bitrate curve family as CSV (`b,x,f1`), one fitted curve
/// per shape value, sampled geometrically across the anchor span.
pub fn cmd_curves<W: std::io::Write>(opts: &CurvesOptions, out: W) -> Result<(), CliError> {
    if opts.points_per_curve < 2 {
        return Err(CliError::validation("points_per_curve must be at least 2"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["b", "x", "f1"]).map_err(|e| CliError::Internal(e.to_string()))?;
    for &b in &opts.b_values {
        let model: F1Model = rapp::fit_model(b, opts.anchor_lo, opts.anchor_hi)
            .map_err(|e| CliError::validation(e.to_string()))?;
        let (x_lo, x_hi) = (model.x_lo, model.x_hi);
        let ratio = x_hi / x_lo;
        for i in 0..opts.points_per_curve {
            let t = i as f64 / (opts.points_per_curve - 1) as f64;
            let x = x_lo * ratio.powf(t);
            let y = model.f1_clamped(x);
            w.write_record(&[b.to_string(), x.to_string(), y.to_string()])
                .map_err(|e| CliError::Internal(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}
