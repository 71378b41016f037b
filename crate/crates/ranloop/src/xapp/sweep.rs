//! Characterization sweeps: run the cell once per candidate exponent
//! vector and collect every measurement-window throughput vector.

use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::ransim::{ConfigError, SimConfig, Simulator};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid beta grid: {0}")]
    InvalidGrid(String),
    #[error("simulation failed for beta vector {betas:?}: {source}")]
    SimFailed {
        betas: Vec<f64>,
        source: ConfigError,
    },
    #[error("sweep csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed sweep dataset: {0}")]
    Malformed(String),
}

/// The candidate values one UE's exponent may take. The sweep tries the
/// full cartesian product of this set across UEs.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaGrid {
    values: Vec<f64>,
}

impl BetaGrid {
    /// Values must be strictly increasing and within `[0, 1]`. A single
    /// value is allowed (a degenerate one-point sweep).
    pub fn new(values: Vec<f64>) -> Result<Self, SweepError> {
        if values.is_empty() {
            return Err(SweepError::InvalidGrid("grid must not be empty".into()));
        }
        for w in values.windows(2) {
            if !(w[0] < w[1]) {
                return Err(SweepError::InvalidGrid(format!(
                    "values must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(SweepError::InvalidGrid("values must lie in [0, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All candidate vectors for `n_ues` UEs, in lexicographic order.
    pub fn candidates(&self, n_ues: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.values.len().pow(n_ues as u32));
        let mut current = vec![0usize; n_ues];
        loop {
            out.push(current.iter().map(|&i| self.values[i]).collect());
            // Odometer increment, last position fastest.
            let mut pos = n_ues;
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                current[pos] += 1;
                if current[pos] < self.values.len() {
                    break;
                }
                current[pos] = 0;
            }
        }
    }
}

/// Throughput vectors observed per window, row-major: one row per window,
/// one column per UE, Mbit/s.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n_cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(n_cols: usize) -> Self {
        assert!(n_cols > 0, "sample matrix needs at least one column");
        Self { n_cols, data: Vec::new() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "at least one row expected");
        let mut m = Self::new(rows[0].len());
        for row in rows {
            m.push_row(row);
        }
        m
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row width mismatch");
        self.data.extend_from_slice(row);
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }
}

/// One sweep point: the exponent vector and everything observed under it.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub betas: Vec<f64>,
    pub samples: SampleMatrix,
}

/// The full sweep outcome, in candidate order.
#[derive(Debug, Clone)]
pub struct SweepDataset {
    pub n_ues: usize,
    pub t_a_ms: f64,
    pub entries: Vec<SweepEntry>,
}

/// How much data to gather per sweep point.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Measurement windows recorded per candidate vector.
    pub windows_per_point: u64,
    /// Windows discarded up front while the scheduler averages settle.
    pub warmup_windows: u64,
    /// Base seed; each candidate runs on a seed mixed from this and its
    /// index, so points are independent but the whole sweep reproduces.
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { windows_per_point: 200, warmup_windows: 2, base_seed: 0 }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub(crate) fn point_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ index.wrapping_mul(0xD6E8FEB86659FD93))
}

/// Run one candidate vector and collect its sample matrix.
fn run_point(
    sim_cfg: &SimConfig,
    sweep_cfg: &SweepConfig,
    index: u64,
    betas: &[f64],
) -> Result<SampleMatrix, SweepError> {
    let mut cfg = sim_cfg.clone();
    cfg.rng_seed = point_seed(sweep_cfg.base_seed, index);
    let total_windows = sweep_cfg.warmup_windows + sweep_cfg.windows_per_point;
    cfg.sim_duration_ms = total_windows as f64 * cfg.measurement_window_ms;
    let mut sim = Simulator::new(cfg).map_err(|source| SweepError::SimFailed {
        betas: betas.to_vec(),
        source,
    })?;
    sim.force_betas(betas).map_err(|e| SweepError::SimFailed {
        betas: betas.to_vec(),
        source: ConfigError::Invalid(e.to_string()),
    })?;

    let mut samples = SampleMatrix::new(sim.n_ues());
    for w in 0..total_windows {
        let window = sim.run_window();
        if w < sweep_cfg.warmup_windows {
            continue;
        }
        let row: Vec<f64> = window.iter().map(|s| s.value_mbps).collect();
        samples.push_row(&row);
    }
    Ok(samples)
}

/// Sweep the full candidate set. Points are independent seeded runs, so
/// they execute in parallel; the dataset keeps candidate order regardless.
pub fn run_sweep(
    grid: &BetaGrid,
    sim_cfg: &SimConfig,
    sweep_cfg: &SweepConfig,
) -> Result<SweepDataset, SweepError> {
    let candidates = grid.candidates(sim_cfg.n_ues());
    let entries: Result<Vec<SweepEntry>, SweepError> = candidates
        .par_iter()
        .enumerate()
        .map(|(index, betas)| {
            let samples = run_point(sim_cfg, sweep_cfg, index as u64, betas)?;
            Ok(SweepEntry { betas: betas.clone(), samples })
        })
        .collect();
    Ok(SweepDataset {
        n_ues: sim_cfg.n_ues(),
        t_a_ms: sim_cfg.measurement_window_ms,
        entries: entries?,
    })
}

fn format_beta_vec(betas: &[f64]) -> String {
    betas
        .iter()
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join("|")
}

fn parse_beta_vec(text: &str) -> Result<Vec<f64>, SweepError> {
    text.split('|')
        .map(|part| {
            part.parse::<f64>()
                .map_err(|e| SweepError::Malformed(format!("bad beta value {part:?}: {e}")))
        })
        .collect()
}

/// Write a sweep dataset as CSV with the `beta_vec,window,ue,throughput`
/// schema. The beta vector is encoded as values joined by `|`.
pub fn write_sweep_csv<W: Write>(dataset: &SweepDataset, out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta_vec", "window", "ue", "throughput"])?;
    for entry in &dataset.entries {
        let key = format_beta_vec(&entry.betas);
        for (window, row) in entry.samples.rows().enumerate() {
            for (ue, value) in row.iter().enumerate() {
                w.write_record(&[
                    key.clone(),
                    window.to_string(),
                    ue.to_string(),
                    value.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Read a sweep dataset back from its CSV form. `t_a_ms` is not part of
/// the CSV, so the caller supplies it.
pub fn read_sweep_csv<R: Read>(input: R, t_a_ms: f64) -> Result<SweepDataset, SweepError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut entries: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    let mut index_of: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 4 {
            return Err(SweepError::Malformed(format!(
                "expected 4 columns, got {}",
                record.len()
            )));
        }
        let key = record[0].to_string();
        let window: usize = record[1]
            .parse()
            .map_err(|e| SweepError::Malformed(format!("bad window: {e}")))?;
        let ue: usize = record[2]
            .parse()
            .map_err(|e| SweepError::Malformed(format!("bad ue: {e}")))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|e| SweepError::Malformed(format!("bad throughput: {e}")))?;

        let idx = *index_of.entry(key.clone()).or_insert_with(|| {
            entries.push((parse_beta_vec(&key).unwrap_or_default(), Vec::new()));
            entries.len() - 1
        });
        if entries[idx].0.is_empty() {
            return Err(SweepError::Malformed(format!("bad beta vector {key:?}")));
        }
        let rows = &mut entries[idx].1;
        if rows.len() <= window {
            rows.resize(window + 1, Vec::new());
        }
        if rows[window].len() != ue {
            return Err(SweepError::Malformed(format!(
                "out-of-order sample for beta {key:?} window {window} ue {ue}"
            )));
        }
        rows[window].push(value);
    }
    if entries.is_empty() {
        return Err(SweepError::Malformed("dataset has no rows".into()));
    }
    let n_ues = entries[0].1.first().map(|r| r.len()).unwrap_or(0);
    if n_ues == 0 {
        return Err(SweepError::Malformed("dataset has no samples".into()));
    }
    let entries = entries
        .into_iter()
        .map(|(betas, rows)| {
            if rows.iter().any(|r| r.len() != n_ues) {
                return Err(SweepError::Malformed(format!(
                    "inconsistent UE count for beta vector {betas:?}"
                )));
            }
            Ok(SweepEntry { betas, samples: SampleMatrix::from_rows(&rows) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepDataset { n_ues, t_a_ms, entries })
}
