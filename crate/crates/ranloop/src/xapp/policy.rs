//! The requirement-to-parameters policy table and its on-disk form.
//!
//! Keys are level-set points in grid units of `delta_phi_mbps`; values are
//! the candidate exponent vectors whose sweeps produced those points. A
//! key reached from several sweep points keeps every candidate — the
//! query-time filters choose among them.
//!
//! Persisted as versioned JSON with enough metadata (`q`, the grid, the
//! window length, a hash of the cell config) to refuse tables built
//! against a different setup.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::levelset::extract_level_set;
use super::sweep::SweepDataset;

pub const POLICY_TABLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("failed to read policy table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed policy table: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported policy table version {0}")]
    Version(u32),
    #[error("stale policy table: {0}")]
    Stale(String),
}

/// Provenance carried by the table so staleness is detectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub q: f64,
    pub delta_phi_mbps: f64,
    pub t_a_ms: f64,
    pub beta_grid: Vec<f64>,
    pub n_ues: usize,
    pub sim_config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyEntryFile {
    /// Level-set point in grid units (multiply by `delta_phi_mbps` for Mbit/s).
    key: Vec<u32>,
    betas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyFile {
    v: u32,
    #[serde(flatten)]
    meta: PolicyMeta,
    entries: Vec<PolicyEntryFile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub meta: PolicyMeta,
    entries: BTreeMap<Vec<u32>, Vec<Vec<f64>>>,
}

impl PolicyTable {
    /// Build the table from a sweep: extract each point's level set and
    /// file every frontier point under the exponent vector that produced
    /// it.
    pub fn build(
        dataset: &SweepDataset,
        q: f64,
        delta_phi_mbps: f64,
        beta_grid: Vec<f64>,
        sim_config_hash: String,
    ) -> Self {
        let mut entries: BTreeMap<Vec<u32>, Vec<Vec<f64>>> = BTreeMap::new();
        for entry in &dataset.entries {
            let level_set = extract_level_set(&entry.samples, q, delta_phi_mbps);
            for point in level_set.points {
                entries.entry(point).or_default().push(entry.betas.clone());
            }
        }
        Self {
            meta: PolicyMeta {
                q,
                delta_phi_mbps,
                t_a_ms: dataset.t_a_ms,
                beta_grid,
                n_ues: dataset.n_ues,
                sim_config_hash,
            },
            entries,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<u32>, &Vec<Vec<f64>>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest key value available per coordinate, in grid units. Used to
    /// explain infeasible requirements.
    pub fn per_coordinate_max(&self) -> Vec<u32> {
        let mut best = vec![0u32; self.meta.n_ues];
        for key in self.entries.keys() {
            for (b, &k) in best.iter_mut().zip(key) {
                *b = (*b).max(k);
            }
        }
        best
    }

    pub fn to_json_string(&self) -> String {
        let file = PolicyFile {
            v: POLICY_TABLE_VERSION,
            meta: self.meta.clone(),
            entries: self
                .entries
                .iter()
                .map(|(key, betas)| PolicyEntryFile { key: key.clone(), betas: betas.clone() })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("policy table serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, PolicyError> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.v != POLICY_TABLE_VERSION {
            return Err(PolicyError::Version(file.v));
        }
        let mut entries = BTreeMap::new();
        for entry in file.entries {
            entries.insert(entry.key, entry.betas);
        }
        Ok(Self { meta: file.meta, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Refuse to serve queries for a different cell or controller setup.
    pub fn check_compatibility(
        &self,
        sim_config_hash: &str,
        q: f64,
        t_a_ms: f64,
        beta_grid: &[f64],
    ) -> Result<(), PolicyError> {
        if self.meta.sim_config_hash != sim_config_hash {
            return Err(PolicyError::Stale(format!(
                "table was built for cell config {} but the current config hashes to {}",
                self.meta.sim_config_hash, sim_config_hash
            )));
        }
        if self.meta.q != q {
            return Err(PolicyError::Stale(format!(
                "table was built at q = {} but q = {} was requested",
                self.meta.q, q
            )));
        }
        if self.meta.t_a_ms != t_a_ms {
            return Err(PolicyError::Stale(format!(
                "table was built at T_A = {} ms but the cell runs {} ms windows",
                self.meta.t_a_ms, t_a_ms
            )));
        }
        if self.meta.beta_grid != beta_grid {
            return Err(PolicyError::Stale(format!(
                "table grid {:?} does not match requested grid {:?}",
                self.meta.beta_grid, beta_grid
            )));
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn insert_for_test(&mut self, key: Vec<u32>, betas: Vec<f64>) {
        self.entries.entry(key).or_default().push(betas);
    }

    #[cfg(test)]
    pub(crate) fn empty_for_test(meta: PolicyMeta) -> Self {
        Self { meta, entries: BTreeMap::new() }
    }
}
