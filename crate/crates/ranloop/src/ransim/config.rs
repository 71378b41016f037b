//! Cell configuration and its on-disk TOML schema.
//!
//! ```toml
//! tti_ms = 1.0                  # scheduling epoch
//! n_rbs_per_tti = 25            # resource blocks granted per TTI
//! measurement_window_ms = 50.0  # throughput window (must be a whole number of TTIs)
//! sim_duration_ms = 10000.0
//! rng_seed = 7
//! alpha = 0.01                  # optional, scheduler smoothing coefficient
//! d_init = 1.0                  # optional, initial scheduler denominator (bits/ms)
//! theta_mode = "achievable"     # optional: "achievable" | "requested"
//!
//! [[ue]]
//! id = 0
//! traffic = { kind = "cbr", rate_mbps = 2.0 }   # or { kind = "saturated" }
//! channel = { bits_per_rb = 200, lognormal_sigma = 0.1 }  # sigma optional
//! # requested_rate_mbps = 2.0   # required for every UE when theta_mode = "requested"
//! ```
//!
//! UE ids must be 0..N-1 in order; they double as vector indices everywhere
//! else in the crate.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// How the scheduler's per-UE numerator is chosen each TTI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// The rate a full-TTI grant would carry for the UE (transport-block
    /// capacity). The default.
    #[default]
    Achievable,
    /// The UE's configured requested rate, constant over time.
    Requested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrafficConfig {
    /// Infinite backlog; the UE always has data for every grant.
    Saturated,
    /// Constant bitrate arrivals.
    Cbr { rate_mbps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Bits one resource block carries for this UE (spectral-efficiency
    /// proxy).
    pub bits_per_rb: u64,
    /// When set, the per-TTI bits/RB is drawn log-normally around the
    /// configured value (median preserved) and clamped to at least 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lognormal_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeConfig {
    pub id: u32,
    pub traffic: TrafficConfig,
    pub channel: ChannelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_rate_mbps: Option<f64>,
}

fn default_tti_ms() -> f64 {
    1.0
}

fn default_n_rbs() -> u32 {
    25
}

fn default_alpha() -> f64 {
    crate::sched::DEFAULT_ALPHA
}

fn default_d_init() -> f64 {
    crate::sched::DEFAULT_D_INIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_tti_ms")]
    pub tti_ms: f64,
    #[serde(default = "default_n_rbs")]
    pub n_rbs_per_tti: u32,
    pub measurement_window_ms: f64,
    pub sim_duration_ms: f64,
    pub rng_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_d_init")]
    pub d_init: f64,
    #[serde(default)]
    pub theta_mode: ThetaMode,
    #[serde(rename = "ue")]
    pub ues: Vec<UeConfig>,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn n_ues(&self) -> usize {
        self.ues.len()
    }

    /// Measurement window length in TTIs.
    pub fn window_ttis(&self) -> u64 {
        (self.measurement_window_ms / self.tti_ms).round() as u64
    }

    /// Total TTIs the configured duration covers.
    pub fn total_ttis(&self) -> u64 {
        (self.sim_duration_ms / self.tti_ms + 1e-9).floor() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ues.is_empty() {
            return Err(invalid("at least one UE is required"));
        }
        if self.n_rbs_per_tti < 1 {
            return Err(invalid("n_rbs_per_tti must be at least 1"));
        }
        if !(self.tti_ms > 0.0) {
            return Err(invalid("tti_ms must be positive"));
        }
        let ratio = self.measurement_window_ms / self.tti_ms;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(invalid(format!(
                "measurement_window_ms ({}) must be a whole number of TTIs ({} ms each)",
                self.measurement_window_ms, self.tti_ms
            )));
        }
        if self.sim_duration_ms < self.measurement_window_ms {
            return Err(invalid(
                "sim_duration_ms must cover at least one measurement window",
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha must be in [0, 1]"));
        }
        if !(self.d_init > 0.0) {
            return Err(invalid("d_init must be positive"));
        }
        for (index, ue) in self.ues.iter().enumerate() {
            if ue.id as usize != index {
                return Err(invalid(format!(
                    "UE ids must be 0..N-1 in order; entry {index} has id {}",
                    ue.id
                )));
            }
            if ue.channel.bits_per_rb < 1 {
                return Err(invalid(format!("UE {}: bits_per_rb must be at least 1", ue.id)));
            }
            if let Some(sigma) = ue.channel.lognormal_sigma {
                if !(sigma > 0.0) {
                    return Err(invalid(format!(
                        "UE {}: lognormal_sigma must be positive when present",
                        ue.id
                    )));
                }
            }
            if let TrafficConfig::Cbr { rate_mbps } = ue.traffic {
                if !(rate_mbps >= 0.0) {
                    return Err(invalid(format!("UE {}: CBR rate must be nonnegative", ue.id)));
                }
            }
            if self.theta_mode == ThetaMode::Requested && ue.requested_rate_mbps.is_none() {
                return Err(invalid(format!(
                    "UE {}: requested_rate_mbps is required when theta_mode = \"requested\"",
                    ue.id
                )));
            }
            if let Some(rate) = ue.requested_rate_mbps {
                if !(rate > 0.0) {
                    return Err(invalid(format!(
                        "UE {}: requested_rate_mbps must be positive when present",
                        ue.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable fingerprint of the cell's capacity configuration, used to
    /// detect policy tables built against a different cell. Run length and
    /// seed are deliberately not part of it: characterization sweeps and
    /// control runs legitimately differ in both.
    pub fn config_hash(&self) -> String {
        let mut capacity_view = self.clone();
        capacity_view.rng_seed = 0;
        capacity_view.sim_duration_ms = 0.0;
        let canonical = serde_json::to_string(&capacity_view).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
            measurement_window_ms = 50.0
            sim_duration_ms = 1000.0
            rng_seed = 7

            [[ue]]
            id = 0
            traffic = { kind = "saturated" }
            channel = { bits_per_rb = 200 }

            [[ue]]
            id = 1
            traffic = { kind = "cbr", rate_mbps = 1.5 }
            channel = { bits_per_rb = 150, lognormal_sigma = 0.1 }
        "#
    }

    #[test]
    fn parses_defaults() {
        let cfg = SimConfig::from_toml_str(minimal_toml()).unwrap();
        assert_eq!(cfg.tti_ms, 1.0);
        assert_eq!(cfg.n_rbs_per_tti, 25);
        assert_eq!(cfg.theta_mode, ThetaMode::Achievable);
        assert_eq!(cfg.window_ttis(), 50);
        assert_eq!(cfg.total_ttis(), 1000);
        assert_eq!(cfg.n_ues(), 2);
    }

    #[test]
    fn rejects_window_not_multiple_of_tti() {
        let text = minimal_toml().replace("measurement_window_ms = 50.0", "measurement_window_ms = 50.5");
        let err = SimConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn rejects_short_duration() {
        let text = minimal_toml().replace("sim_duration_ms = 1000.0", "sim_duration_ms = 20.0");
        assert!(SimConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn rejects_out_of_order_ids() {
        let text = minimal_toml().replace("id = 1", "id = 3");
        assert!(SimConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn requested_mode_needs_rates() {
        let text = format!("theta_mode = \"requested\"\n{}", minimal_toml());
        assert!(SimConfig::from_toml_str(&text).is_err());
        let with_rates = text
            .replace(
                "traffic = { kind = \"saturated\" }",
                "traffic = { kind = \"saturated\" }\nrequested_rate_mbps = 2.0",
            )
            .replace(
                "traffic = { kind = \"cbr\", rate_mbps = 1.5 }",
                "traffic = { kind = \"cbr\", rate_mbps = 1.5 }\nrequested_rate_mbps = 1.5",
            );
        assert!(SimConfig::from_toml_str(&with_rates).is_ok());
    }

    #[test]
    fn hash_tracks_capacity_but_not_run_parameters() {
        let a = SimConfig::from_toml_str(minimal_toml()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.rng_seed = 8;
        b.sim_duration_ms = 99_999.0;
        assert_eq!(a.config_hash(), b.config_hash());
        b.n_rbs_per_tti = 17;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
