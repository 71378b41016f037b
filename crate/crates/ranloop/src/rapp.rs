//! Application-side requirement enrichment: the detection-accuracy model
//! that ties F1 score to video bitrate, and the camera topology rule that
//! turns "which camera frames the target" into a per-UE throughput
//! requirement vector.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::xapp::RequirementQuery;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape parameter b must be nonzero (x^0 degenerates to a constant)")]
    ZeroShape,
    #[error("anchor bitrates must be distinct and positive, got {0} and {1}")]
    BadAnchors(f64, f64),
    #[error("bitrate {x} Mbit/s is outside the model domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("F1 target {y} is outside the achievable range [{lo}, {hi}]")]
    OutOfRange { y: f64, lo: f64, hi: f64 },
}

/// Power-function model `f1(x) = a * x^b + c`, fitted through two anchor
/// points and valid on the bitrate interval they span. Evaluations clamp
/// the score to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Model {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

/// Solve for `(a, c)` so the curve with shape `b` passes through both
/// anchors `(x, y)`. For anchors with `y_hi > y_lo` the fit is strictly
/// increasing on the domain whatever the sign of `b`.
pub fn fit_model(b: f64, anchor_lo: (f64, f64), anchor_hi: (f64, f64)) -> Result<F1Model, ModelError> {
    if b == 0.0 {
        return Err(ModelError::ZeroShape);
    }
    let (x_lo, y_lo) = anchor_lo;
    let (x_hi, y_hi) = anchor_hi;
    if !(x_lo > 0.0) || !(x_hi > 0.0) || x_lo == x_hi {
        return Err(ModelError::BadAnchors(x_lo, x_hi));
    }
    let p_lo = x_lo.powf(b);
    let p_hi = x_hi.powf(b);
    let a = (y_hi - y_lo) / (p_hi - p_lo);
    let c = y_lo - a * p_lo;
    Ok(F1Model { a, b, c, x_lo: x_lo.min(x_hi), x_hi: x_lo.max(x_hi) })
}

impl F1Model {
    /// F1 score at bitrate `x`; errors outside the fitted domain.
    pub fn f1(&self, x: f64) -> Result<f64, ModelError> {
        if x < self.x_lo || x > self.x_hi {
            return Err(ModelError::OutOfDomain { x, lo: self.x_lo, hi: self.x_hi });
        }
        Ok(self.eval_clamped(x))
    }

    /// F1 score with the bitrate clamped into the domain first. Convenient
    /// for scoring measured throughput, which can fall below the lowest
    /// anchor.
    pub fn f1_clamped(&self, x: f64) -> f64 {
        self.eval_clamped(x.clamp(self.x_lo, self.x_hi))
    }

    fn eval_clamped(&self, x: f64) -> f64 {
        (self.a * x.powf(self.b) + self.c).clamp(0.0, 1.0)
    }

    /// Achievable score range over the domain, low end first.
    pub fn f1_range(&self) -> (f64, f64) {
        let at_lo = self.eval_clamped(self.x_lo);
        let at_hi = self.eval_clamped(self.x_hi);
        (at_lo.min(at_hi), at_lo.max(at_hi))
    }

    /// Bitrate that achieves F1 score `y`: the inverse `((y - c) / a)^(1/b)`.
    pub fn bitrate_for_f1(&self, y: f64) -> Result<f64, ModelError> {
        let (lo, hi) = self.f1_range();
        if y < lo - 1e-12 || y > hi + 1e-12 {
            return Err(ModelError::OutOfRange { y, lo, hi });
        }
        Ok(((y - self.c) / self.a).powf(1.0 / self.b))
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("failed to read topology {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed topology: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("unknown camera id {0}")]
    UnknownCamera(u32),
    #[error("priority profile must satisfy framing >= adjacent >= far >= 0")]
    BadProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraNode {
    pub id: u32,
    pub adjacent: Vec<u32>,
    pub opposite: u32,
}

/// Cameras at the corners of a monitored sector. Each camera knows its
/// neighbours and the camera across the sector; the camera with the k-th
/// smallest id reports over UE k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTopology {
    pub cameras: Vec<CameraNode>,
}

impl CameraTopology {
    /// The standard four-corner layout: ids 0..4, neighbours one step
    /// around the square, opposite across the diagonal.
    pub fn four_corner() -> Self {
        let cameras = (0u32..4)
            .map(|id| CameraNode {
                id,
                adjacent: vec![(id + 1) % 4, (id + 3) % 4],
                opposite: (id + 2) % 4,
            })
            .collect();
        Self { cameras }
    }

    pub fn from_json_str(text: &str) -> Result<Self, TopologyError> {
        let topo: CameraTopology = serde_json::from_str(text)?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn n_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.cameras.is_empty() {
            return Err(TopologyError::Invalid("topology has no cameras".into()));
        }
        let mut by_id: BTreeMap<u32, &CameraNode> = BTreeMap::new();
        for cam in &self.cameras {
            if by_id.insert(cam.id, cam).is_some() {
                return Err(TopologyError::Invalid(format!("duplicate camera id {}", cam.id)));
            }
        }
        for cam in &self.cameras {
            if cam.opposite == cam.id {
                return Err(TopologyError::Invalid(format!(
                    "camera {} cannot be its own opposite",
                    cam.id
                )));
            }
            if !by_id.contains_key(&cam.opposite) {
                return Err(TopologyError::Invalid(format!(
                    "camera {} names unknown opposite {}",
                    cam.id, cam.opposite
                )));
            }
            if by_id[&cam.opposite].opposite != cam.id {
                return Err(TopologyError::Invalid(format!(
                    "opposite relation between {} and {} is not mutual",
                    cam.id, cam.opposite
                )));
            }
            for adj in &cam.adjacent {
                if *adj == cam.id {
                    return Err(TopologyError::Invalid(format!(
                        "camera {} cannot be adjacent to itself",
                        cam.id
                    )));
                }
                let Some(peer) = by_id.get(adj) else {
                    return Err(TopologyError::Invalid(format!(
                        "camera {} names unknown neighbour {adj}",
                        cam.id
                    )));
                };
                if !peer.adjacent.contains(&cam.id) {
                    return Err(TopologyError::Invalid(format!(
                        "adjacency between {} and {adj} is not mutual",
                        cam.id
                    )));
                }
            }
            if self.cameras.len() == 4 && cam.adjacent.len() != 2 {
                return Err(TopologyError::Invalid(format!(
                    "camera {} must have exactly two neighbours in a four-camera sector",
                    cam.id
                )));
            }
        }
        Ok(())
    }

    fn node(&self, id: u32) -> Result<&CameraNode, TopologyError> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or(TopologyError::UnknownCamera(id))
    }

    /// Camera ids in ascending order; position in this list is the UE index.
    pub fn ordered_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.cameras.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }
}

/// Rates assigned by distance from the target: the framing camera, its
/// neighbours, and everything farther away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityProfile {
    pub framing_mbps: f64,
    pub adjacent_mbps: f64,
    pub far_mbps: f64,
}

impl PriorityProfile {
    /// The default 2 / 1 / 0 Mbit/s split.
    pub fn default_camera_rates() -> Self {
        Self { framing_mbps: 2.0, adjacent_mbps: 1.0, far_mbps: 0.0 }
    }

    /// Uniformly scaled copy (desk-scale cells need smaller absolute rates).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            framing_mbps: self.framing_mbps * factor,
            adjacent_mbps: self.adjacent_mbps * factor,
            far_mbps: self.far_mbps * factor,
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let ok = self.framing_mbps >= self.adjacent_mbps
            && self.adjacent_mbps >= self.far_mbps
            && self.far_mbps >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TopologyError::BadProfile)
        }
    }
}

/// Map a detection ("camera `framing_id` sees the target") to a per-UE
/// requirement vector: the framing camera gets the framing rate, its
/// neighbours the adjacent rate, and its opposite — like any other
/// remaining camera — the far rate. A far rate of zero means "no
/// guarantee", not "starve the UE".
pub fn requirements_from_detection(
    framing_id: u32,
    topology: &CameraTopology,
    profile: &PriorityProfile,
    rng_seed: u64,
) -> Result<RequirementQuery, TopologyError> {
    profile.validate()?;
    let framing = topology.node(framing_id)?;
    let mbps = topology
        .ordered_ids()
        .iter()
        .map(|&id| {
            if id == framing_id {
                profile.framing_mbps
            } else if framing.adjacent.contains(&id) {
                profile.adjacent_mbps
            } else {
                profile.far_mbps
            }
        })
        .collect();
    Ok(RequirementQuery { mbps, rng_seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ANCHOR_LO: (f64, f64) = (0.1, 0.0);
    const ANCHOR_HI: (f64, f64) = (10.0, 0.95);

    #[test]
    fn linear_fit_matches_hand_solution() {
        let m = fit_model(1.0, ANCHOR_LO, ANCHOR_HI).unwrap();
        // a = 0.95 / 9.9, c = -a * 0.1
        assert!((m.a - 0.95 / 9.9).abs() < 1e-15, "a = {}", m.a);
        assert!((m.c + 0.95 / 99.0).abs() < 1e-15, "c = {}", m.c);
    }

    #[test]
    fn inverse_shape_fit_matches_hand_solution() {
        // b = -1: a * 10 + c = 0 and a * 0.1 + c = 0.95, so
        // a = 0.95 / (0.1 - 10) < 0 and c = 0.95 - a / 10.
        let m = fit_model(-1.0, ANCHOR_LO, ANCHOR_HI).unwrap();
        let a_expected = 0.95 / (0.1 - 10.0);
        assert!((m.a - a_expected).abs() < 1e-12, "a = {}", m.a);
        assert!((m.c - (0.95 - a_expected / 10.0)).abs() < 1e-12, "c = {}", m.c);
        assert!(m.a < 0.0, "negative shape needs a negative scale to increase");
    }

    #[test]
    fn every_shape_passes_through_both_anchors() {
        for i in -10..=10 {
            if i == 0 {
                continue;
            }
            let b = i as f64 / 10.0;
            let m = fit_model(b, ANCHOR_LO, ANCHOR_HI).unwrap();
            assert!(m.f1(0.1).unwrap().abs() < 1e-12, "b={b}");
            assert!((m.f1(10.0).unwrap() - 0.95).abs() < 1e-12, "b={b}");
        }
    }

    #[test]
    fn fitted_curves_increase_on_the_domain() {
        for i in -10..=10 {
            if i == 0 {
                continue;
            }
            let b = i as f64 / 10.0;
            let m = fit_model(b, ANCHOR_LO, ANCHOR_HI).unwrap();
            let mut prev = -1.0;
            for step in 0..=100 {
                let x = 0.1 + step as f64 * (10.0 - 0.1) / 100.0;
                let y = m.f1(x).unwrap();
                assert!(y >= prev, "b={b}: f1 must not decrease, {prev} -> {y} at {x}");
                prev = y;
            }
        }
    }

    #[test]
    fn degenerate_fits_are_rejected() {
        assert!(matches!(fit_model(0.0, ANCHOR_LO, ANCHOR_HI), Err(ModelError::ZeroShape)));
        assert!(fit_model(1.0, (2.0, 0.0), (2.0, 0.95)).is_err());
        assert!(fit_model(1.0, (0.0, 0.0), (10.0, 0.95)).is_err());
    }

    #[test]
    fn linear_midpoint_inverts_to_the_chord_midpoint() {
        let m = fit_model(1.0, ANCHOR_LO, ANCHOR_HI).unwrap();
        let x = m.bitrate_for_f1(0.475).unwrap();
        assert!((x - 5.05).abs() < 1e-9, "got {x}");
    }

    #[test]
    fn zero_score_inverts_to_the_low_anchor() {
        for b in [-1.0, -0.4, 0.3, 1.0] {
            let m = fit_model(b, ANCHOR_LO, ANCHOR_HI).unwrap();
            let x = m.bitrate_for_f1(0.0).unwrap();
            assert!((x - 0.1).abs() < 1e-9, "b={b}: got {x}");
        }
    }

    #[test]
    fn forward_inverse_round_trip() {
        for b in [-1.0, -0.5, 0.2, 0.7, 1.0] {
            let m = fit_model(b, ANCHOR_LO, ANCHOR_HI).unwrap();
            for step in 0..50 {
                let x = 0.1 + step as f64 * 0.198;
                let back = m.bitrate_for_f1(m.f1(x).unwrap()).unwrap();
                assert!(
                    ((back - x) / x).abs() < 1e-9,
                    "b={b} x={x} round-tripped to {back}"
                );
            }
        }
    }

    #[test]
    fn out_of_range_targets_are_rejected() {
        let m = fit_model(1.0, ANCHOR_LO, ANCHOR_HI).unwrap();
        assert!(m.bitrate_for_f1(0.99).is_err());
        assert!(m.bitrate_for_f1(-0.1).is_err());
        assert!(m.f1(11.0).is_err());
        assert_eq!(m.f1_clamped(11.0), m.f1(10.0).unwrap());
        assert_eq!(m.f1_clamped(0.01), 0.0);
    }

    #[test]
    fn four_corner_topology_validates() {
        let topo = CameraTopology::four_corner();
        topo.validate().unwrap();
        assert_eq!(topo.n_cameras(), 4);
        for cam in &topo.cameras {
            assert_eq!(cam.adjacent.len(), 2);
            assert_ne!(cam.opposite, cam.id);
        }
    }

    #[test]
    fn framing_camera_pattern() {
        let topo = CameraTopology::four_corner();
        let profile = PriorityProfile::default_camera_rates();
        let req = requirements_from_detection(0, &topo, &profile, 1).unwrap();
        assert_eq!(req.mbps, vec![2.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rotating_the_framing_camera_permutes_the_vector() {
        let topo = CameraTopology::four_corner();
        let profile = PriorityProfile::default_camera_rates();
        let r0 = requirements_from_detection(0, &topo, &profile, 1).unwrap().mbps;
        let r1 = requirements_from_detection(1, &topo, &profile, 1).unwrap().mbps;
        // Rotating the framing camera by one corner rotates the pattern.
        let rotated: Vec<f64> = (0..4).map(|i| r0[(i + 3) % 4]).collect();
        assert_eq!(r1, rotated);
    }

    #[test]
    fn uniform_profile_ignores_the_framing_camera() {
        let topo = CameraTopology::four_corner();
        let profile = PriorityProfile { framing_mbps: 0.7, adjacent_mbps: 0.7, far_mbps: 0.7 };
        for framing in 0..4 {
            let req = requirements_from_detection(framing, &topo, &profile, 1).unwrap();
            assert_eq!(req.mbps, vec![0.7; 4]);
        }
    }

    #[test]
    fn unknown_camera_is_an_error() {
        let topo = CameraTopology::four_corner();
        let profile = PriorityProfile::default_camera_rates();
        assert!(matches!(
            requirements_from_detection(9, &topo, &profile, 1),
            Err(TopologyError::UnknownCamera(9))
        ));
    }

    #[test]
    fn bad_profiles_are_rejected() {
        let p = PriorityProfile { framing_mbps: 1.0, adjacent_mbps: 2.0, far_mbps: 0.0 };
        assert!(p.validate().is_err());
        let n = PriorityProfile { framing_mbps: 2.0, adjacent_mbps: 1.0, far_mbps: -0.5 };
        assert!(n.validate().is_err());
    }

    #[test]
    fn topology_json_round_trip() {
        let topo = CameraTopology::four_corner();
        let text = serde_json::to_string(&topo).unwrap();
        let back = CameraTopology::from_json_str(&text).unwrap();
        assert_eq!(back, topo);
    }

    #[test]
    fn asymmetric_topology_is_rejected() {
        let text = r#"{"cameras":[
            {"id":0,"adjacent":[1],"opposite":1},
            {"id":1,"adjacent":[],"opposite":0}
        ]}"#;
        assert!(CameraTopology::from_json_str(text).is_err());
    }
}
