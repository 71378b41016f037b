//! Level-set extraction from the empirical joint CCDF.
//!
//! On a step-function estimator the exact set `{phi : S(phi) = q}` has
//! measure zero, so the useful realization is the boundary of the upper
//! set: quantize throughput to a grid of step `delta_phi`, keep grid
//! points with `S >= q`, and return only the Pareto-maximal ones. Those
//! are the largest requirement vectors this sample set still meets with
//! probability at least `q`.
//!
//! The extractor never enumerates the full grid. `S(phi) >= q` holds iff
//! at least `k = ceil(q * n)` rows dominate `phi`, and every coordinate of
//! a maximal point must equal some row's (quantized) coordinate — pushing
//! a coordinate past the next row value cannot gain dominators. So the
//! search recurses over per-coordinate row values in descending order,
//! shrinking the row subset as it goes, and Pareto-prunes the candidates
//! it collects. Equivalent to grid enumeration, exponentially cheaper.

/// Smallest grid index whose value is >= `mbps` (requirements round up).
pub fn units_ceil(mbps: f64, delta_phi: f64) -> u32 {
    debug_assert!(delta_phi > 0.0);
    let u = (mbps / delta_phi - 1e-9).ceil();
    if u <= 0.0 {
        0
    } else {
        u as u32
    }
}

/// Largest grid index whose value is <= `mbps` (samples round down).
pub fn units_floor(mbps: f64, delta_phi: f64) -> u32 {
    debug_assert!(delta_phi > 0.0);
    let u = (mbps / delta_phi + 1e-9).floor();
    if u <= 0.0 {
        0
    } else {
        u as u32
    }
}

pub fn units_to_mbps(units: u32, delta_phi: f64) -> f64 {
    units as f64 * delta_phi
}

/// A level set at exceedance probability `q`: the Pareto-maximal grid
/// points still met with probability >= `q`. Points are in grid units of
/// `delta_phi` Mbit/s, sorted for reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub q: f64,
    pub delta_phi_mbps: f64,
    pub points: Vec<Vec<u32>>,
}

impl LevelSet {
    pub fn points_mbps(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|p| p.iter().map(|&u| units_to_mbps(u, self.delta_phi_mbps)).collect())
            .collect()
    }
}

/// `a` dominates `b` when it is at least as large in every coordinate.
pub fn dominates(a: &[u32], b: &[u32]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y)
}

/// Keep only points not dominated by a different point.
fn pareto_prune(mut points: Vec<Vec<u32>>) -> Vec<Vec<u32>> {
    points.sort();
    points.dedup();
    let keep: Vec<bool> = points
        .iter()
        .map(|p| !points.iter().any(|other| other != p && dominates(other, p)))
        .collect();
    points
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Maximal lattice points dominated by at least `k` of `rows`.
fn maximal_points(rows: &[&[u32]], k: usize) -> Vec<Vec<u32>> {
    debug_assert!(k >= 1);
    if rows.len() < k {
        return Vec::new();
    }
    let dim = rows[0].len();
    if dim == 1 {
        // The k-th largest head value is the single maximal point.
        let mut heads: Vec<u32> = rows.iter().map(|r| r[0]).collect();
        heads.sort_unstable_by(|a, b| b.cmp(a));
        return vec![vec![heads[k - 1]]];
    }

    // Sort rows by head coordinate, descending; prefixes of this order are
    // exactly the subsets {rows with head >= v}.
    let mut sorted: Vec<&[u32]> = rows.to_vec();
    sorted.sort_unstable_by(|a, b| b[0].cmp(&a[0]));

    let mut candidates: Vec<Vec<u32>> = Vec::new();
    let mut prefix_tails: Vec<&[u32]> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let head = sorted[i][0];
        // Extend the prefix with every row sharing this head value.
        while i < sorted.len() && sorted[i][0] == head {
            prefix_tails.push(&sorted[i][1..]);
            i += 1;
        }
        if prefix_tails.len() < k {
            continue;
        }
        for tail in maximal_points(&prefix_tails, k) {
            let mut point = Vec::with_capacity(dim);
            point.push(head);
            point.extend(tail);
            candidates.push(point);
        }
    }
    pareto_prune(candidates)
}

/// Number of dominating rows required for `S >= q` over `n` rows.
fn required_count(q: f64, n: usize) -> usize {
    let k = (q * n as f64 - 1e-9).ceil();
    (k.max(1.0)) as usize
}

/// Extract the level set of a sample matrix at probability `q` on a grid
/// of step `delta_phi_mbps`.
pub fn extract_level_set(
    samples: &super::sweep::SampleMatrix,
    q: f64,
    delta_phi_mbps: f64,
) -> LevelSet {
    assert!(q > 0.0 && q < 1.0, "q must lie strictly between 0 and 1");
    assert!(delta_phi_mbps > 0.0, "quantization step must be positive");
    assert!(samples.n_rows() > 0, "cannot extract a level set from no samples");

    let quantized: Vec<Vec<u32>> = samples
        .rows()
        .map(|row| row.iter().map(|&v| units_floor(v, delta_phi_mbps)).collect())
        .collect();
    let refs: Vec<&[u32]> = quantized.iter().map(|r| r.as_slice()).collect();
    let k = required_count(q, samples.n_rows());
    let mut points = maximal_points(&refs, k);
    points.sort();
    LevelSet { q, delta_phi_mbps, points }
}
