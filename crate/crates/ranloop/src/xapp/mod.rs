//! The data-driven controller: characterization sweeps, joint-CCDF
//! estimation, level-set extraction, the policy table, and the runtime
//! query path that turns a per-UE requirement vector into an exponent
//! vector for the scheduler.

mod ccdf;
mod levelset;
mod policy;
mod sweep;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ransim::ThroughputSample;

pub use ccdf::{estimate_ccdf, JointCcdf};
pub use levelset::{
    dominates, extract_level_set, units_ceil, units_floor, units_to_mbps, LevelSet,
};
pub use policy::{PolicyError, PolicyMeta, PolicyTable, POLICY_TABLE_VERSION};
pub use sweep::{
    read_sweep_csv, run_sweep, write_sweep_csv, BetaGrid, SampleMatrix, SweepConfig,
    SweepDataset, SweepEntry, SweepError,
};

/// A per-UE minimum-throughput request plus the seed for the final random
/// pick among equivalent answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementQuery {
    pub mbps: Vec<f64>,
    pub rng_seed: u64,
}

/// The answer to a query, also the JSON record emitted by experiment runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub requirement_mbps: Vec<f64>,
    pub betas: Vec<f64>,
    /// Distinct exponent vectors that survived all filters.
    pub survivor_count: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("policy table is empty")]
    EmptyTable,
    #[error("requirement has {got} coordinates but the table covers {expected} UEs")]
    LengthMismatch { expected: usize, got: usize },
    #[error(
        "infeasible requirement: UE {coordinate} needs {required_mbps} Mbit/s but the table \
         offers at most {best_available_mbps} Mbit/s there"
    )]
    Infeasible {
        coordinate: usize,
        required_mbps: f64,
        best_available_mbps: f64,
    },
    #[error("requirement values must be nonnegative, got {0}")]
    NegativeRequirement(f64),
}

/// Equal requirements must map to equal exponents.
fn equal_requirements_filter(req_units: &[u32], betas: &[f64]) -> bool {
    for i in 0..req_units.len() {
        for j in (i + 1)..req_units.len() {
            if req_units[i] == req_units[j] && betas[i] != betas[j] {
                return false;
            }
        }
    }
    true
}

/// A strictly larger requirement must not get a larger exponent (lower
/// exponent means higher priority). Ties are governed by the equality
/// filter, not this one.
fn descending_order_filter(req_units: &[u32], betas: &[f64]) -> bool {
    for i in 0..req_units.len() {
        for j in 0..req_units.len() {
            if req_units[i] < req_units[j] && betas[i] < betas[j] {
                return false;
            }
        }
    }
    true
}

/// Answer a requirement query from the policy table.
///
/// Keeps the entries whose key meets the requirement in every coordinate,
/// then drops candidate vectors violating either expert rule (equal
/// requirements get equal exponents; larger requirements never get larger
/// exponents), dedups, and picks uniformly at random with the query's
/// seed. No survivors means the requirement is infeasible for this table;
/// the error names the coordinate with the least headroom.
pub fn select_betas(table: &PolicyTable, query: &RequirementQuery) -> Result<Selection, QueryError> {
    if table.is_empty() {
        return Err(QueryError::EmptyTable);
    }
    let n = table.meta.n_ues;
    if query.mbps.len() != n {
        return Err(QueryError::LengthMismatch { expected: n, got: query.mbps.len() });
    }
    if let Some(&bad) = query.mbps.iter().find(|&&v| !(v >= 0.0)) {
        return Err(QueryError::NegativeRequirement(bad));
    }

    let delta = table.meta.delta_phi_mbps;
    let req_units: Vec<u32> = query.mbps.iter().map(|&v| units_ceil(v, delta)).collect();

    let mut survivors: Vec<Vec<f64>> = Vec::new();
    for (key, candidates) in table.entries() {
        if !dominates(key, &req_units) {
            continue;
        }
        for betas in candidates {
            if equal_requirements_filter(&req_units, betas)
                && descending_order_filter(&req_units, betas)
            {
                survivors.push(betas.clone());
            }
        }
    }
    survivors.sort_by(|a, b| a.partial_cmp(b).expect("betas are finite"));
    survivors.dedup();

    if survivors.is_empty() {
        let best = table.per_coordinate_max();
        let (coordinate, _) = query
            .mbps
            .iter()
            .enumerate()
            .map(|(i, &req)| (i, req - units_to_mbps(best[i], delta)))
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite deficits"))
            .expect("at least one coordinate");
        return Err(QueryError::Infeasible {
            coordinate,
            required_mbps: query.mbps[coordinate],
            best_available_mbps: units_to_mbps(best[coordinate], delta),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(query.rng_seed);
    let pick = rng.gen_range(0..survivors.len());
    Ok(Selection {
        requirement_mbps: query.mbps.clone(),
        betas: survivors[pick].clone(),
        survivor_count: survivors.len(),
        rng_seed: query.rng_seed,
    })
}

/// Percentage of windows in which every UE met its requirement at once.
pub fn success_rate(requirement_mbps: &[f64], windows: &[Vec<ThroughputSample>]) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    let hits = windows
        .iter()
        .filter(|window| window_satisfies(requirement_mbps, window))
        .count();
    100.0 * hits as f64 / windows.len() as f64
}

/// Did every UE meet its requirement in this window?
pub fn window_satisfies(requirement_mbps: &[f64], window: &[ThroughputSample]) -> bool {
    debug_assert_eq!(requirement_mbps.len(), window.len());
    window
        .iter()
        .zip(requirement_mbps)
        .all(|(sample, &req)| sample.value_mbps >= req)
}

/// Joint success of a controlled run next to its baseline, in percentage
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub p_s: f64,
    pub p_s_baseline: f64,
    pub delta_ps: f64,
}

/// Success rate of a run and its improvement over a baseline gathered with
/// the same traffic and seeds.
pub fn evaluate_success(
    requirement_mbps: &[f64],
    run_windows: &[Vec<ThroughputSample>],
    baseline_windows: &[Vec<ThroughputSample>],
) -> SuccessReport {
    let p_s = success_rate(requirement_mbps, run_windows);
    let p_s_baseline = success_rate(requirement_mbps, baseline_windows);
    SuccessReport { p_s, p_s_baseline, delta_ps: p_s - p_s_baseline }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(n_ues: usize, delta: f64) -> PolicyMeta {
        PolicyMeta {
            q: 0.99,
            delta_phi_mbps: delta,
            t_a_ms: 50.0,
            beta_grid: vec![0.8, 0.85, 0.9, 0.95, 1.0],
            n_ues,
            sim_config_hash: "test".into(),
        }
    }

    /// A table holding the classic three requirement patterns and the
    /// exponent vectors that serve them, keyed at exactly the pattern
    /// points (0.1 Mbit/s grid).
    fn pattern_table() -> PolicyTable {
        let mut table = PolicyTable::empty_for_test(meta(4, 0.1));
        let rows: Vec<(Vec<u32>, Vec<f64>)> = vec![
            (vec![30, 2, 2, 2], vec![0.8, 0.95, 0.95, 0.95]),
            (vec![2, 30, 2, 2], vec![0.95, 0.8, 0.95, 0.95]),
            (vec![2, 2, 30, 2], vec![0.95, 0.95, 0.8, 0.95]),
            (vec![2, 2, 2, 30], vec![0.95, 0.95, 0.95, 0.85]),
            (vec![4, 4, 14, 14], vec![0.95, 0.95, 0.9, 0.9]),
            (vec![14, 14, 4, 4], vec![0.8, 0.8, 0.9, 0.9]),
            (vec![24, 12, 4, 4], vec![0.85, 0.9, 0.95, 0.95]),
        ];
        for (key, betas) in rows {
            table.insert_for_test(key, betas);
        }
        table
    }

    #[test]
    fn single_priority_pattern_selects_its_vector() {
        let table = pattern_table();
        let query = RequirementQuery { mbps: vec![3.0, 0.2, 0.2, 0.2], rng_seed: 7 };
        let sel = select_betas(&table, &query).unwrap();
        assert_eq!(sel.betas, vec![0.8, 0.95, 0.95, 0.95]);
        assert_eq!(sel.survivor_count, 1);
    }

    #[test]
    fn paired_pattern_selects_its_vector() {
        let table = pattern_table();
        let query = RequirementQuery { mbps: vec![1.4, 1.4, 0.4, 0.4], rng_seed: 7 };
        let sel = select_betas(&table, &query).unwrap();
        assert_eq!(sel.betas, vec![0.8, 0.8, 0.9, 0.9]);
    }

    #[test]
    fn requirement_above_every_key_is_infeasible() {
        let table = pattern_table();
        let query = RequirementQuery { mbps: vec![9.0, 9.0, 9.0, 9.0], rng_seed: 7 };
        let err = select_betas(&table, &query).unwrap_err();
        match err {
            QueryError::Infeasible { required_mbps, best_available_mbps, .. } => {
                assert_eq!(required_mbps, 9.0);
                assert!(best_available_mbps < 9.0);
            }
            other => panic!("expected infeasible, got {other}"),
        }
    }

    #[test]
    fn infeasible_error_names_the_tightest_coordinate() {
        let table = pattern_table();
        // Coordinate 1 exceeds its best key (3.0) by the most.
        let query = RequirementQuery { mbps: vec![0.2, 5.0, 0.2, 0.2], rng_seed: 7 };
        match select_betas(&table, &query).unwrap_err() {
            QueryError::Infeasible { coordinate, .. } => assert_eq!(coordinate, 1),
            other => panic!("expected infeasible, got {other}"),
        }
    }

    #[test]
    fn equal_requirements_force_equal_betas() {
        let mut table = PolicyTable::empty_for_test(meta(2, 0.1));
        // Both keys meet the requirement, but only one candidate respects
        // the equality rule.
        table.insert_for_test(vec![10, 10], vec![0.9, 0.95]);
        table.insert_for_test(vec![12, 12], vec![0.9, 0.9]);
        let query = RequirementQuery { mbps: vec![1.0, 1.0], rng_seed: 1 };
        let sel = select_betas(&table, &query).unwrap();
        assert_eq!(sel.betas, vec![0.9, 0.9]);
        assert_eq!(sel.survivor_count, 1);
    }

    #[test]
    fn ascending_requirements_get_non_increasing_betas() {
        let mut table = PolicyTable::empty_for_test(meta(2, 0.1));
        // Key meets the requirement but hands the bigger requirement the
        // bigger exponent: must be filtered out.
        table.insert_for_test(vec![5, 20], vec![0.8, 0.95]);
        table.insert_for_test(vec![5, 20], vec![0.95, 0.8]);
        let query = RequirementQuery { mbps: vec![0.5, 2.0], rng_seed: 1 };
        let sel = select_betas(&table, &query).unwrap();
        assert_eq!(sel.betas, vec![0.95, 0.8]);
    }

    #[test]
    fn filters_emptying_the_pool_is_infeasible() {
        let mut table = PolicyTable::empty_for_test(meta(2, 0.1));
        table.insert_for_test(vec![5, 20], vec![0.8, 0.95]);
        let query = RequirementQuery { mbps: vec![0.5, 2.0], rng_seed: 1 };
        assert!(matches!(
            select_betas(&table, &query),
            Err(QueryError::Infeasible { .. })
        ));
    }

    #[test]
    fn tie_in_requirements_is_exempt_from_strict_ordering() {
        let mut table = PolicyTable::empty_for_test(meta(3, 0.1));
        table.insert_for_test(vec![10, 10, 20], vec![0.9, 0.9, 0.85]);
        let query = RequirementQuery { mbps: vec![1.0, 1.0, 2.0], rng_seed: 1 };
        assert!(select_betas(&table, &query).is_ok());
    }

    #[test]
    fn selection_is_reproducible_and_seed_sensitive() {
        let mut table = PolicyTable::empty_for_test(meta(2, 0.1));
        for i in 0..6u32 {
            table.insert_for_test(vec![10 + i, 10 + i], vec![0.8, 0.8]);
            table.insert_for_test(vec![10 + i, 10 + i], vec![0.85, 0.85]);
            table.insert_for_test(vec![10 + i, 10 + i], vec![0.9, 0.9]);
        }
        let q = |seed| RequirementQuery { mbps: vec![1.0, 1.0], rng_seed: seed };
        let a = select_betas(&table, &q(1)).unwrap();
        let b = select_betas(&table, &q(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.survivor_count, 3); // dedup across keys
        let picks: std::collections::BTreeSet<String> = (0..32)
            .map(|seed| format!("{:?}", select_betas(&table, &q(seed)).unwrap().betas))
            .collect();
        assert!(picks.len() > 1, "different seeds should reach different survivors");
    }

    #[test]
    fn empty_table_is_an_error() {
        let table = PolicyTable::empty_for_test(meta(2, 0.1));
        let query = RequirementQuery { mbps: vec![0.1, 0.1], rng_seed: 0 };
        assert!(matches!(select_betas(&table, &query), Err(QueryError::EmptyTable)));
    }

    fn window(values: &[f64], index: u64) -> Vec<ThroughputSample> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| ThroughputSample { ue_id: i as u32, window_index: index, value_mbps: v })
            .collect()
    }

    #[test]
    fn success_rate_counts_jointly_satisfying_windows() {
        let req = [1.0, 2.0];
        let mut windows = Vec::new();
        for i in 0..9 {
            windows.push(window(&[1.5, 2.5], i));
        }
        windows.push(window(&[1.5, 1.9], 9)); // UE 1 misses
        assert_eq!(success_rate(&req, &windows), 90.0);
    }

    #[test]
    fn zero_requirements_always_succeed() {
        let windows = vec![window(&[0.0, 0.0], 0), window(&[0.1, 0.0], 1)];
        assert_eq!(success_rate(&[0.0, 0.0], &windows), 100.0);
    }

    #[test]
    fn delta_ps_is_the_difference() {
        let run = vec![window(&[2.0, 2.0], 0), window(&[2.0, 2.0], 1)];
        let baseline = vec![window(&[2.0, 0.5], 0), window(&[2.0, 2.0], 1)];
        let report = evaluate_success(&[1.0, 1.0], &run, &baseline);
        assert_eq!(report.p_s, 100.0);
        assert_eq!(report.p_s_baseline, 50.0);
        assert_eq!(report.delta_ps, 50.0);
    }
}
