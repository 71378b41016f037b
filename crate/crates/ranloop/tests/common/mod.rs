//! Shared fixtures for integration tests: an independent textbook
//! proportional-fair scheduler used as an allocation oracle, and cell
//! config builders.

use ranloop::ransim::SimConfig;

/// Textbook proportional-fair scheduler, written against the classic
/// definition (priority = achievable rate over an exponentially smoothed
/// served rate) with the same per-RB greedy realization and tie-break as
/// the system under test, but none of its code. Exponent-free on purpose:
/// it is the reference the tunable scheduler must collapse to.
pub struct ReferencePf {
    alpha: f64,
    tti_ms: f64,
    avg_rate: Vec<f64>,
}

impl ReferencePf {
    pub fn new(n_ues: usize, alpha: f64, d_init: f64, tti_ms: f64) -> Self {
        Self { alpha, tti_ms, avg_rate: vec![d_init; n_ues] }
    }

    /// Allocate `n_rbs` greedily for saturated UEs with the given per-RB
    /// capacities. Returns RBs per UE.
    pub fn allocate(&self, bits_per_rb: &[u64], n_rbs: u32) -> Vec<u32> {
        let n = self.avg_rate.len();
        let mut rbs = vec![0u32; n];
        let mut granted = vec![0u64; n];
        for _ in 0..n_rbs {
            let mut best = 0usize;
            let mut best_metric = f64::MIN;
            for i in 0..n {
                let theta = (bits_per_rb[i] * n_rbs as u64) as f64 / self.tti_ms;
                let tentative =
                    (1.0 - self.alpha) * self.avg_rate[i] + self.alpha * granted[i] as f64 / self.tti_ms;
                let metric = theta / tentative.max(1e-6);
                if metric > best_metric {
                    best_metric = metric;
                    best = i;
                }
            }
            rbs[best] += 1;
            granted[best] += bits_per_rb[best];
        }
        rbs
    }

    /// Fold the TTI's served rates into the moving averages.
    pub fn update(&mut self, served_bits: &[u64]) {
        for (avg, &bits) in self.avg_rate.iter_mut().zip(served_bits) {
            *avg = ((1.0 - self.alpha) * *avg + self.alpha * bits as f64 / self.tti_ms).max(1e-6);
        }
    }
}

/// A saturated cell with `n` UEs on equal static channels.
pub fn saturated_cell(n: usize, bits_per_rb: u64, n_rbs: u32, duration_ms: f64, seed: u64) -> SimConfig {
    let ues: String = (0..n)
        .map(|i| {
            format!(
                "[[ue]]\nid = {i}\ntraffic = {{ kind = \"saturated\" }}\nchannel = {{ bits_per_rb = {bits_per_rb} }}\n"
            )
        })
        .collect();
    SimConfig::from_toml_str(&format!(
        "n_rbs_per_tti = {n_rbs}\nmeasurement_window_ms = 50.0\nsim_duration_ms = {duration_ms}\nrng_seed = {seed}\n{ues}"
    ))
    .expect("fixture config is valid")
}

/// The acceptance cell: four saturated UEs, 25 RBs of 200 bits each
/// (5 Mbit/s nominal), mild log-normal channel variation.
pub fn acceptance_cell(duration_ms: f64, seed: u64) -> SimConfig {
    let ues: String = (0..4)
        .map(|i| {
            format!(
                "[[ue]]\nid = {i}\ntraffic = {{ kind = \"saturated\" }}\nchannel = {{ bits_per_rb = 200, lognormal_sigma = 0.08 }}\n"
            )
        })
        .collect();
    SimConfig::from_toml_str(&format!(
        "n_rbs_per_tti = 25\nmeasurement_window_ms = 50.0\nsim_duration_ms = {duration_ms}\nrng_seed = {seed}\n{ues}"
    ))
    .expect("fixture config is valid")
}

/// The 22 requirement patterns exercised against the policy table: one UE
/// prioritized, two UEs prioritized equally, and a strong/mild pair, in
/// every distinct UE arrangement, at cell scale (half the classic values
/// on this 5 Mbit/s cell).
pub fn requirement_patterns() -> Vec<Vec<f64>> {
    let scale = 0.5;
    let case1 = vec![
        vec![3.0, 0.2, 0.2, 0.2],
        vec![0.2, 3.0, 0.2, 0.2],
        vec![0.2, 0.2, 3.0, 0.2],
        vec![0.2, 0.2, 0.2, 3.0],
    ];
    let case2 = vec![
        vec![0.4, 0.4, 1.4, 1.4],
        vec![0.4, 1.4, 1.4, 0.4],
        vec![1.4, 0.4, 0.4, 1.4],
        vec![1.4, 0.4, 1.4, 0.4],
        vec![0.4, 1.4, 0.4, 1.4],
        vec![1.4, 1.4, 0.4, 0.4],
    ];
    let case3 = vec![
        vec![2.4, 1.2, 0.4, 0.4],
        vec![1.2, 2.4, 0.4, 0.4],
        vec![1.2, 0.4, 0.4, 2.4],
        vec![0.4, 2.4, 0.4, 1.2],
        vec![2.4, 0.4, 0.4, 1.2],
        vec![1.2, 0.4, 2.4, 0.4],
        vec![2.4, 0.4, 1.2, 0.4],
        vec![0.4, 2.4, 1.2, 0.4],
        vec![0.4, 1.2, 0.4, 2.4],
        vec![0.4, 0.4, 2.4, 1.2],
        vec![0.4, 1.2, 2.4, 0.4],
        vec![0.4, 0.4, 1.2, 2.4],
    ];
    case1
        .into_iter()
        .chain(case2)
        .chain(case3)
        .map(|req| req.into_iter().map(|v| (v * scale * 10.0).round() / 10.0).collect())
        .collect()
}
