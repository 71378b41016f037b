//! Tunable proportional-fair uplink scheduler.
//!
//! Each UE carries a priority coefficient `gamma = theta / D`, where `theta`
//! is the rate the UE could get this TTI and `D` is a smoothed record of the
//! rate it has been served so far. `D` is updated once per TTI as
//!
//! ```text
//! D' = ((1 - alpha) * D + alpha * served_rate) ^ beta
//! ```
//!
//! with a per-UE exponent `beta` in `[0, 1]`. With `beta = 1` for every UE
//! the update is a plain exponential moving average and the scheduler
//! behaves as a standard proportional-fair scheduler. Lowering one UE's
//! `beta` shrinks its denominator (in the `D > 1` operating regime) and so
//! raises its priority relative to the others.
//!
//! Resource blocks are granted one at a time to the backlogged UE with the
//! highest current `gamma`; after every grant the winner's `gamma` is
//! recomputed with a tentative denominator update that counts the capacity
//! granted so far this TTI. Ties break toward the lowest UE index, which
//! keeps runs reproducible.
//!
//! All rates are bits per millisecond internally; callers convert to Mbit/s
//! at the I/O boundary only.

use thiserror::Error;

/// Floor applied to the smoothed denominator. A UE that is never served has
/// its raw average driven to zero and its priority to infinity; the floor
/// bounds the priority without disturbing ordering in normal operation.
pub const DENOM_FLOOR: f64 = 1e-6;

/// Default smoothing coefficient for the denominator average.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Default initial denominator, in bits/ms. Small on purpose: a cold-start
/// UE looks under-served and wins its first grants quickly.
pub const DEFAULT_D_INIT: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("alpha must be in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("beta[{index}] must be in [0, 1], got {value}")]
    BetaOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} beta values, got {got}")]
    BetaLength { expected: usize, got: usize },
    #[error("d_init must be positive, got {0}")]
    NonPositiveDInit(f64),
}

/// Scheduler-wide parameters: the smoothing coefficient, one exponent per
/// UE, and the denominator every UE starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerParams {
    pub alpha: f64,
    pub betas: Vec<f64>,
    pub d_init: f64,
}

impl SchedulerParams {
    pub fn new(alpha: f64, betas: Vec<f64>, d_init: f64) -> Result<Self, ParamError> {
        let params = Self { alpha, betas, d_init };
        params.validate()?;
        Ok(params)
    }

    /// Standard proportional-fair configuration: `beta = 1` for every UE.
    pub fn standard_pf(n_ues: usize) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            betas: vec![1.0; n_ues],
            d_init: DEFAULT_D_INIT,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ParamError::AlphaOutOfRange(self.alpha));
        }
        for (index, &value) in self.betas.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamError::BetaOutOfRange { index, value });
            }
        }
        if !(self.d_init > 0.0) {
            return Err(ParamError::NonPositiveDInit(self.d_init));
        }
        Ok(())
    }

    pub fn n_ues(&self) -> usize {
        self.betas.len()
    }
}

/// Per-UE input to one scheduling decision.
#[derive(Debug, Clone, Copy)]
pub struct UeTtiInput {
    /// The rate the UE would get from a full-TTI grant (or its requested
    /// rate, depending on the simulator's theta mode), in bits/ms.
    pub achievable_rate: f64,
    /// Bits waiting in the UE's uplink buffer when the TTI starts.
    pub backlog_bits: u64,
    /// Bits one resource block carries for this UE this TTI.
    pub bits_per_rb: u64,
}

/// Resource blocks granted to each UE in one TTI, indexed by UE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub rb_counts: Vec<u32>,
}

impl Allocation {
    pub fn total_rbs(&self) -> u32 {
        self.rb_counts.iter().sum()
    }
}

/// Outcome of one scheduling decision: the grants plus the priority each UE
/// held when the first resource block was decided (useful for traces).
#[derive(Debug, Clone)]
pub struct TtiSchedule {
    pub allocation: Allocation,
    pub priorities: Vec<f64>,
}

/// Denominator update: EMA step followed by the per-UE exponent, floored so
/// it stays strictly positive.
pub fn update_denominator(d_prev: f64, served_rate: f64, alpha: f64, beta: f64) -> f64 {
    debug_assert!(d_prev > 0.0, "denominator must stay positive");
    let raw = (1.0 - alpha) * d_prev + alpha * served_rate;
    raw.powf(beta).max(DENOM_FLOOR)
}

/// Priority coefficient: achievable rate over the smoothed denominator.
pub fn compute_priority(achievable_rate: f64, denom: f64) -> f64 {
    debug_assert!(denom > 0.0, "priority is undefined for a non-positive denominator");
    achievable_rate / denom
}

/// The tunable proportional-fair scheduler. Holds one smoothed denominator
/// per UE between TTIs; everything else is recomputed per decision.
#[derive(Debug, Clone)]
pub struct TunablePfScheduler {
    params: SchedulerParams,
    tti_ms: f64,
    denoms: Vec<f64>,
}

impl TunablePfScheduler {
    pub fn new(params: SchedulerParams, tti_ms: f64) -> Result<Self, ParamError> {
        params.validate()?;
        assert!(tti_ms > 0.0, "TTI duration must be positive");
        let denoms = vec![params.d_init; params.n_ues()];
        Ok(Self { params, tti_ms, denoms })
    }

    pub fn n_ues(&self) -> usize {
        self.params.n_ues()
    }

    pub fn params(&self) -> &SchedulerParams {
        &self.params
    }

    /// Current per-UE smoothed denominators, in bits/ms.
    pub fn denominators(&self) -> &[f64] {
        &self.denoms
    }

    /// Replace the per-UE exponents. Callers must only do this between
    /// TTIs; no TTI ever runs on a partially replaced vector.
    pub fn set_betas(&mut self, betas: &[f64]) -> Result<(), ParamError> {
        if betas.len() != self.params.n_ues() {
            return Err(ParamError::BetaLength {
                expected: self.params.n_ues(),
                got: betas.len(),
            });
        }
        for (index, &value) in betas.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamError::BetaOutOfRange { index, value });
            }
        }
        self.params.betas.copy_from_slice(betas);
        Ok(())
    }

    /// Priority of UE `i` given `granted_bits` already granted to it in the
    /// current TTI. The tentative denominator counts granted capacity as if
    /// it were already served.
    fn tentative_priority(&self, i: usize, input: &UeTtiInput, granted_bits: u64) -> f64 {
        let tentative_rate = granted_bits as f64 / self.tti_ms;
        let denom = update_denominator(
            self.denoms[i],
            tentative_rate,
            self.params.alpha,
            self.params.betas[i],
        );
        compute_priority(input.achievable_rate, denom)
    }

    /// Grant `n_rbs` resource blocks for one TTI.
    ///
    /// Only UEs with a nonempty buffer at TTI start are eligible. While any
    /// eligible UE still has ungranted backlog the highest-priority such UE
    /// wins the next block; once every backlog is covered, remaining blocks
    /// keep flowing to eligible UEs by priority so the TTI stays fully
    /// allocated (they serve no extra bits). With no backlog anywhere the
    /// allocation is empty.
    pub fn schedule_tti(&self, inputs: &[UeTtiInput], n_rbs: u32) -> TtiSchedule {
        assert_eq!(inputs.len(), self.n_ues(), "one input per UE expected");

        let n = inputs.len();
        let mut rb_counts = vec![0u32; n];
        let mut granted_bits = vec![0u64; n];
        let mut priorities: Vec<f64> = (0..n)
            .map(|i| self.tentative_priority(i, &inputs[i], 0))
            .collect();
        let initial_priorities = priorities.clone();

        let eligible: Vec<bool> = inputs.iter().map(|u| u.backlog_bits > 0).collect();
        if !eligible.iter().any(|&e| e) {
            return TtiSchedule {
                allocation: Allocation { rb_counts },
                priorities: initial_priorities,
            };
        }

        for _ in 0..n_rbs {
            let backlogged = |i: usize| granted_bits[i] < inputs[i].backlog_bits;
            let any_backlog = (0..n).any(|i| eligible[i] && backlogged(i));

            let mut winner: Option<usize> = None;
            for i in 0..n {
                if !eligible[i] || (any_backlog && !backlogged(i)) {
                    continue;
                }
                match winner {
                    None => winner = Some(i),
                    Some(w) => {
                        if priorities[i] > priorities[w] {
                            winner = Some(i);
                        }
                    }
                }
            }

            let w = winner.expect("at least one eligible UE");
            rb_counts[w] += 1;
            granted_bits[w] += inputs[w].bits_per_rb;
            priorities[w] = self.tentative_priority(w, &inputs[w], granted_bits[w]);
        }

        TtiSchedule {
            allocation: Allocation { rb_counts },
            priorities: initial_priorities,
        }
    }

    /// Close out a TTI: fold each UE's realized served rate (bits/ms) into
    /// its denominator. UEs that were not served update with a rate of zero,
    /// which decays their denominator and raises their future priority.
    pub fn end_of_tti_update(&mut self, served_rates: &[f64]) {
        assert_eq!(served_rates.len(), self.n_ues(), "one served rate per UE expected");
        for (i, &rate) in served_rates.iter().enumerate() {
            self.denoms[i] = update_denominator(
                self.denoms[i],
                rate,
                self.params.alpha,
                self.params.betas[i],
            );
        }
    }
}
