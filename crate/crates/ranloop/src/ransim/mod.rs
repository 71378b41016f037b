//! Deterministic discrete-time uplink cell simulator.
//!
//! One TTI of simulation: enqueue traffic arrivals, draw per-UE channel
//! quality, invoke the scheduler once, drain served bits from the buffers,
//! fold realized rates back into the scheduler, advance the clock. Served
//! bits are accumulated per measurement window into [`ThroughputSample`]s —
//! the quantity the controller observes.
//!
//! Parameter updates are staged through [`Simulator::stage_control`] and
//! take effect at the next TTI boundary after staging, never mid-TTI, so no
//! TTI runs on a mixed parameter vector.
//!
//! Identical configs and seeds reproduce runs bit for bit: the only
//! randomness is the per-UE channel stream, drawn from counter-mode RNGs
//! keyed by the config seed.

mod config;

use std::collections::VecDeque;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

use crate::sched::{SchedulerParams, TunablePfScheduler, UeTtiInput};
use crate::units;

pub use config::{ChannelConfig, ConfigError, SimConfig, ThetaMode, TrafficConfig, UeConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("window {requested} is not complete yet ({completed} windows finished)")]
    WindowIncomplete { requested: u64, completed: u64 },
    #[error("control rejected: {0}")]
    BadControl(#[from] crate::sched::ParamError),
    #[error("a control is already staged and not yet applied")]
    ControlPending,
}

/// Throughput of one UE over one completed measurement window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputSample {
    pub ue_id: u32,
    pub window_index: u64,
    pub value_mbps: f64,
}

/// Per-UE outcome of a single TTI.
#[derive(Debug, Clone, Copy)]
pub struct UeTtiReport {
    pub rbs_allocated: u32,
    pub bits_served: u64,
    /// Buffer occupancy after service; `u64::MAX` for saturated sources.
    pub buffer_bits: u64,
    pub bits_per_rb: u64,
    /// Priority the UE held when the TTI's first resource block was decided.
    pub gamma: f64,
    /// Smoothed denominator after the end-of-TTI update, bits/ms.
    pub denom: f64,
}

#[derive(Debug, Clone)]
pub struct TtiReport {
    pub tti: u64,
    pub ues: Vec<UeTtiReport>,
}

/// Record of a staged parameter vector taking effect.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedControl {
    pub seq: u64,
    pub applied_at_ms: f64,
}

#[derive(Debug)]
struct StagedControl {
    seq: u64,
    betas: Vec<f64>,
    /// TTI index at whose start the control was staged; it applies at the
    /// start of the first later TTI.
    staged_at_tti: u64,
}

#[derive(Debug)]
enum TrafficState {
    Saturated,
    Cbr {
        bits_per_tti: f64,
        carry: f64,
        queue: VecDeque<(u64, u64)>,
        occupancy: u64,
    },
}

impl TrafficState {
    fn new(cfg: &TrafficConfig, tti_ms: f64) -> Self {
        match *cfg {
            TrafficConfig::Saturated => TrafficState::Saturated,
            TrafficConfig::Cbr { rate_mbps } => TrafficState::Cbr {
                bits_per_tti: units::mbps_to_bits_per_ms(rate_mbps) * tti_ms,
                carry: 0.0,
                queue: VecDeque::new(),
                occupancy: 0,
            },
        }
    }

    /// Enqueue this TTI's arrivals; returns the number of bits that arrived.
    fn arrive(&mut self, tti: u64) -> u64 {
        match self {
            TrafficState::Saturated => 0,
            TrafficState::Cbr { bits_per_tti, carry, queue, occupancy } => {
                *carry += *bits_per_tti;
                let bits = carry.floor() as u64;
                *carry -= bits as f64;
                if bits > 0 {
                    queue.push_back((tti, bits));
                    *occupancy += bits;
                }
                bits
            }
        }
    }

    fn backlog(&self) -> u64 {
        match self {
            TrafficState::Saturated => u64::MAX,
            TrafficState::Cbr { occupancy, .. } => *occupancy,
        }
    }

    /// Drain up to `granted_bits` from the buffer; returns bits served.
    fn serve(&mut self, granted_bits: u64) -> u64 {
        match self {
            TrafficState::Saturated => granted_bits,
            TrafficState::Cbr { queue, occupancy, .. } => {
                let mut remaining = granted_bits.min(*occupancy);
                let served = remaining;
                while remaining > 0 {
                    let (_, bits) = queue.front_mut().expect("occupancy matches queue");
                    if *bits <= remaining {
                        remaining -= *bits;
                        queue.pop_front();
                    } else {
                        *bits -= remaining;
                        remaining = 0;
                    }
                }
                *occupancy -= served;
                served
            }
        }
    }
}

enum Channel {
    Static(u64),
    LogNormal { dist: LogNormal<f64>, rng: ChaCha8Rng },
}

impl Channel {
    fn new(cfg: &ChannelConfig, seed: u64, ue_id: u32) -> Self {
        match cfg.lognormal_sigma {
            None => Channel::Static(cfg.bits_per_rb),
            Some(sigma) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(ue_id as u64 + 1);
                // mu = ln(bits_per_rb) keeps the configured value as the median.
                let dist = LogNormal::new((cfg.bits_per_rb as f64).ln(), sigma)
                    .expect("validated sigma");
                Channel::LogNormal { dist, rng }
            }
        }
    }

    fn draw(&mut self) -> u64 {
        match self {
            Channel::Static(bits) => *bits,
            Channel::LogNormal { dist, rng } => {
                (dist.sample(rng).round() as u64).max(1)
            }
        }
    }
}

pub struct Simulator {
    cfg: SimConfig,
    window_ttis: u64,
    total_ttis: u64,
    sched: TunablePfScheduler,
    traffic: Vec<TrafficState>,
    channels: Vec<Channel>,
    tti_index: u64,
    window_bits: Vec<u64>,
    windows: Vec<Vec<ThroughputSample>>,
    staged: Option<StagedControl>,
    applied_acks: Vec<AppliedControl>,
    cum_arrived: Vec<u64>,
    cum_served: Vec<u64>,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let n = cfg.n_ues();
        let params = SchedulerParams {
            alpha: cfg.alpha,
            betas: vec![1.0; n],
            d_init: cfg.d_init,
        };
        let sched = TunablePfScheduler::new(params, cfg.tti_ms)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let traffic = cfg.ues.iter().map(|u| TrafficState::new(&u.traffic, cfg.tti_ms)).collect();
        let channels = cfg
            .ues
            .iter()
            .map(|u| Channel::new(&u.channel, cfg.rng_seed, u.id))
            .collect();
        Ok(Self {
            window_ttis: cfg.window_ttis(),
            total_ttis: cfg.total_ttis(),
            window_bits: vec![0; n],
            windows: Vec::new(),
            staged: None,
            applied_acks: Vec::new(),
            cum_arrived: vec![0; n],
            cum_served: vec![0; n],
            sched,
            traffic,
            channels,
            tti_index: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn n_ues(&self) -> usize {
        self.cfg.n_ues()
    }

    /// Sim time in milliseconds (the boundary about to be executed).
    pub fn time_ms(&self) -> f64 {
        self.tti_index as f64 * self.cfg.tti_ms
    }

    pub fn ttis_executed(&self) -> u64 {
        self.tti_index
    }

    pub fn is_finished(&self) -> bool {
        self.tti_index >= self.total_ttis
    }

    pub fn windows_completed(&self) -> u64 {
        self.windows.len() as u64
    }

    pub fn current_betas(&self) -> &[f64] {
        &self.sched.params().betas
    }

    /// Stage a parameter vector for the next TTI boundary after this one.
    /// Rejects vectors with the wrong length or out-of-range values; at
    /// most one control may be in flight at a time.
    pub fn stage_control(&mut self, seq: u64, betas: Vec<f64>) -> Result<(), SimError> {
        if self.staged.is_some() {
            return Err(SimError::ControlPending);
        }
        // Reject bad vectors at receipt, not at apply time.
        if betas.len() != self.n_ues() {
            return Err(crate::sched::ParamError::BetaLength {
                expected: self.n_ues(),
                got: betas.len(),
            }
            .into());
        }
        for (index, &value) in betas.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(crate::sched::ParamError::BetaOutOfRange { index, value }.into());
            }
        }
        self.staged = Some(StagedControl { seq, betas, staged_at_tti: self.tti_index });
        Ok(())
    }

    /// Replace the scheduler's exponent vector at the current boundary,
    /// bypassing the staging delay. Meant for characterization runs that
    /// fix parameters before the first TTI; closed-loop updates go through
    /// [`Simulator::stage_control`].
    pub fn force_betas(&mut self, betas: &[f64]) -> Result<(), crate::sched::ParamError> {
        self.sched.set_betas(betas)
    }

    /// Controls that have taken effect since the last call.
    pub fn drain_applied_acks(&mut self) -> Vec<AppliedControl> {
        std::mem::take(&mut self.applied_acks)
    }

    /// Samples of a completed measurement window.
    pub fn window_samples(&self, window_index: u64) -> Result<&[ThroughputSample], SimError> {
        self.windows
            .get(window_index as usize)
            .map(|w| w.as_slice())
            .ok_or(SimError::WindowIncomplete {
                requested: window_index,
                completed: self.windows.len() as u64,
            })
    }

    pub fn all_windows(&self) -> &[Vec<ThroughputSample>] {
        &self.windows
    }

    /// Execute one TTI and report what happened.
    pub fn step_tti(&mut self) -> TtiReport {
        let n = self.n_ues();
        let tti = self.tti_index;

        // Apply a staged control strictly after the boundary it was staged at.
        if let Some(staged) = &self.staged {
            if staged.staged_at_tti < tti {
                let staged = self.staged.take().expect("checked above");
                self.sched
                    .set_betas(&staged.betas)
                    .expect("control was validated when staged");
                self.applied_acks.push(AppliedControl {
                    seq: staged.seq,
                    applied_at_ms: self.time_ms(),
                });
            }
        }

        for (i, t) in self.traffic.iter_mut().enumerate() {
            self.cum_arrived[i] = self.cum_arrived[i].saturating_add(t.arrive(tti));
        }

        let inputs: Vec<UeTtiInput> = (0..n)
            .map(|i| {
                let bits_per_rb = self.channels[i].draw();
                let achievable = match self.cfg.theta_mode {
                    ThetaMode::Achievable => {
                        (bits_per_rb * self.cfg.n_rbs_per_tti as u64) as f64 / self.cfg.tti_ms
                    }
                    ThetaMode::Requested => units::mbps_to_bits_per_ms(
                        self.cfg.ues[i]
                            .requested_rate_mbps
                            .expect("validated for requested mode"),
                    ),
                };
                UeTtiInput {
                    achievable_rate: achievable,
                    backlog_bits: self.traffic[i].backlog(),
                    bits_per_rb,
                }
            })
            .collect();

        let schedule = self.sched.schedule_tti(&inputs, self.cfg.n_rbs_per_tti);
        debug_assert!(schedule.allocation.total_rbs() <= self.cfg.n_rbs_per_tti);
        debug_assert!(
            !inputs.iter().any(|u| u.backlog_bits > 0)
                || schedule.allocation.total_rbs() == self.cfg.n_rbs_per_tti,
            "work conservation violated"
        );

        let mut served_rates = vec![0.0; n];
        let mut ues = Vec::with_capacity(n);
        for i in 0..n {
            let rbs = schedule.allocation.rb_counts[i];
            let granted = rbs as u64 * inputs[i].bits_per_rb;
            let served = self.traffic[i].serve(granted);
            self.cum_served[i] += served;
            self.window_bits[i] += served;
            served_rates[i] = served as f64 / self.cfg.tti_ms;
            ues.push(UeTtiReport {
                rbs_allocated: rbs,
                bits_served: served,
                buffer_bits: self.traffic[i].backlog(),
                bits_per_rb: inputs[i].bits_per_rb,
                gamma: schedule.priorities[i],
                denom: 0.0, // filled in after the update below
            });
        }
        self.sched.end_of_tti_update(&served_rates);
        for (i, ue) in ues.iter_mut().enumerate() {
            ue.denom = self.sched.denominators()[i];
        }

        self.tti_index += 1;
        if self.tti_index % self.window_ttis == 0 {
            let window_index = self.tti_index / self.window_ttis - 1;
            let window_ms = self.cfg.measurement_window_ms;
            let samples = self
                .window_bits
                .iter()
                .enumerate()
                .map(|(i, &bits)| ThroughputSample {
                    ue_id: i as u32,
                    window_index,
                    value_mbps: units::bits_per_ms_to_mbps(bits as f64 / window_ms),
                })
                .collect();
            self.windows.push(samples);
            self.window_bits.iter_mut().for_each(|b| *b = 0);
        }

        TtiReport { tti, ues }
    }

    /// Step through the next full measurement window and return its samples.
    pub fn run_window(&mut self) -> Vec<ThroughputSample> {
        for _ in 0..self.window_ttis {
            self.step_tti();
        }
        self.windows.last().expect("a window just completed").clone()
    }

    /// Run until the configured duration is exhausted.
    pub fn run_to_end(&mut self) {
        while !self.is_finished() {
            self.step_tti();
        }
    }

    /// Cumulative (arrived, served) bits per UE; served never exceeds
    /// arrived for CBR sources.
    pub fn conservation_totals(&self) -> (Vec<u64>, Vec<u64>) {
        (self.cum_arrived.clone(), self.cum_served.clone())
    }
}

/// Write completed windows as CSV with the `window,ue,value_mbps` schema.
pub fn write_windows_csv<W: Write>(windows: &[Vec<ThroughputSample>], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window", "ue", "value_mbps"])?;
    for window in windows {
        for s in window {
            w.write_record(&[
                s.window_index.to_string(),
                s.ue_id.to_string(),
                format!("{}", s.value_mbps),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a `window,ue,value_mbps` CSV back into per-window sample vectors.
pub fn read_windows_csv<R: std::io::Read>(input: R) -> Result<Vec<Vec<ThroughputSample>>, csv::Error> {
    let mut reader = csv::Reader::from_reader(input);
    let mut windows: Vec<Vec<ThroughputSample>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let window_index: u64 = record[0].parse().map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad window: {e}"))
        })?;
        let ue_id: u32 = record[1].parse().map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad ue: {e}"))
        })?;
        let value_mbps: f64 = record[2].parse().map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad value: {e}"))
        })?;
        if windows.len() as u64 <= window_index {
            windows.resize(window_index as usize + 1, Vec::new());
        }
        windows[window_index as usize].push(ThroughputSample { ue_id, window_index, value_mbps });
    }
    Ok(windows)
}

/// Write a per-TTI scheduler trace as CSV with the `tti,ue,gamma,d,rbs,bits`
/// schema.
pub fn write_sched_trace_csv<W: Write>(reports: &[TtiReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tti", "ue", "gamma", "d", "rbs", "bits"])?;
    for report in reports {
        for (i, ue) in report.ues.iter().enumerate() {
            w.write_record(&[
                report.tti.to_string(),
                i.to_string(),
                format!("{}", ue.gamma),
                format!("{}", ue.denom),
                ue.rbs_allocated.to_string(),
                ue.bits_served.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_ue_cfg(traffic0: &str, traffic1: &str) -> SimConfig {
        let text = format!(
            r#"
                tti_ms = 1.0
                n_rbs_per_tti = 10
                measurement_window_ms = 50.0
                sim_duration_ms = 2000.0
                rng_seed = 11

                [[ue]]
                id = 0
                traffic = {traffic0}
                channel = {{ bits_per_rb = 100 }}

                [[ue]]
                id = 1
                traffic = {traffic1}
                channel = {{ bits_per_rb = 100 }}
            "#
        );
        SimConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn empty_buffer_serves_nothing() {
        let cfg = two_ue_cfg(r#"{ kind = "cbr", rate_mbps = 0.0 }"#, r#"{ kind = "cbr", rate_mbps = 0.0 }"#);
        let mut sim = Simulator::new(cfg).unwrap();
        let report = sim.step_tti();
        assert!(report.ues.iter().all(|u| u.bits_served == 0));
    }

    #[test]
    fn single_saturated_ue_fills_the_tti() {
        let cfg = two_ue_cfg(r#"{ kind = "saturated" }"#, r#"{ kind = "cbr", rate_mbps = 0.0 }"#);
        let mut sim = Simulator::new(cfg).unwrap();
        let report = sim.step_tti();
        assert_eq!(report.ues[0].rbs_allocated, 10);
        assert_eq!(report.ues[0].bits_served, 1000);
        assert_eq!(report.ues[1].bits_served, 0);
    }

    #[test]
    fn window_arithmetic() {
        // 100_000 bits over a 50 ms window is 2 Mbit/s.
        let bits = 100_000u64;
        let mbps = units::bits_per_ms_to_mbps(bits as f64 / 50.0);
        assert_eq!(mbps, 2.0);
    }

    #[test]
    fn cbr_drains_at_its_rate_when_uncontended() {
        let cfg = two_ue_cfg(r#"{ kind = "cbr", rate_mbps = 1.0 }"#, r#"{ kind = "cbr", rate_mbps = 0.0 }"#);
        let mut sim = Simulator::new(cfg).unwrap();
        sim.run_to_end();
        // Capacity is 10 Mbit/s, offered load 1 Mbit/s: every window drains
        // the arrivals exactly (up to one TTI of quantization).
        for window in sim.all_windows() {
            assert!(
                (window[0].value_mbps - 1.0).abs() < 0.05,
                "window {} value {}",
                window[0].window_index,
                window[0].value_mbps
            );
        }
    }

    #[test]
    fn incomplete_window_is_an_error() {
        let cfg = two_ue_cfg(r#"{ kind = "saturated" }"#, r#"{ kind = "saturated" }"#);
        let mut sim = Simulator::new(cfg).unwrap();
        assert!(matches!(
            sim.window_samples(0),
            Err(SimError::WindowIncomplete { .. })
        ));
        for _ in 0..50 {
            sim.step_tti();
        }
        assert_eq!(sim.window_samples(0).unwrap().len(), 2);
        assert!(sim.window_samples(1).is_err());
    }

    #[test]
    fn determinism_bit_for_bit() {
        let mk = || {
            let text = r#"
                n_rbs_per_tti = 10
                measurement_window_ms = 20.0
                sim_duration_ms = 400.0
                rng_seed = 3

                [[ue]]
                id = 0
                traffic = { kind = "saturated" }
                channel = { bits_per_rb = 100, lognormal_sigma = 0.2 }

                [[ue]]
                id = 1
                traffic = { kind = "cbr", rate_mbps = 0.7 }
                channel = { bits_per_rb = 80, lognormal_sigma = 0.3 }
            "#;
            Simulator::new(SimConfig::from_toml_str(text).unwrap()).unwrap()
        };
        let mut a = mk();
        let mut b = mk();
        while !a.is_finished() {
            let ra = a.step_tti();
            let rb = b.step_tti();
            for (ua, ub) in ra.ues.iter().zip(&rb.ues) {
                assert_eq!(ua.rbs_allocated, ub.rbs_allocated);
                assert_eq!(ua.bits_served, ub.bits_served);
                assert_eq!(ua.bits_per_rb, ub.bits_per_rb);
                assert_eq!(ua.gamma.to_bits(), ub.gamma.to_bits());
                assert_eq!(ua.denom.to_bits(), ub.denom.to_bits());
            }
        }
    }

    #[test]
    fn conservation_and_capacity() {
        let cfg = two_ue_cfg(r#"{ kind = "cbr", rate_mbps = 6.0 }"#, r#"{ kind = "cbr", rate_mbps = 6.0 }"#);
        let mut sim = Simulator::new(cfg).unwrap();
        while !sim.is_finished() {
            let report = sim.step_tti();
            let total: u32 = report.ues.iter().map(|u| u.rbs_allocated).sum();
            assert!(total <= 10);
        }
        let (arrived, served) = sim.conservation_totals();
        for i in 0..2 {
            assert!(served[i] <= arrived[i], "ue {i}: served {} > arrived {}", served[i], arrived[i]);
        }
    }

    #[test]
    fn staged_control_applies_next_boundary() {
        let cfg = two_ue_cfg(r#"{ kind = "saturated" }"#, r#"{ kind = "saturated" }"#);
        let mut sim = Simulator::new(cfg).unwrap();
        sim.step_tti();
        assert_eq!(sim.time_ms(), 1.0);
        sim.stage_control(1, vec![0.8, 1.0]).unwrap();
        assert_eq!(sim.current_betas(), &[1.0, 1.0]);
        sim.step_tti(); // staged at boundary 1, still runs on old betas
        assert_eq!(sim.current_betas(), &[1.0, 1.0]);
        sim.step_tti(); // applied at boundary 2
        assert_eq!(sim.current_betas(), &[0.8, 1.0]);
        let acks = sim.drain_applied_acks();
        assert_eq!(acks, vec![AppliedControl { seq: 1, applied_at_ms: 2.0 }]);
    }

    #[test]
    fn control_validation() {
        let cfg = two_ue_cfg(r#"{ kind = "saturated" }"#, r#"{ kind = "saturated" }"#);
        let mut sim = Simulator::new(cfg).unwrap();
        assert!(matches!(
            sim.stage_control(1, vec![1.0]),
            Err(SimError::BadControl(_))
        ));
        assert!(matches!(
            sim.stage_control(1, vec![1.0, 1.5]),
            Err(SimError::BadControl(_))
        ));
        sim.stage_control(1, vec![1.0, 0.9]).unwrap();
        assert!(matches!(
            sim.stage_control(2, vec![1.0, 0.8]),
            Err(SimError::ControlPending)
        ));
    }

    #[test]
    fn windows_csv_round_trip() {
        let cfg = two_ue_cfg(r#"{ kind = "saturated" }"#, r#"{ kind = "saturated" }"#);
        let mut sim = Simulator::new(cfg).unwrap();
        for _ in 0..3 {
            sim.run_window();
        }
        let mut buf = Vec::new();
        write_windows_csv(sim.all_windows(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("window,ue,value_mbps\n"), "{text}");
        let back = read_windows_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        for (w, orig) in back.iter().zip(sim.all_windows()) {
            assert_eq!(w, orig);
        }
    }
}
