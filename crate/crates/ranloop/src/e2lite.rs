//! Lightweight analog of the E2 interface between the cell (DU side) and
//! the controller (RIC side): indication messages carry per-UE throughput
//! reports upward, control messages carry parameter vectors downward, and
//! every hop is timestamped so the closed-loop KPIs can be measured.
//!
//! In-process the two sides just hand structs to each other. Across
//! processes each message travels as one newline-delimited JSON frame over
//! a local stream socket (see [`transport`]); the schema is versioned with
//! the `v` field and documented in the crate README.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ransim::{Simulator, ThroughputSample};

/// Frame schema version carried by every message.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("control message rejected: {0}")]
    Rejected(#[from] crate::ransim::SimError),
    #[error("unsupported protocol version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeThroughput {
    pub ue_id: u32,
    pub mbps: f64,
}

/// Per-window throughput report, DU -> RIC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicationMessage {
    pub v: u32,
    pub seq: u64,
    pub timestamp_ms: f64,
    pub window_index: u64,
    pub samples: Vec<UeThroughput>,
}

/// Parameter update, RIC -> DU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub v: u32,
    pub seq: u64,
    pub issued_at_ms: f64,
    pub betas: Vec<f64>,
}

/// Confirmation that a control took effect, DU -> RIC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAck {
    pub v: u32,
    pub seq: u64,
    pub applied_at_ms: f64,
}

/// Everything that can travel on the wire, tagged by frame type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Indication(IndicationMessage),
    Control(ControlMessage),
    Ack(ControlAck),
}

impl Frame {
    pub fn version(&self) -> u32 {
        match self {
            Frame::Indication(m) => m.v,
            Frame::Control(m) => m.v,
            Frame::Ack(m) => m.v,
        }
    }
}

/// Build the indication for one completed window. Samples cover every UE
/// exactly once, in UE order; `seq` must be strictly increasing across
/// calls (the caller owns the counter).
pub fn publish_indication(
    seq: u64,
    timestamp_ms: f64,
    window_index: u64,
    samples: &[ThroughputSample],
) -> IndicationMessage {
    IndicationMessage {
        v: PROTOCOL_VERSION,
        seq,
        timestamp_ms,
        window_index,
        samples: samples
            .iter()
            .map(|s| UeThroughput { ue_id: s.ue_id, mbps: s.value_mbps })
            .collect(),
    }
}

/// Validate a control message and stage it on the simulator. The vector is
/// swapped in at the next TTI boundary; the matching [`ControlAck`] becomes
/// available from [`Simulator::drain_applied_acks`] once that happens.
pub fn apply_control(msg: &ControlMessage, sim: &mut Simulator) -> Result<(), ControlError> {
    if msg.v != PROTOCOL_VERSION {
        return Err(ControlError::Version(msg.v));
    }
    sim.stage_control(msg.seq, msg.betas.clone())?;
    Ok(())
}

/// One timestamped step of a control episode. Times are on whichever clock
/// the caller uses consistently (sim clock in-process, wall clock across
/// the socket).
#[derive(Debug, Clone, PartialEq)]
pub enum LoopEvent {
    /// A requirement vector was set (episode start).
    RequirementSet { t_ms: f64 },
    /// The controller finished computing the parameter vector.
    BetasComputed { t_ms: f64 },
    /// The scheduler started using the new vector.
    ControlApplied { t_ms: f64 },
    /// A measurement window ended; `satisfied` says whether every UE met
    /// the episode's requirement in it.
    WindowObserved { t_end_ms: f64, satisfied: bool },
}

/// The three closed-loop KPIs for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopKpis {
    /// Requirement set -> parameter vector computed.
    pub xapp_processing_ms: f64,
    /// Requirement set -> scheduler running on the new vector.
    pub control_loop_ms: f64,
    /// Requirement set -> end of the first satisfying window observed after
    /// application. Absent when the run ended before any window satisfied
    /// the requirement.
    pub control_latency_ms: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum KpiError {
    #[error("episode log is missing a {0} event")]
    MissingEvent(&'static str),
    #[error("episode events are out of order: {0}")]
    OutOfOrder(&'static str),
}

/// Compute the loop KPIs from one episode's event log.
///
/// Only windows ending strictly after the control applied count toward the
/// latency: a sample gathered under the old parameters cannot witness the
/// new ones. The log must contain the requirement, computation, and
/// application events; a missing satisfying window yields an absent
/// latency, not an error.
pub fn measure_kpis(events: &[LoopEvent]) -> Result<LoopKpis, KpiError> {
    let mut t_set = None;
    let mut t_computed = None;
    let mut t_applied = None;
    let mut t_satisfied = None;
    for event in events {
        match *event {
            LoopEvent::RequirementSet { t_ms } => t_set = Some(t_ms),
            LoopEvent::BetasComputed { t_ms } => t_computed = Some(t_ms),
            LoopEvent::ControlApplied { t_ms } => t_applied = Some(t_ms),
            LoopEvent::WindowObserved { t_end_ms, satisfied } => {
                if satisfied && t_satisfied.is_none() {
                    if let Some(applied) = t_applied {
                        if t_end_ms > applied {
                            t_satisfied = Some(t_end_ms);
                        }
                    }
                }
            }
        }
    }
    let t_set = t_set.ok_or(KpiError::MissingEvent("RequirementSet"))?;
    let t_computed = t_computed.ok_or(KpiError::MissingEvent("BetasComputed"))?;
    let t_applied = t_applied.ok_or(KpiError::MissingEvent("ControlApplied"))?;
    if t_computed < t_set {
        return Err(KpiError::OutOfOrder("computed before requirement"));
    }
    if t_applied < t_computed {
        return Err(KpiError::OutOfOrder("applied before computed"));
    }
    Ok(LoopKpis {
        xapp_processing_ms: t_computed - t_set,
        control_loop_ms: t_applied - t_set,
        control_latency_ms: t_satisfied.map(|t| t - t_set),
    })
}

pub mod transport {
    //! Newline-delimited JSON framing over any `Read`/`Write` pair, plus a
    //! tiny TCP wrapper for the two-process mode. One frame per line; a
    //! frame whose `v` field does not match [`PROTOCOL_VERSION`] is
    //! rejected.

    use std::io::{BufRead, BufReader, Write};
    use std::net::{TcpListener, TcpStream};

    use thiserror::Error;

    use super::{Frame, PROTOCOL_VERSION};

    #[derive(Debug, Error)]
    pub enum FrameError {
        #[error("i/o error: {0}")]
        Io(#[from] std::io::Error),
        #[error("malformed frame: {0}")]
        Malformed(#[from] serde_json::Error),
        #[error("unsupported protocol version {0}")]
        Version(u32),
    }

    pub fn write_frame<W: Write>(mut out: W, frame: &Frame) -> Result<(), FrameError> {
        let line = serde_json::to_string(frame)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    /// Read the next frame; `Ok(None)` on clean end of stream.
    pub fn read_frame<R: BufRead>(input: &mut R) -> Result<Option<Frame>, FrameError> {
        let mut line = String::new();
        loop {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Ok(None);
            }
            if line.trim().is_empty() {
                continue;
            }
            let frame: Frame = serde_json::from_str(line.trim_end())?;
            if frame.version() != PROTOCOL_VERSION {
                return Err(FrameError::Version(frame.version()));
            }
            return Ok(Some(frame));
        }
    }

    /// A connected frame stream (either side of the socket).
    pub struct FrameConn {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    }

    impl FrameConn {
        pub fn from_stream(stream: TcpStream) -> std::io::Result<Self> {
            stream.set_nodelay(true)?;
            let writer = stream.try_clone()?;
            Ok(Self { reader: BufReader::new(stream), writer })
        }

        pub fn connect(addr: &str) -> std::io::Result<Self> {
            Self::from_stream(TcpStream::connect(addr)?)
        }

        pub fn send(&mut self, frame: &Frame) -> Result<(), FrameError> {
            write_frame(&mut self.writer, frame)
        }

        pub fn recv(&mut self) -> Result<Option<Frame>, FrameError> {
            read_frame(&mut self.reader)
        }

        /// Break the connection into a read half and a write half so one
        /// thread can block on receives while another keeps sending.
        pub fn split(self) -> (BufReader<TcpStream>, TcpStream) {
            (self.reader, self.writer)
        }
    }

    /// Half-close the write direction so the peer sees end of stream.
    pub fn shutdown_write(stream: &TcpStream) -> std::io::Result<()> {
        stream.shutdown(std::net::Shutdown::Write)
    }

    /// Bind a loopback listener on an ephemeral port; returns the listener
    /// and its address for the peer to connect to.
    pub fn listen_local() -> std::io::Result<(TcpListener, String)> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?.to_string();
        Ok((listener, addr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ransim::SimConfig;

    fn four_ue_sim() -> Simulator {
        let text = r#"
            n_rbs_per_tti = 10
            measurement_window_ms = 50.0
            sim_duration_ms = 500.0
            rng_seed = 5

            [[ue]]
            id = 0
            traffic = { kind = "saturated" }
            channel = { bits_per_rb = 100 }
            [[ue]]
            id = 1
            traffic = { kind = "saturated" }
            channel = { bits_per_rb = 100 }
            [[ue]]
            id = 2
            traffic = { kind = "saturated" }
            channel = { bits_per_rb = 100 }
            [[ue]]
            id = 3
            traffic = { kind = "saturated" }
            channel = { bits_per_rb = 100 }
        "#;
        Simulator::new(SimConfig::from_toml_str(text).unwrap()).unwrap()
    }

    fn control(betas: Vec<f64>) -> ControlMessage {
        ControlMessage { v: PROTOCOL_VERSION, seq: 1, issued_at_ms: 0.0, betas }
    }

    #[test]
    fn wrong_length_beta_vector_is_rejected() {
        let mut sim = four_ue_sim();
        let err = apply_control(&control(vec![1.0, 1.0, 1.0]), &mut sim).unwrap_err();
        assert!(matches!(err, ControlError::Rejected(_)), "{err}");
    }

    #[test]
    fn out_of_range_beta_is_rejected() {
        let mut sim = four_ue_sim();
        assert!(apply_control(&control(vec![1.0, 1.0, 1.0, -0.1]), &mut sim).is_err());
        assert!(apply_control(&control(vec![1.0, 1.0, 1.0, 1.0]), &mut sim).is_ok());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut sim = four_ue_sim();
        let mut msg = control(vec![1.0; 4]);
        msg.v = 99;
        assert!(matches!(
            apply_control(&msg, &mut sim),
            Err(ControlError::Version(99))
        ));
    }

    #[test]
    fn indication_covers_each_ue_once() {
        let mut sim = four_ue_sim();
        let samples = sim.run_window();
        let ind = publish_indication(7, sim.time_ms(), 0, &samples);
        assert_eq!(ind.samples.len(), 4);
        let mut ids: Vec<u32> = ind.samples.iter().map(|s| s.ue_id).collect();
        ids.dedup();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        assert_eq!(ind.timestamp_ms, 50.0);
    }

    #[test]
    fn kpis_from_synthetic_log() {
        let events = vec![
            LoopEvent::RequirementSet { t_ms: 100.0 },
            LoopEvent::BetasComputed { t_ms: 101.5 },
            LoopEvent::ControlApplied { t_ms: 103.0 },
            LoopEvent::WindowObserved { t_end_ms: 100.0, satisfied: true }, // too early
            LoopEvent::WindowObserved { t_end_ms: 150.0, satisfied: false },
            LoopEvent::WindowObserved { t_end_ms: 200.0, satisfied: true },
            LoopEvent::WindowObserved { t_end_ms: 250.0, satisfied: true },
        ];
        let kpis = measure_kpis(&events).unwrap();
        assert_eq!(kpis.xapp_processing_ms, 1.5);
        assert_eq!(kpis.control_loop_ms, 3.0);
        assert_eq!(kpis.control_latency_ms, Some(100.0));
    }

    #[test]
    fn pre_satisfied_requirement_waits_for_the_running_window() {
        // Control applies mid-window; the first countable sample is the end
        // of the window in progress, so latency = loop time + remainder.
        let events = vec![
            LoopEvent::RequirementSet { t_ms: 100.0 },
            LoopEvent::BetasComputed { t_ms: 100.0 },
            LoopEvent::ControlApplied { t_ms: 110.0 },
            LoopEvent::WindowObserved { t_end_ms: 150.0, satisfied: true },
        ];
        let kpis = measure_kpis(&events).unwrap();
        assert_eq!(kpis.control_loop_ms, 10.0);
        assert_eq!(kpis.control_latency_ms, Some(50.0));
    }

    #[test]
    fn unsatisfiable_requirement_reports_absent_latency() {
        let events = vec![
            LoopEvent::RequirementSet { t_ms: 0.0 },
            LoopEvent::BetasComputed { t_ms: 0.0 },
            LoopEvent::ControlApplied { t_ms: 1.0 },
            LoopEvent::WindowObserved { t_end_ms: 50.0, satisfied: false },
            LoopEvent::WindowObserved { t_end_ms: 100.0, satisfied: false },
        ];
        let kpis = measure_kpis(&events).unwrap();
        assert_eq!(kpis.control_latency_ms, None);
        assert!(kpis.xapp_processing_ms <= kpis.control_loop_ms);
    }

    #[test]
    fn incomplete_log_is_an_error() {
        let events = vec![LoopEvent::RequirementSet { t_ms: 0.0 }];
        assert_eq!(
            measure_kpis(&events),
            Err(KpiError::MissingEvent("BetasComputed"))
        );
    }

    #[test]
    fn frame_round_trip_over_buffers() {
        use super::transport::{read_frame, write_frame};

        let frames = vec![
            Frame::Indication(IndicationMessage {
                v: PROTOCOL_VERSION,
                seq: 1,
                timestamp_ms: 50.0,
                window_index: 0,
                samples: vec![
                    UeThroughput { ue_id: 0, mbps: 2.0 },
                    UeThroughput { ue_id: 1, mbps: 0.5 },
                ],
            }),
            Frame::Control(ControlMessage {
                v: PROTOCOL_VERSION,
                seq: 2,
                issued_at_ms: 50.0,
                betas: vec![0.8, 1.0],
            }),
            Frame::Ack(ControlAck { v: PROTOCOL_VERSION, seq: 2, applied_at_ms: 51.0 }),
        ];
        let mut buf = Vec::new();
        for f in &frames {
            write_frame(&mut buf, f).unwrap();
        }
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 3);

        let mut reader = std::io::BufReader::new(&buf[..]);
        for f in &frames {
            assert_eq!(read_frame(&mut reader).unwrap().as_ref(), Some(f));
        }
        assert_eq!(read_frame(&mut reader).unwrap(), None);
    }

    #[test]
    fn old_version_frame_is_rejected() {
        use super::transport::{read_frame, FrameError};
        let line = r#"{"type":"ack","v":0,"seq":1,"applied_at_ms":1.0}"#;
        let mut reader = std::io::BufReader::new(line.as_bytes());
        assert!(matches!(read_frame(&mut reader), Err(FrameError::Version(0))));
    }
}
