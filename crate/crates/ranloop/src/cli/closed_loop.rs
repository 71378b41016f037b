//! The closed control loop: requirement schedule in, parameter updates
//! out, with a baseline run alongside for every success-rate comparison.
//!
//! Two transports share the episode bookkeeping. In-process, the
//! controller is called directly at window boundaries and KPIs run on the
//! sim clock. Over the socket transport the cell and controller exchange
//! the same messages as JSON frames across a loopback TCP connection from
//! two threads, and wall-clock KPIs are reported next to the sim-clock
//! ones.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CliError, ExperimentSpec, ScheduleItem, REPORT_VERSION};
use crate::e2lite::{
    self, measure_kpis, publish_indication, transport::FrameConn, ControlMessage, Frame,
    LoopEvent, LoopKpis, PROTOCOL_VERSION,
};
use crate::ransim::{write_sched_trace_csv, Simulator, ThroughputSample, TtiReport};
use crate::xapp::{self, window_satisfies, PolicyTable, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    InProcess,
    Socket,
}

impl Transport {
    fn as_str(&self) -> &'static str {
        match self {
            Transport::InProcess => "in_process",
            Transport::Socket => "socket",
        }
    }
}

/// Knobs for one closed-loop run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub transport: Transport,
    /// Pin the scheduler to this vector for the whole run instead of
    /// consulting the policy table (characterization/identity checks).
    pub force_betas: Option<Vec<f64>>,
    /// Also dump the per-TTI scheduler trace to this path.
    pub sched_trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaChange {
    pub at_ms: f64,
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: usize,
    pub at_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub framing_camera: Option<u32>,
    pub requirement_mbps: Vec<f64>,
    /// The controller's answer; absent when the requirement was infeasible
    /// or the run was forced to a fixed vector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasible: Option<String>,
    /// Sim-clock loop KPIs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kpis: Option<LoopKpis>,
    /// Wall-clock loop KPIs (socket transport only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kpis_wall: Option<LoopKpis>,
    /// Wall-clock time the selection took, microseconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xapp_wall_us: Option<f64>,
    pub p_s: f64,
    pub p_s_baseline: f64,
    pub delta_ps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub v: u32,
    pub name: String,
    pub transport: String,
    pub windows_csv: String,
    pub baseline_csv: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sched_trace_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forced_betas: Option<Vec<f64>>,
    pub avg_p_s: f64,
    pub avg_p_s_baseline: f64,
    pub avg_delta_ps: f64,
    pub infeasible_count: usize,
    pub episodes: Vec<EpisodeOutcome>,
    pub beta_history: Vec<BetaChange>,
}

/// Episode bookkeeping shared by both transports.
struct EpisodeState {
    item: ScheduleItem,
    start_window: u64,
    end_window: u64,
    selection: Option<Selection>,
    infeasible: Option<String>,
    events: Vec<LoopEvent>,
    events_wall: Vec<LoopEvent>,
    xapp_wall_us: Option<f64>,
}

fn build_episode_states(spec: &ExperimentSpec, total_windows: u64) -> Vec<EpisodeState> {
    let t_a = spec.sim_config.measurement_window_ms;
    (0..spec.schedule.len())
        .map(|i| {
            let item = spec.schedule[i].clone();
            let start_window = (item.at_ms / t_a).round() as u64;
            let end_window = spec
                .schedule
                .get(i + 1)
                .map(|next| (next.at_ms / t_a).round() as u64)
                .unwrap_or(total_windows);
            EpisodeState {
                item,
                start_window,
                end_window,
                selection: None,
                infeasible: None,
                events: Vec::new(),
                events_wall: Vec::new(),
                xapp_wall_us: None,
            }
        })
        .collect()
}

fn episode_covering(episodes: &[EpisodeState], window: u64) -> Option<usize> {
    episodes
        .iter()
        .position(|ep| window >= ep.start_window && window < ep.end_window)
}

/// Run the full experiment: the controlled run on the chosen transport, a
/// baseline run with identical seeds and traffic but untouched parameters,
/// per-episode scoring, and all output files under `out_dir`.
pub fn run_closed_loop(
    spec: &ExperimentSpec,
    table: &PolicyTable,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunReport, CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    if opts.force_betas.is_some() && opts.transport == Transport::Socket {
        return Err(CliError::validation(
            "forced beta vectors are only supported on the in-process transport",
        ));
    }

    let total_windows = spec.sim_config.total_ttis() / spec.sim_config.window_ttis();
    let mut episodes = build_episode_states(spec, total_windows);

    let (windows, beta_history, traces) = match opts.transport {
        Transport::InProcess => run_in_process(spec, table, &mut episodes, opts)?,
        Transport::Socket => run_socket(spec, table, &mut episodes)?,
    };

    // Baseline: same cell, same seeds, parameters left at the default.
    let mut baseline_sim = Simulator::new(spec.sim_config.clone())
        .map_err(|e| CliError::validation(e.to_string()))?;
    baseline_sim.run_to_end();
    let baseline_windows = baseline_sim.all_windows().to_vec();

    // Output files.
    let windows_csv = out_dir.join(format!("{}_windows.csv", spec.name));
    write_windows(&windows, &windows_csv)?;
    let baseline_csv = out_dir.join(format!("{}_baseline.csv", spec.name));
    write_windows(&baseline_windows, &baseline_csv)?;
    let sched_trace_csv = match (&opts.sched_trace, traces) {
        (Some(path), Some(traces)) => {
            let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            write_sched_trace_csv(&traces, file).map_err(|e| CliError::Internal(e.to_string()))?;
            Some(path.display().to_string())
        }
        _ => None,
    };

    // Score each episode over its own window range.
    let mut outcomes = Vec::new();
    let mut infeasible_count = 0;
    for (i, ep) in episodes.iter().enumerate() {
        let start = ep.start_window as usize;
        let end = (ep.end_window as usize).min(windows.len()).min(baseline_windows.len());
        let score = xapp::evaluate_success(
            &ep.item.query.mbps,
            &windows[start..end],
            &baseline_windows[start..end],
        );
        if ep.infeasible.is_some() {
            infeasible_count += 1;
        }
        outcomes.push(EpisodeOutcome {
            episode: i,
            at_ms: ep.item.at_ms,
            framing_camera: ep.item.framing_camera,
            requirement_mbps: ep.item.query.mbps.clone(),
            selection: ep.selection.clone(),
            infeasible: ep.infeasible.clone(),
            kpis: measure_kpis(&ep.events).ok(),
            kpis_wall: measure_kpis(&ep.events_wall).ok(),
            xapp_wall_us: ep.xapp_wall_us,
            p_s: score.p_s,
            p_s_baseline: score.p_s_baseline,
            delta_ps: score.delta_ps,
        });
    }

    let n = outcomes.len().max(1) as f64;
    let report = RunReport {
        v: REPORT_VERSION,
        name: spec.name.clone(),
        transport: opts.transport.as_str().to_string(),
        windows_csv: windows_csv.display().to_string(),
        baseline_csv: baseline_csv.display().to_string(),
        sched_trace_csv,
        forced_betas: opts.force_betas.clone(),
        avg_p_s: outcomes.iter().map(|e| e.p_s).sum::<f64>() / n,
        avg_p_s_baseline: outcomes.iter().map(|e| e.p_s_baseline).sum::<f64>() / n,
        avg_delta_ps: outcomes.iter().map(|e| e.delta_ps).sum::<f64>() / n,
        infeasible_count,
        episodes: outcomes,
        beta_history,
    };

    let report_path = out_dir.join(format!("{}_report.json", spec.name));
    let mut f = fs::File::create(&report_path).map_err(|e| CliError::io(&report_path, e))?;
    f.write_all(serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())
        .map_err(|e| CliError::io(&report_path, e))?;
    Ok(report)
}

fn write_windows(windows: &[Vec<ThroughputSample>], path: &Path) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    crate::ransim::write_windows_csv(windows, file).map_err(|e| CliError::Internal(e.to_string()))
}

type RunArtifacts = (Vec<Vec<ThroughputSample>>, Vec<BetaChange>, Option<Vec<TtiReport>>);

fn run_in_process(
    spec: &ExperimentSpec,
    table: &PolicyTable,
    episodes: &mut [EpisodeState],
    opts: &RunOptions,
) -> Result<RunArtifacts, CliError> {
    let mut sim = Simulator::new(spec.sim_config.clone())
        .map_err(|e| CliError::validation(e.to_string()))?;
    if let Some(betas) = &opts.force_betas {
        sim.force_betas(betas)
            .map_err(|e| CliError::validation(format!("bad forced betas: {e}")))?;
    }

    let mut beta_history = vec![BetaChange { at_ms: 0.0, betas: sim.current_betas().to_vec() }];
    let mut traces: Option<Vec<TtiReport>> = opts.sched_trace.as_ref().map(|_| Vec::new());
    let mut next_episode = 0usize;
    let mut windows_seen = 0u64;

    while !sim.is_finished() {
        let now = sim.time_ms();
        if next_episode < episodes.len()
            && (episodes[next_episode].item.at_ms - now).abs() < 1e-9
        {
            let ep = &mut episodes[next_episode];
            ep.events.push(LoopEvent::RequirementSet { t_ms: now });
            if opts.force_betas.is_none() {
                let started = Instant::now();
                let result = xapp::select_betas(table, &ep.item.query);
                ep.xapp_wall_us = Some(started.elapsed().as_secs_f64() * 1e6);
                ep.events.push(LoopEvent::BetasComputed { t_ms: now });
                match result {
                    Ok(selection) => {
                        let msg = ControlMessage {
                            v: PROTOCOL_VERSION,
                            seq: next_episode as u64,
                            issued_at_ms: now,
                            betas: selection.betas.clone(),
                        };
                        e2lite::apply_control(&msg, &mut sim)
                            .map_err(|e| CliError::Internal(e.to_string()))?;
                        ep.selection = Some(selection);
                    }
                    Err(e) => {
                        // Keep the previous vector and carry on.
                        ep.infeasible = Some(e.to_string());
                    }
                }
            }
            next_episode += 1;
        }

        let report = sim.step_tti();
        if let Some(traces) = traces.as_mut() {
            traces.push(report);
        }

        for ack in sim.drain_applied_acks() {
            let idx = ack.seq as usize;
            episodes[idx]
                .events
                .push(LoopEvent::ControlApplied { t_ms: ack.applied_at_ms });
            beta_history.push(BetaChange {
                at_ms: ack.applied_at_ms,
                betas: sim.current_betas().to_vec(),
            });
        }

        if sim.windows_completed() > windows_seen {
            let w = sim.windows_completed() - 1;
            let t_end = sim.time_ms();
            let window = sim.window_samples(w).expect("window just completed").to_vec();
            if let Some(idx) = episode_covering(episodes, w) {
                let ep = &mut episodes[idx];
                let satisfied = window_satisfies(&ep.item.query.mbps, &window);
                ep.events.push(LoopEvent::WindowObserved { t_end_ms: t_end, satisfied });
            }
            windows_seen = sim.windows_completed();
        }
    }

    Ok((sim.all_windows().to_vec(), beta_history, traces))
}

/// Socket transport: the cell (DU side) runs here while the controller
/// (RIC side) serves on its own thread across a loopback TCP connection.
/// The controller fires schedule entries when an indication timestamp
/// reaches them, so requirement generation happens on the controller's
/// side of the wire, like it would in a deployment.
fn run_socket(
    spec: &ExperimentSpec,
    table: &PolicyTable,
    episodes: &mut [EpisodeState],
) -> Result<RunArtifacts, CliError> {
    let (listener, addr) = e2lite::transport::listen_local()
        .map_err(|e| CliError::Internal(format!("cannot bind loopback listener: {e}")))?;

    // RIC side.
    let ric_spec: Vec<(f64, crate::xapp::RequirementQuery)> = spec
        .schedule
        .iter()
        .map(|item| (item.at_ms, item.query.clone()))
        .collect();
    let ric_table = table.clone();
    let ric_episode_windows: Vec<(u64, u64)> =
        episodes.iter().map(|ep| (ep.start_window, ep.end_window)).collect();
    let ric = std::thread::spawn(move || -> Result<Vec<RicEpisode>, String> {
        let (stream, _) = listener.accept().map_err(|e| e.to_string())?;
        let mut conn = FrameConn::from_stream(stream).map_err(|e| e.to_string())?;
        let started = Instant::now();
        let mut out: Vec<RicEpisode> = (0..ric_spec.len()).map(|_| RicEpisode::default()).collect();
        let mut next = 0usize;
        loop {
            let frame = match conn.recv() {
                Ok(Some(frame)) => frame,
                Ok(None) => break,
                Err(e) => return Err(e.to_string()),
            };
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            match frame {
                Frame::Indication(ind) => {
                    // Fire every schedule entry this indication has reached.
                    while next < ric_spec.len() && ind.timestamp_ms >= ric_spec[next].0 - 1e-9 {
                        let (at_ms, query) = &ric_spec[next];
                        let t0_sim = ind.timestamp_ms.max(*at_ms);
                        let ep = &mut out[next];
                        ep.events.push(LoopEvent::RequirementSet { t_ms: t0_sim });
                        ep.events_wall.push(LoopEvent::RequirementSet { t_ms: wall_ms });
                        let sel_started = Instant::now();
                        let result = crate::xapp::select_betas(&ric_table, query);
                        let spent = sel_started.elapsed().as_secs_f64();
                        ep.xapp_wall_us = Some(spent * 1e6);
                        ep.events.push(LoopEvent::BetasComputed { t_ms: t0_sim });
                        ep.events_wall
                            .push(LoopEvent::BetasComputed { t_ms: wall_ms + spent * 1e3 });
                        match result {
                            Ok(selection) => {
                                let msg = ControlMessage {
                                    v: PROTOCOL_VERSION,
                                    seq: next as u64,
                                    issued_at_ms: t0_sim,
                                    betas: selection.betas.clone(),
                                };
                                conn.send(&Frame::Control(msg)).map_err(|e| e.to_string())?;
                                ep.selection = Some(selection);
                            }
                            Err(e) => ep.infeasible = Some(e.to_string()),
                        }
                        next += 1;
                    }
                    // Window bookkeeping for whichever episode owns it.
                    let idx = ric_episode_windows
                        .iter()
                        .position(|&(s, e)| ind.window_index >= s && ind.window_index < e);
                    if let Some(idx) = idx {
                        if out[idx].selection.is_some() || out[idx].infeasible.is_some() {
                            let satisfied = ind
                                .samples
                                .iter()
                                .zip(&ric_spec[idx].1.mbps)
                                .all(|(s, &req)| s.mbps >= req);
                            out[idx].events.push(LoopEvent::WindowObserved {
                                t_end_ms: ind.timestamp_ms,
                                satisfied,
                            });
                            out[idx]
                                .events_wall
                                .push(LoopEvent::WindowObserved { t_end_ms: wall_ms, satisfied });
                        }
                    }
                }
                Frame::Ack(ack) => {
                    let ep = &mut out[ack.seq as usize];
                    ep.events.push(LoopEvent::ControlApplied { t_ms: ack.applied_at_ms });
                    ep.events_wall.push(LoopEvent::ControlApplied { t_ms: wall_ms });
                }
                Frame::Control(_) => {
                    return Err("controller received a control frame".into());
                }
            }
        }
        Ok(out)
    });

    // DU side.
    let mut sim = Simulator::new(spec.sim_config.clone())
        .map_err(|e| CliError::validation(e.to_string()))?;
    let conn = FrameConn::connect(&addr)
        .map_err(|e| CliError::Internal(format!("cannot connect to controller: {e}")))?;
    let (mut read_half, mut write_half) = conn.split();

    // A dedicated reader forwards control frames so the sim loop never
    // blocks on the socket.
    let (control_tx, control_rx) = mpsc::channel::<ControlMessage>();
    let reader = std::thread::spawn(move || loop {
        match e2lite::transport::read_frame(&mut read_half) {
            Ok(Some(Frame::Control(msg))) => {
                if control_tx.send(msg).is_err() {
                    break;
                }
            }
            Ok(Some(_)) => continue,
            Ok(None) | Err(_) => break,
        }
    });

    let mut beta_history = vec![BetaChange { at_ms: 0.0, betas: sim.current_betas().to_vec() }];
    let mut windows_seen = 0u64;
    let mut seq = 0u64;
    while !sim.is_finished() {
        while let Ok(msg) = control_rx.try_recv() {
            e2lite::apply_control(&msg, &mut sim).map_err(|e| CliError::Internal(e.to_string()))?;
        }
        sim.step_tti();
        for ack in sim.drain_applied_acks() {
            beta_history.push(BetaChange {
                at_ms: ack.applied_at_ms,
                betas: sim.current_betas().to_vec(),
            });
            let frame = Frame::Ack(e2lite::ControlAck {
                v: PROTOCOL_VERSION,
                seq: ack.seq,
                applied_at_ms: ack.applied_at_ms,
            });
            e2lite::transport::write_frame(&mut write_half, &frame)
                .map_err(|e| CliError::Internal(e.to_string()))?;
        }
        if sim.windows_completed() > windows_seen {
            let w = sim.windows_completed() - 1;
            let samples = sim.window_samples(w).expect("window just completed");
            let ind = publish_indication(seq, sim.time_ms(), w, samples);
            seq += 1;
            e2lite::transport::write_frame(&mut write_half, &Frame::Indication(ind))
                .map_err(|e| CliError::Internal(e.to_string()))?;
            windows_seen = sim.windows_completed();
            // The sim outruns wall time by orders of magnitude; yield a
            // beat per window so controller responses land within a few
            // TTIs of the boundary instead of windows later.
            std::thread::sleep(std::time::Duration::from_millis(1));
        }
    }
    e2lite::transport::shutdown_write(&write_half)
        .map_err(|e| CliError::Internal(e.to_string()))?;

    let ric_out = ric
        .join()
        .map_err(|_| CliError::Internal("controller thread panicked".into()))?
        .map_err(CliError::Internal)?;
    reader.join().map_err(|_| CliError::Internal("reader thread panicked".into()))?;

    for (ep, ric_ep) in episodes.iter_mut().zip(ric_out) {
        ep.selection = ric_ep.selection;
        ep.infeasible = ric_ep.infeasible;
        ep.events = ric_ep.events;
        ep.events_wall = ric_ep.events_wall;
        ep.xapp_wall_us = ric_ep.xapp_wall_us;
    }

    Ok((sim.all_windows().to_vec(), beta_history, None))
}

#[derive(Default)]
struct RicEpisode {
    selection: Option<Selection>,
    infeasible: Option<String>,
    events: Vec<LoopEvent>,
    events_wall: Vec<LoopEvent>,
    xapp_wall_us: Option<f64>,
}
