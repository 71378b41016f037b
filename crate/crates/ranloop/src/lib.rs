//! Desk-scale, deterministic testbed for closed-loop uplink scheduler control.
//!
//! The crate has three layers:
//!
//! * a tunable proportional-fair scheduler ([`sched`]) driven by a
//!   deterministic TTI-level cell simulator ([`ransim`]),
//! * a controller ([`xapp`]) that sweeps the scheduler's per-UE exponents,
//!   estimates the joint CCDF of per-UE throughput for each setting, and
//!   builds a policy table answering "which exponents guarantee these
//!   per-UE minimum rates with probability `q`", and
//! * an application layer ([`rapp`]) that turns detection-accuracy targets
//!   (an F1-vs-bitrate power model plus a camera topology) into per-UE
//!   throughput requirements.
//!
//! [`e2lite`] carries throughput reports and parameter updates between the
//! cell and the controller — in-process by default, as newline-delimited
//! JSON frames over a local socket when the two sides run apart — and
//! measures the closed-loop KPIs. [`cli`] wires everything into runnable
//! experiments; the `ranloop` binary is a thin front end over it.
//!
//! Start with the examples: each one exercises a single capability
//! end to end (`cargo run --release -p ranloop --example closed_loop`).

pub mod cli;
pub mod e2lite;
pub mod ransim;
pub mod rapp;
pub mod sched;
pub mod units;
pub mod xapp;
