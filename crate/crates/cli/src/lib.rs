//! Experiment driver around the solver core.
//!
//! Four entry points, mirrored by the `mhdbl` binary's subcommands:
//!
//! * [`simulate::run_simulate`] — step the coupled system, record the energy
//!   and horizon monitors, write the time series, snapshots, and summary;
//! * [`certify::run_certify`] — run the inequality probe battery on a
//!   two-grid family and write the report table;
//! * [`converge::run_converge`] — joint (Δt, Δy) refinement study with
//!   fitted orders and gnuplot-ready curve files;
//! * [`decay::run_fit_decay`] — power-law tail fits over any time-series
//!   columns, driven purely by the CSV header.
//!
//! Configuration is a flat `key = value` file over defaults; see
//! [`config::ExperimentConfig`].

pub mod certify;
pub mod config;
pub mod converge;
pub mod decay;
pub mod simulate;

pub use config::{ExperimentConfig, Profile};
