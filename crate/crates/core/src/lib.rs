//! Pulse-level discrete-event simulation of time-hopping impulse-radio UWB
//! sensor networks.
//!
//! A run is described by a [`scenario::Scenario`] (usually parsed from TOML),
//! resolved into a [`scenario::Model`] and executed by [`engine::run`], which
//! streams [`trace::TraceRecord`]s and returns a [`metrics::MetricsSummary`].

pub mod channel;
pub mod energy;
pub mod engine;
pub mod kernel;
pub mod mac;
pub mod metrics;
pub mod phy;
pub mod reference;
pub mod rng;
pub mod scenario;
pub mod sensing;
pub mod time;
pub mod trace;

pub use engine::{run, EngineError, RunOutput, RunStats};
pub use metrics::MetricsSummary;
pub use phy::BerTable;
pub use scenario::{load, LoadedScenario, Model, Scenario, ScenarioError};
pub use time::SimTime;
pub use trace::{TraceRecord, TraceSink};
