//! Scenario files: strict TOML schema, validation with field paths, and
//! resolution into the tick-level [`Model`] the engine runs.
//!
//! All durations in the file are seconds and must be whole numbers of
//! picosecond ticks. Powers are watts unless the key ends in `_dbm`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelConfig, LinkBudget, Position};
use crate::energy::PowerProfile;
use crate::mac::{MacParams, Protocol};
use crate::phy::{BerTable, BerTableError, FrameTiming};
use crate::sensing::{Phenomenon, SensorDevice};
use crate::time::SimTime;

pub const DEFAULT_PROFILE: &str = "default";

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub simulation: SimulationSection,
    #[serde(default)]
    pub channel: ChannelConfig,
    pub radio: RadioSection,
    #[serde(default)]
    pub mac: MacSection,
    #[serde(default, skip_serializing_if = "EnergySection::is_empty")]
    pub energy: EnergySection,
    pub nodes: Vec<NodeSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensing: Option<SensingSection>,
    #[serde(default, skip_serializing_if = "ImpairmentSection::is_none")]
    pub impairment: ImpairmentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// s
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    /// t_s, s
    pub slot_duration: f64,
    pub slots_per_frame: u32,
    /// t_f, s. Must equal `slots_per_frame * slot_duration` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_duration: Option<f64>,
    #[serde(default = "RadioSection::default_sensitivity")]
    pub sensitivity_dbm: f64,
    /// Linear noise figure F.
    #[serde(default = "RadioSection::default_unity")]
    pub noise_figure: f64,
    /// W per pulse.
    #[serde(default = "RadioSection::default_tx_power")]
    pub tx_power: f64,
    #[serde(default = "RadioSection::default_unity")]
    pub tx_gain: f64,
    #[serde(default = "RadioSection::default_unity")]
    pub rx_gain: f64,
    /// Packets a receiver can track at once; 0 means unlimited, 1 is strict
    /// single-packet lock-on.
    #[serde(default)]
    pub max_concurrent_receptions: u32,
    /// Links weaker than this are not simulated at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interference_floor_dbm: Option<f64>,
    /// Path relative to the scenario file.
    pub ber_table: String,
}

impl RadioSection {
    fn default_sensitivity() -> f64 {
        -95.0
    }
    fn default_unity() -> f64 {
        1.0
    }
    fn default_tx_power() -> f64 {
        1e-3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacSection {
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "MacSection::default_header")]
    pub header_bits: u32,
    /// s; reliable-unslotted only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retransmission_delay: Option<f64>,
    #[serde(default = "MacSection::default_limit")]
    pub retransmission_limit: u32,
    /// s; slotted variants only. A multiple of the TH frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac_frame_duration: Option<f64>,
    /// MAC frames per allocation cycle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation_cycle: Option<u32>,
    /// Sensor-role nodes sleep whenever their MAC is idle.
    #[serde(default)]
    pub doze: bool,
}

impl MacSection {
    fn default_header() -> u32 {
        48
    }
    fn default_limit() -> u32 {
        3
    }
}

impl Default for MacSection {
    fn default() -> Self {
        MacSection {
            protocol: Protocol::default(),
            header_bits: Self::default_header(),
            retransmission_delay: None,
            retransmission_limit: Self::default_limit(),
            mac_frame_duration: None,
            allocation_cycle: None,
            doze: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    #[serde(default)]
    pub profiles: BTreeMap<String, PowerProfile>,
}

impl EnergySection {
    fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    #[default]
    Sensor,
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
    #[serde(default)]
    pub role: Role,
    /// Hopping slot index in `[0, slots_per_frame)`.
    pub ths: u32,
    #[serde(default = "NodeSection::default_profile")]
    pub profile: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mac_frames: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity_dbm: Option<f64>,
}

impl NodeSection {
    fn default_profile() -> String {
        DEFAULT_PROFILE.to_string()
    }

    pub fn position(&self) -> Position {
        Position::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub src: u32,
    pub dst: u32,
    pub payload_bits: u32,
    /// CBR inter-arrival, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Poisson arrivals per second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default)]
    pub start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    pub sink: u32,
    #[serde(default = "SensingSection::default_report_bits")]
    pub report_bits: u32,
    /// s; at most one report per node per window.
    #[serde(default)]
    pub suppression_window: f64,
    /// Sensors also sample on their own clock while no phenomenon is active.
    #[serde(default = "yes")]
    pub self_sampling: bool,
    #[serde(default)]
    pub sensor: SensorSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phenomena: Vec<PhenomenonSection>,
}

impl SensingSection {
    fn default_report_bits() -> u32 {
        32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    pub threshold: f64,
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
    /// Hz
    pub sampling_rate: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        let d = SensorDevice::default();
        SensorSection {
            threshold: d.threshold,
            false_positive_rate: d.false_positive_rate,
            false_negative_rate: d.false_negative_rate,
            sampling_rate: d.sampling_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhenomenonSection {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
    pub intensity: f64,
    /// Hz
    pub sampling_rate: f64,
    #[serde(default = "PhenomenonSection::default_exponent")]
    pub path_loss_exponent: f64,
    #[serde(default = "PhenomenonSection::default_reference")]
    pub reference_distance: f64,
    #[serde(default)]
    pub start: f64,
    /// Defaults to the end of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
    /// m/s; instantaneous when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave_velocity: Option<f64>,
}

impl PhenomenonSection {
    fn default_exponent() -> f64 {
        2.0
    }
    fn default_reference() -> f64 {
        1.0
    }
}

/// Forced i.i.d. losses applied at the addressed receiver on top of the
/// channel, per delivered PDU.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpairmentSection {
    pub data_loss_probability: f64,
    pub ack_loss_probability: f64,
}

impl ImpairmentSection {
    fn is_none(&self) -> bool {
        *self == ImpairmentSection::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ValidationError>),
    #[error("BER table {path}: {source}")]
    BerTable { path: String, source: BerTableError },
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arrivals {
    Periodic(SimTime),
    /// Events per second.
    Poisson(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub src: usize,
    pub dst: usize,
    pub payload_bits: u32,
    pub arrivals: Arrivals,
    pub start: SimTime,
    pub stop: SimTime,
    pub count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    pub id: u32,
    pub position: Position,
    pub role: Role,
    pub ths: u32,
    pub profile: PowerProfile,
    pub mac_frames: Vec<u32>,
    /// W
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingModel {
    pub sink: usize,
    pub report_bits: u32,
    pub suppression_window: SimTime,
    pub self_sampling: bool,
    pub device: SensorDevice,
    pub phenomena: Vec<Phenomenon>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioModel {
    pub noise_figure: f64,
    pub budget: LinkBudget,
    pub max_concurrent_receptions: u32,
    /// W
    pub interference_floor: Option<f64>,
}

/// A validated scenario in ticks and watts. Node references are indices
/// into `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub duration: SimTime,
    pub seed: u64,
    pub channel: ChannelConfig,
    pub delay_spread: SimTime,
    pub timing: FrameTiming,
    pub radio: RadioModel,
    pub mac: MacParams,
    pub mac_frame: SimTime,
    pub allocation_cycle: u32,
    pub doze: bool,
    pub nodes: Vec<NodeModel>,
    pub flows: Vec<FlowModel>,
    pub sensing: Option<SensingModel>,
    pub impairment: ImpairmentSection,
}

struct Errors(Vec<ValidationError>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ValidationError { path: path.into(), message: message.into() });
    }

    fn ticks(&mut self, path: &str, seconds: f64) -> SimTime {
        if !(seconds.is_finite() && seconds >= 0.0) {
            self.push(path, format!("duration must be finite and non-negative, got {seconds}"));
            return SimTime::ZERO;
        }
        SimTime::from_secs_exact(seconds).unwrap_or_else(|| {
            self.push(path, format!("{seconds} s is not a whole number of picosecond ticks"));
            SimTime::ZERO
        })
    }

    fn positive(&mut self, path: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.push(path, format!("must be positive, got {v}"));
        }
    }

    fn probability(&mut self, path: &str, p: f64) {
        if !(0.0..=1.0).contains(&p) {
            self.push(path, format!("must lie in [0, 1], got {p}"));
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("scenario types always serialize")
    }

    pub fn node_index(&self) -> HashMap<u32, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    fn max_pdu_bits(&self) -> u32 {
        let header = self.mac.header_bits;
        let flows = self.flows.iter().map(|f| f.payload_bits);
        let reports = self.sensing.iter().map(|s| s.report_bits);
        header + flows.chain(reports).max().unwrap_or(0)
    }

    fn frame_ticks(&self) -> Option<SimTime> {
        let slot = SimTime::from_secs_exact(self.radio.slot_duration)?;
        Some(slot * self.radio.slots_per_frame as u64)
    }

    fn max_propagation_delay(&self) -> SimTime {
        let mut max = SimTime::ZERO;
        for (i, a) in self.nodes.iter().enumerate() {
            for b in &self.nodes[i + 1..] {
                if let Ok(d) = channel::propagation_delay(a.position().distance(&b.position()), &self.channel) {
                    max = max.max(d);
                }
            }
        }
        max
    }

    /// Default retransmission delay: the longest round trip, one ACK
    /// airtime and two TH frames of slack for hop-slot waits.
    pub fn default_retransmission_delay(&self) -> Option<SimTime> {
        let frame = self.frame_ticks()?;
        Some(self.max_propagation_delay() * 2 + frame * self.mac.header_bits as u64 + frame * 2)
    }

    /// Default MAC frame: the longest PDU plus two TH frames of guard.
    pub fn default_mac_frame(&self) -> Option<SimTime> {
        Some(self.frame_ticks()? * (self.max_pdu_bits() as u64 + 2))
    }

    pub fn default_allocation_cycle(&self) -> u32 {
        self.nodes
            .iter()
            .flat_map(|n| n.mac_frames.iter().map(|f| f + 1))
            .max()
            .unwrap_or(1)
    }

    /// The scenario with every derived default written out, as echoed next
    /// to run artifacts.
    pub fn normalized(&self) -> Scenario {
        let mut s = self.clone();
        if s.radio.frame_duration.is_none() {
            s.radio.frame_duration = self.frame_ticks().map(SimTime::as_secs_f64);
        }
        if s.mac.retransmission_delay.is_none() && self.mac.protocol == Protocol::ReliableUnslotted {
            s.mac.retransmission_delay = self.default_retransmission_delay().map(SimTime::as_secs_f64);
        }
        if self.mac.protocol.is_slotted() {
            if s.mac.mac_frame_duration.is_none() {
                s.mac.mac_frame_duration = self.default_mac_frame().map(SimTime::as_secs_f64);
            }
            if s.mac.allocation_cycle.is_none() {
                s.mac.allocation_cycle = Some(self.default_allocation_cycle());
            }
        }
        s.energy
            .profiles
            .entry(DEFAULT_PROFILE.to_string())
            .or_default();
        for f in &mut s.flows {
            if f.stop.is_none() {
                f.stop = Some(self.simulation.duration);
            }
        }
        if let Some(sensing) = &mut s.sensing {
            for ph in &mut sensing.phenomena {
                if ph.end.is_none() {
                    ph.end = Some(self.simulation.duration);
                }
            }
        }
        s
    }

    /// Checks every invariant and resolves the scenario; all findings are
    /// reported together.
    pub fn resolve(&self) -> Result<Model, ScenarioError> {
        let mut e = Errors(Vec::new());

        let duration = e.ticks("simulation.duration", self.simulation.duration);
        if duration == SimTime::ZERO {
            e.push("simulation.duration", "run duration must be positive");
        }

        let ch = &self.channel;
        e.positive("channel.center_frequency", ch.center_frequency);
        e.positive("channel.bandwidth", ch.bandwidth);
        e.positive("channel.noise_temperature", ch.noise_temperature);
        e.positive("channel.path_loss_exponent", ch.path_loss_exponent);
        e.positive("channel.reference_distance", ch.reference_distance);
        e.positive("channel.velocity_factor", ch.velocity_factor);
        let delay_spread = e.ticks("channel.delay_spread", ch.delay_spread);

        let r = &self.radio;
        let slot = e.ticks("radio.slot_duration", r.slot_duration);
        let timing = if slot == SimTime::ZERO {
            e.push("radio.slot_duration", "slot duration must be positive");
            None
        } else if r.slots_per_frame == 0 {
            e.push("radio.slots_per_frame", "a frame needs at least one slot");
            None
        } else {
            match r.frame_duration {
                Some(f) => {
                    let frame = e.ticks("radio.frame_duration", f);
                    match FrameTiming::with_frame(slot, r.slots_per_frame, frame) {
                        Ok(t) => Some(t),
                        Err(err) => {
                            e.push(
                                "radio.frame_duration",
                                format!("frame duration must equal slots_per_frame x slot_duration: {err}"),
                            );
                            None
                        }
                    }
                }
                None => FrameTiming::new(slot, r.slots_per_frame).ok(),
            }
        };
        e.positive("radio.noise_figure", r.noise_figure);
        e.positive("radio.tx_power", r.tx_power);
        e.positive("radio.tx_gain", r.tx_gain);
        e.positive("radio.rx_gain", r.rx_gain);
        if !r.sensitivity_dbm.is_finite() {
            e.push("radio.sensitivity_dbm", "must be finite");
        }
        if r.ber_table.trim().is_empty() {
            e.push("radio.ber_table", "a BER table path is required");
        }

        let m = &self.mac;
        if m.header_bits == 0 && self.flows.iter().any(|f| f.payload_bits == 0) {
            e.push("mac.header_bits", "zero header with zero payload gives an empty PDU");
        }
        if m.protocol.is_reliable() && m.header_bits == 0 {
            e.push("mac.header_bits", "acknowledgments need a non-empty header");
        }
        let mut retransmission_delay = SimTime::ZERO;
        if let Some(d) = m.retransmission_delay {
            retransmission_delay = e.ticks("mac.retransmission_delay", d);
            if retransmission_delay == SimTime::ZERO {
                e.push("mac.retransmission_delay", "must be positive");
            }
        } else if let Some(d) = self.default_retransmission_delay() {
            retransmission_delay = d;
        }
        let mut mac_frame = self.default_mac_frame().unwrap_or(SimTime::ZERO);
        if let Some(f) = m.mac_frame_duration {
            mac_frame = e.ticks("mac.mac_frame_duration", f);
            if let Some(t) = &timing {
                let airtime = t.frame() * self.max_pdu_bits() as u64;
                if !mac_frame.ticks().is_multiple_of(t.frame().ticks()) {
                    e.push("mac.mac_frame_duration", "must be a whole number of TH frames");
                } else if mac_frame < airtime {
                    e.push(
                        "mac.mac_frame_duration",
                        format!("shorter than the longest PDU airtime ({airtime})"),
                    );
                }
            }
        }
        let allocation_cycle = m.allocation_cycle.unwrap_or_else(|| self.default_allocation_cycle());
        if allocation_cycle == 0 {
            e.push("mac.allocation_cycle", "must be at least 1");
        }

        let mut profiles = self.energy.profiles.clone();
        profiles.entry(DEFAULT_PROFILE.to_string()).or_default();
        for (name, p) in &profiles {
            if let Err(msg) = p.validate() {
                e.push(format!("energy.profiles.{name}"), msg);
            }
        }

        let mut index: HashMap<u32, usize> = HashMap::new();
        let mut nodes = Vec::with_capacity(self.nodes.len());
        if self.nodes.is_empty() {
            e.push("nodes", "at least one node is required");
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let path = format!("nodes[{i}]");
            if let Some(prev) = index.insert(n.id, i) {
                e.push(
                    format!("{path}.id"),
                    format!("duplicate node id {} (also defined at nodes[{prev}])", n.id),
                );
            }
            if !n.position().is_finite() {
                e.push(&path, "coordinates must be finite");
            }
            if let Some(t) = &timing {
                if let Err(err) = t.check_hop(n.ths) {
                    e.push(format!("{path}.ths"), err.to_string());
                }
            }
            for (k, f) in n.mac_frames.iter().enumerate() {
                if *f >= allocation_cycle {
                    e.push(
                        format!("{path}.mac_frames[{k}]"),
                        format!("frame {f} outside the allocation cycle of {allocation_cycle}"),
                    );
                }
            }
            let profile = match profiles.get(&n.profile) {
                Some(p) => *p,
                None => {
                    e.push(format!("{path}.profile"), format!("unknown energy profile `{}`", n.profile));
                    PowerProfile::default()
                }
            };
            let sensitivity_dbm = n.sensitivity_dbm.unwrap_or(r.sensitivity_dbm);
            nodes.push(NodeModel {
                id: n.id,
                position: n.position(),
                role: n.role,
                ths: n.ths,
                profile,
                mac_frames: n.mac_frames.clone(),
                sensitivity: channel::dbm_to_watts(sensitivity_dbm),
            });
        }
        for (i, a) in self.nodes.iter().enumerate() {
            for (j, b) in self.nodes.iter().enumerate().skip(i + 1) {
                if a.position() == b.position() && index.get(&a.id) == Some(&i) && index.get(&b.id) == Some(&j) {
                    e.push(format!("nodes[{j}]"), format!("co-located with nodes[{i}]"));
                }
            }
        }
        let slotted = m.protocol.is_slotted();
        let needs_frames = |e: &mut Errors, path: String, node: u32| {
            if let Some(&k) = index.get(&node) {
                if slotted && self.nodes[k].mac_frames.is_empty() {
                    e.push(path, format!("node {node} transmits under a slotted MAC but has no mac_frames"));
                }
            }
        };

        let mut flows = Vec::with_capacity(self.flows.len());
        for (i, f) in self.flows.iter().enumerate() {
            let path = format!("flows[{i}]");
            let src = index.get(&f.src).copied();
            let dst = index.get(&f.dst).copied();
            if src.is_none() {
                e.push(format!("{path}.src"), format!("unknown node {}", f.src));
            }
            if dst.is_none() {
                e.push(format!("{path}.dst"), format!("unknown node {}", f.dst));
            }
            if f.src == f.dst {
                e.push(&path, "source and destination coincide");
            }
            if m.header_bits + f.payload_bits == 0 {
                e.push(format!("{path}.payload_bits"), "PDU would be empty");
            }
            needs_frames(&mut e, format!("{path}.src"), f.src);
            if m.protocol == Protocol::ReliableSlotted {
                needs_frames(&mut e, format!("{path}.dst"), f.dst);
            }
            let arrivals = match (f.period, f.rate) {
                (Some(p), None) => {
                    let t = e.ticks(&format!("{path}.period"), p);
                    if t == SimTime::ZERO {
                        e.push(format!("{path}.period"), "must be positive");
                    }
                    Arrivals::Periodic(t)
                }
                (None, Some(rate)) => {
                    e.positive(&format!("{path}.rate"), rate);
                    Arrivals::Poisson(rate)
                }
                _ => {
                    e.push(&path, "exactly one of `period` or `rate` is required");
                    Arrivals::Periodic(SimTime::MAX)
                }
            };
            let start = e.ticks(&format!("{path}.start"), f.start);
            let stop = match f.stop {
                Some(s) => e.ticks(&format!("{path}.stop"), s),
                None => duration,
            };
            if stop < start {
                e.push(format!("{path}.stop"), "flow stops before it starts");
            }
            flows.push(FlowModel {
                src: src.unwrap_or(0),
                dst: dst.unwrap_or(0),
                payload_bits: f.payload_bits,
                arrivals,
                start,
                stop,
                count: f.count,
            });
        }

        let sensing = self.sensing.as_ref().map(|s| {
            let sink = match index.get(&s.sink) {
                Some(&k) => k,
                None => {
                    e.push("sensing.sink", format!("unknown node {}", s.sink));
                    0
                }
            };
            if m.header_bits + s.report_bits == 0 {
                e.push("sensing.report_bits", "report PDU would be empty");
            }
            let device = SensorDevice {
                threshold: s.sensor.threshold,
                false_positive_rate: s.sensor.false_positive_rate,
                false_negative_rate: s.sensor.false_negative_rate,
                sampling_rate: s.sensor.sampling_rate,
            };
            if let Err(msg) = device.validate() {
                e.push("sensing.sensor", msg);
            }
            for n in self.nodes.iter().filter(|n| n.role == Role::Sensor && n.id != s.sink) {
                let k = index[&n.id];
                needs_frames(&mut e, format!("nodes[{k}].mac_frames"), n.id);
            }
            if m.protocol == Protocol::ReliableSlotted {
                needs_frames(&mut e, "sensing.sink".to_string(), s.sink);
            }
            let phenomena = s
                .phenomena
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let path = format!("sensing.phenomena[{i}]");
                    let ph = Phenomenon {
                        position: Position::new(p.x, p.y, p.z),
                        source_intensity: p.intensity,
                        sampling_rate: p.sampling_rate,
                        path_loss_exponent: p.path_loss_exponent,
                        reference_distance: p.reference_distance,
                        start: e.ticks(&format!("{path}.start"), p.start),
                        end: match p.end {
                            Some(t) => e.ticks(&format!("{path}.end"), t),
                            None => duration,
                        },
                        wave_velocity: p.wave_velocity,
                    };
                    if let Err(msg) = ph.validate() {
                        e.push(&path, msg);
                    }
                    ph
                })
                .collect();
            SensingModel {
                sink,
                report_bits: s.report_bits,
                suppression_window: e.ticks("sensing.suppression_window", s.suppression_window),
                self_sampling: s.self_sampling,
                device,
                phenomena,
            }
        });

        e.probability("impairment.data_loss_probability", self.impairment.data_loss_probability);
        e.probability("impairment.ack_loss_probability", self.impairment.ack_loss_probability);

        if !e.0.is_empty() {
            return Err(ScenarioError::Invalid(e.0));
        }
        let timing = timing.expect("no errors implies valid timing");
        Ok(Model {
            duration,
            seed: self.simulation.seed,
            channel: self.channel,
            delay_spread,
            timing,
            radio: RadioModel {
                noise_figure: r.noise_figure,
                budget: LinkBudget { tx_power: r.tx_power, tx_gain: r.tx_gain, rx_gain: r.rx_gain },
                max_concurrent_receptions: r.max_concurrent_receptions,
                interference_floor: r.interference_floor_dbm.map(channel::dbm_to_watts),
            },
            mac: MacParams {
                protocol: m.protocol,
                header_bits: m.header_bits,
                retransmission_delay,
                retransmission_limit: m.retransmission_limit,
            },
            mac_frame,
            allocation_cycle,
            doze: m.doze,
            nodes,
            flows,
            sensing,
            impairment: self.impairment.clone(),
        })
    }
}

/// Applies `key=value` overrides to a parsed TOML tree. Numeric path
/// segments index arrays (`nodes.0.ths`). Values are parsed as TOML and fall
/// back to plain strings.
pub fn apply_overrides(doc: &mut toml::Value, overrides: &[(String, String)]) -> Result<(), ScenarioError> {
    for (key, raw) in overrides {
        let err = |message: String| ScenarioError::Override { key: key.clone(), message };
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let segments: Vec<&str> = key.split('.').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(err("empty path segment".into()));
        }
        let (last, parents) = segments.split_last().expect("split yields one segment");
        let mut cursor = &mut *doc;
        for seg in parents {
            cursor = match cursor {
                toml::Value::Table(t) => t
                    .entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new())),
                toml::Value::Array(a) => {
                    let i: usize = seg.parse().map_err(|_| err(format!("`{seg}` is not an array index")))?;
                    let len = a.len();
                    a.get_mut(i).ok_or_else(|| err(format!("index {i} out of range (len {len})")))?
                }
                _ => return Err(err(format!("`{seg}` descends into a scalar"))),
            };
        }
        match cursor {
            toml::Value::Table(t) => {
                t.insert(last.to_string(), value);
            }
            toml::Value::Array(a) => {
                let i: usize = last.parse().map_err(|_| err(format!("`{last}` is not an array index")))?;
                let len = a.len();
                *a.get_mut(i).ok_or_else(|| err(format!("index {i} out of range (len {len})")))? = value;
            }
            _ => return Err(err(format!("`{last}` descends into a scalar"))),
        }
    }
    Ok(())
}

/// A scenario read from disk together with its BER table.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub ber_table: BerTable,
    pub ber_path: PathBuf,
}

impl LoadedScenario {
    pub fn model(&self) -> Result<Model, ScenarioError> {
        self.scenario.resolve()
    }
}

/// Reads, overrides, validates and loads the BER table of a scenario file.
pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<LoadedScenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut doc: toml::Value = toml::from_str::<toml::Table>(&text)
        .map(toml::Value::Table)
        .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
    apply_overrides(&mut doc, overrides)?;
    let scenario: Scenario = doc
        .try_into()
        .map_err(|e: toml::de::Error| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
    scenario.resolve()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let ber_path = base.join(&scenario.radio.ber_table);
    let ber_table = BerTable::load(&ber_path).map_err(|source| ScenarioError::BerTable {
        path: ber_path.display().to_string(),
        source,
    })?;
    Ok(LoadedScenario { scenario, ber_table, ber_path })
}
