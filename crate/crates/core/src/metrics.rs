//! Run metrics computed solely from trace records.
//!
//! The engine feeds every record through a [`MetricsAccumulator`] as it is
//! produced, so `--no-trace` runs get the same summary a re-read trace file
//! would give.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::phy::SlotState;
use crate::time::SimTime;
use crate::trace::{TraceEvent, TraceLayer, TraceRecord};

#[derive(Debug, Clone, Default)]
struct FlowAcc {
    offered: u64,
    delivered: u64,
    delivered_bits: u64,
    latencies: Vec<SimTime>,
}

#[derive(Debug, Clone, Default)]
struct NodeAcc {
    pulses_tx: u64,
    pulses_rx: u64,
    state_ticks: BTreeMap<&'static str, u64>,
    total_joules: Option<f64>,
    reports: u64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    flows: BTreeMap<(u32, u32), FlowAcc>,
    enqueued: HashMap<(u32, u32, u32), SimTime>,
    nodes: BTreeMap<u32, NodeAcc>,
    collisions: u64,
    drops: BTreeMap<String, u64>,
    transmissions: u64,
    retransmissions: u64,
    acked: u64,
    failed: u64,
    duplicates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMetrics {
    pub src: u32,
    pub dst: u32,
    pub offered: u64,
    pub delivered: u64,
    pub per: f64,
    pub mean_latency_s: Option<f64>,
    pub p95_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeEnergyMetrics {
    pub node: u32,
    pub pulses_tx: u64,
    pub pulses_rx: u64,
    /// Seconds per slot state.
    pub state_time_s: BTreeMap<String, f64>,
    pub total_joules: f64,
    pub reports: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalMetrics {
    pub duration_s: f64,
    /// Overlapped pulses counted over all tracked receptions.
    pub pulse_collisions: u64,
    pub drops: BTreeMap<String, u64>,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub acknowledged: u64,
    pub failed: u64,
    pub duplicates: u64,
    pub delivered_bits: u64,
    pub throughput_bps: f64,
    pub total_joules: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub flows: Vec<FlowMetrics>,
    pub nodes: Vec<NodeEnergyMetrics>,
    pub global: GlobalMetrics,
}

/// Nearest-rank percentile of a sorted sample.
fn nearest_rank(sorted: &[SimTime], q: f64) -> Option<SimTime> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn consume(&mut self, r: &TraceRecord) {
        let f = &r.fields;
        match (r.layer, r.event) {
            (TraceLayer::Mac, TraceEvent::Enqueue) => {
                if let (Some(src), Some(dst), Some(seq)) = (f.src, f.dst, f.seq) {
                    self.flows.entry((src, dst)).or_default().offered += 1;
                    self.enqueued.insert((src, dst, seq), r.time);
                }
            }
            (TraceLayer::Mac, TraceEvent::Deliver) => {
                if let (Some(src), Some(dst), Some(seq)) = (f.src, f.dst, f.seq) {
                    let flow = self.flows.entry((src, dst)).or_default();
                    flow.delivered += 1;
                    flow.delivered_bits += f.value.unwrap_or(0.0) as u64;
                    if let Some(t0) = self.enqueued.remove(&(src, dst, seq)) {
                        flow.latencies.push(r.time.saturating_sub(t0));
                    }
                }
            }
            (TraceLayer::Mac, TraceEvent::Send) => {
                self.transmissions += 1;
                if f.kind == Some("DATA") && f.attempt.is_some_and(|a| a > 1) {
                    self.retransmissions += 1;
                }
            }
            (TraceLayer::Mac, TraceEvent::Acked) => self.acked += 1,
            (TraceLayer::Mac, TraceEvent::Failed) => self.failed += 1,
            (TraceLayer::Mac, TraceEvent::Duplicate) => self.duplicates += 1,
            (TraceLayer::Phy, TraceEvent::RxOk) => {
                self.collisions += f.collisions.unwrap_or(0) as u64;
            }
            (TraceLayer::Phy, TraceEvent::Drop) => {
                self.collisions += f.collisions.unwrap_or(0) as u64;
                *self.drops.entry(f.reason.clone().unwrap_or_default()).or_default() += 1;
            }
            (TraceLayer::Sensor, TraceEvent::Report) => {
                if let Some(n) = r.node {
                    self.nodes.entry(n).or_default().reports += 1;
                }
            }
            (TraceLayer::Energy, event) => {
                let Some(n) = r.node else { return };
                let node = self.nodes.entry(n).or_default();
                let v = f.value.unwrap_or(0.0);
                match event {
                    TraceEvent::PulsesTx => node.pulses_tx = v as u64,
                    TraceEvent::PulsesRx => node.pulses_rx = v as u64,
                    TraceEvent::StateTime => {
                        if let Some(s) = f.reason.as_deref().and_then(SlotState::parse) {
                            node.state_ticks.insert(s.as_str(), v as u64);
                        }
                    }
                    TraceEvent::Total => node.total_joules = Some(v),
                    _ => {}
                }
            }
            _ => {}
        }
    }

    pub fn summary(&self) -> MetricsSummary {
        let flows: Vec<FlowMetrics> = self
            .flows
            .iter()
            .map(|(&(src, dst), acc)| {
                let mut lat = acc.latencies.clone();
                lat.sort_unstable();
                let mean = (!lat.is_empty())
                    .then(|| lat.iter().map(|t| t.as_secs_f64()).sum::<f64>() / lat.len() as f64);
                FlowMetrics {
                    src,
                    dst,
                    offered: acc.offered,
                    delivered: acc.delivered,
                    per: if acc.offered == 0 { 0.0 } else { 1.0 - acc.delivered as f64 / acc.offered as f64 },
                    mean_latency_s: mean,
                    p95_latency_s: nearest_rank(&lat, 0.95).map(SimTime::as_secs_f64),
                }
            })
            .collect();
        let nodes: Vec<NodeEnergyMetrics> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.total_joules.is_some() || n.reports > 0)
            .map(|(&node, n)| NodeEnergyMetrics {
                node,
                pulses_tx: n.pulses_tx,
                pulses_rx: n.pulses_rx,
                state_time_s: n
                    .state_ticks
                    .iter()
                    .map(|(s, t)| (s.to_string(), SimTime::from_ticks(*t).as_secs_f64()))
                    .collect(),
                total_joules: n.total_joules.unwrap_or(0.0),
                reports: n.reports,
            })
            .collect();
        // The per-node state durations tile the run.
        let duration = self
            .nodes
            .values()
            .find(|n| !n.state_ticks.is_empty())
            .map(|n| SimTime::from_ticks(n.state_ticks.values().sum()))
            .unwrap_or(SimTime::ZERO);
        let delivered_bits: u64 = self.flows.values().map(|f| f.delivered_bits).sum();
        let duration_s = duration.as_secs_f64();
        MetricsSummary {
            global: GlobalMetrics {
                duration_s,
                pulse_collisions: self.collisions,
                drops: self.drops.clone(),
                transmissions: self.transmissions,
                retransmissions: self.retransmissions,
                acknowledged: self.acked,
                failed: self.failed,
                duplicates: self.duplicates,
                delivered_bits,
                throughput_bps: if duration_s > 0.0 { delivered_bits as f64 / duration_s } else { 0.0 },
                total_joules: nodes.iter().map(|n| n.total_joules).sum(),
            },
            flows,
            nodes,
        }
    }
}

pub fn summarize<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> MetricsSummary {
    let mut acc = MetricsAccumulator::new();
    for r in records {
        acc.consume(r);
    }
    acc.summary()
}

fn opt_secs(v: Option<f64>) -> String {
    v.map(|s| format!("{:.3e}", s)).unwrap_or_else(|| "-".into())
}

impl MetricsSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn flow(&self, src: u32, dst: u32) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.src == src && f.dst == dst)
    }

    pub fn node(&self, node: u32) -> Option<&NodeEnergyMetrics> {
        self.nodes.iter().find(|n| n.node == node)
    }

    pub fn to_table(&self) -> String {
        let g = &self.global;
        let mut out = String::new();
        let _ = writeln!(out, "duration        {:.6} s", g.duration_s);
        let _ = writeln!(out, "throughput      {:.3} bit/s ({} bits)", g.throughput_bps, g.delivered_bits);
        let _ = writeln!(out, "pulse collisions {}", g.pulse_collisions);
        let _ = writeln!(
            out,
            "transmissions   {} ({} retransmissions, {} acked, {} failed, {} duplicates)",
            g.transmissions, g.retransmissions, g.acknowledged, g.failed, g.duplicates
        );
        for (reason, n) in &g.drops {
            let _ = writeln!(out, "drop {reason:<16} {n}");
        }
        let _ = writeln!(out, "energy          {:.6e} J", g.total_joules);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>6} {:>6} {:>9} {:>9} {:>8} {:>11} {:>11}", "src", "dst", "offered", "delivered", "PER", "mean lat", "p95 lat");
        for f in &self.flows {
            let _ = writeln!(
                out,
                "{:>6} {:>6} {:>9} {:>9} {:>8.4} {:>11} {:>11}",
                f.src,
                f.dst,
                f.offered,
                f.delivered,
                f.per,
                opt_secs(f.mean_latency_s),
                opt_secs(f.p95_latency_s)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>6} {:>10} {:>10} {:>14} {:>8}", "node", "pulses tx", "pulses rx", "energy (J)", "reports");
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "{:>6} {:>10} {:>10} {:>14.6e} {:>8}",
                n.node, n.pulses_tx, n.pulses_rx, n.total_joules, n.reports
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Sample mean and (n - 1) standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        MeanStd { mean, std: var.sqrt(), n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowAggregate {
    pub src: u32,
    pub dst: u32,
    pub per: MeanStd,
    pub mean_latency_s: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub throughput_bps: MeanStd,
    pub pulse_collisions: MeanStd,
    pub total_joules: MeanStd,
    pub flows: Vec<FlowAggregate>,
}

/// Mean and standard deviation across per-seed summaries.
pub fn aggregate(runs: &[(u64, MetricsSummary)]) -> Aggregate {
    let global = |f: fn(&GlobalMetrics) -> f64| MeanStd::of(&runs.iter().map(|(_, s)| f(&s.global)).collect::<Vec<_>>());
    let mut keys: Vec<(u32, u32)> = runs.iter().flat_map(|(_, s)| s.flows.iter().map(|f| (f.src, f.dst))).collect();
    keys.sort_unstable();
    keys.dedup();
    let flows = keys
        .into_iter()
        .map(|(src, dst)| {
            let per: Vec<f64> = runs.iter().filter_map(|(_, s)| s.flow(src, dst)).map(|f| f.per).collect();
            let lat: Vec<f64> = runs
                .iter()
                .filter_map(|(_, s)| s.flow(src, dst).and_then(|f| f.mean_latency_s))
                .collect();
            FlowAggregate { src, dst, per: MeanStd::of(&per), mean_latency_s: MeanStd::of(&lat) }
        })
        .collect();
    Aggregate {
        seeds: runs.iter().map(|(s, _)| *s).collect(),
        throughput_bps: global(|g| g.throughput_bps),
        pulse_collisions: global(|g| g.pulse_collisions as f64),
        total_joules: global(|g| g.total_joules),
        flows,
    }
}
