//! Event-driven execution of one scenario run.
//!
//! Every transmitted pulse is delivered to every linked receiver as its own
//! event. A receiver buffers arrivals and evaluates each pulse once the last
//! slot boundary by which any overlapping pulse could arrive has passed, so
//! interference is always complete at evaluation time. Pulse chains are
//! generated lazily (pulse `k + 1` is scheduled when pulse `k` arrives) to
//! keep the queue small.
//!
//! Reception: a receiver starts tracking a packet when the packet's first
//! pulse is evaluated above sensitivity while the receiver neither transmits
//! nor sleeps in that slot and holds fewer than `max_concurrent_receptions`
//! contexts. A tracked packet is delivered iff every pulse was demodulated
//! without error.

use std::collections::VecDeque;

use thiserror::Error;

use crate::channel;
use crate::energy::{Direction, EnergyLedger, EnergyReport, LedgerError};
use crate::kernel::{Event, Kernel, KernelError, Layer, Target};
use crate::mac::{Allocation, Mac, MacCommand, MacError, MacPdu, PduKind};
use crate::metrics::{MetricsAccumulator, MetricsSummary};
use crate::phy::{
    wait_for_slot, BerTable, Demodulator, DropReason, PacketId, PhyError, PulseArrival, ReceptionContext,
    RxOutcome, RxSummary, SlotState, SlotWindow,
};
use crate::rng::{Purpose, RandomStream};
use crate::scenario::{Arrivals, Model, Role};
use crate::sensing::RateLimiter;
use crate::time::SimTime;
use crate::trace::{TraceError, TraceEvent, TraceLayer, TraceRecord, TraceSink};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error("setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub events: u64,
    pub pulse_arrivals: u64,
    pub transmissions: u64,
}

pub struct RunOutput {
    pub summary: MetricsSummary,
    pub energy: Vec<EnergyReport>,
    /// Filled only for [`TraceSink::Memory`].
    pub records: Vec<TraceRecord>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Generate { flow: u32 },
    TxStart { packet: PacketId },
    TxEnd { packet: PacketId },
    Pulse { packet: PacketId, link: u32, k: u32 },
    Settle,
    AckTimeout { token: u64 },
    Emit { phenomenon: u32 },
    SenseArrival { intensity: f64 },
    SelfSample,
}

#[derive(Debug, Clone, Copy)]
struct Link {
    rx: u32,
    delay: SimTime,
    power: f64,
}

#[derive(Debug, Clone, Copy)]
struct PacketInfo {
    pdu: MacPdu,
    src: usize,
    first_pulse: SimTime,
}

#[derive(Debug, Clone, Copy)]
struct TxSpan {
    first: SimTime,
    pulses: u32,
}

#[derive(Debug, Clone, Copy)]
struct Buffered {
    pulse: PulseArrival,
    window: SlotWindow,
    evaluated: bool,
}

struct NodeState {
    id: u32,
    mac: Mac,
    ledger: EnergyLedger,
    tx_spans: VecDeque<TxSpan>,
    active_tx: Option<PacketId>,
    sleep_since: Option<SimTime>,
    sleeps: VecDeque<(SimTime, SimTime)>,
    buffer: VecDeque<Buffered>,
    contexts: Vec<ReceptionContext>,
    last_settle: Option<SimTime>,
    bits: RandomStream,
    impairment: RandomStream,
    sensing: RandomStream,
    last_sample: Option<SimTime>,
    limiter: RateLimiter,
}

struct Tracer {
    sink: TraceSink,
    metrics: MetricsAccumulator,
}

impl Tracer {
    fn emit(&mut self, record: TraceRecord) -> Result<(), TraceError> {
        self.metrics.consume(&record);
        self.sink.record(record)
    }
}

struct World<'a> {
    model: &'a Model,
    ber: &'a BerTable,
    noise_power: f64,
    links: Vec<Vec<Link>>,
    nodes: Vec<NodeState>,
    packets: Vec<PacketInfo>,
    flow_streams: Vec<RandomStream>,
    flow_generated: Vec<u64>,
    tracer: Tracer,
    stats: RunStats,
    scratch: Vec<MacCommand>,
    concurrent: Vec<PulseArrival>,
    /// How far back a receiver may still evaluate a slot.
    history_margin: SimTime,
}

fn kind_str(kind: PduKind) -> &'static str {
    kind.as_str()
}

fn pdu_fields(pdu: &MacPdu) -> impl FnOnce(&mut crate::trace::Fields) + '_ {
    move |f| {
        f.kind = Some(kind_str(pdu.kind));
        f.src = Some(pdu.src);
        f.dst = Some(pdu.dst);
        f.seq = Some(pdu.seq);
    }
}

/// Runs `model` to its end time.
pub fn run(model: &Model, ber: &BerTable, trace: TraceSink) -> Result<RunOutput, EngineError> {
    let mut world = World::new(model, ber, trace)?;
    let mut kernel: Kernel<Ev> = Kernel::new();
    world.bootstrap(&mut kernel)?;
    while let Some(ev) = kernel.pop_until(model.duration) {
        world.handle(&mut kernel, ev)?;
    }
    world.stats.events = kernel.dispatched();
    world.finish()
}

impl<'a> World<'a> {
    fn new(model: &'a Model, ber: &'a BerTable, sink: TraceSink) -> Result<Self, EngineError> {
        let n = model.nodes.len();
        let mut links = vec![Vec::new(); n];
        for (i, a) in model.nodes.iter().enumerate() {
            for (j, b) in model.nodes.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = a.position.distance(&b.position);
                let delay = channel::propagation_delay(d, &model.channel)
                    .map_err(|e| EngineError::Setup(format!("link {}->{}: {e}", a.id, b.id)))?;
                let power = channel::received_power(&model.radio.budget, d, &model.channel)
                    .map_err(|e| EngineError::Setup(format!("link {}->{}: {e}", a.id, b.id)))?;
                if model.radio.interference_floor.is_some_and(|floor| power < floor) {
                    continue;
                }
                links[i].push(Link { rx: j as u32, delay, power });
            }
        }
        let suppression = model.sensing.as_ref().map(|s| s.suppression_window).unwrap_or(SimTime::ZERO);
        let slotted = model.mac.protocol.is_slotted();
        let mut nodes = Vec::with_capacity(n);
        for (i, m) in model.nodes.iter().enumerate() {
            let allocation = if slotted && !m.mac_frames.is_empty() {
                Some(Allocation::new(model.mac_frame, model.allocation_cycle, m.mac_frames.clone())?)
            } else {
                None
            };
            let stream_node = i as u32;
            nodes.push(NodeState {
                id: m.id,
                mac: Mac::new(m.id, model.mac, allocation),
                ledger: EnergyLedger::new(m.id, m.profile),
                tx_spans: VecDeque::new(),
                active_tx: None,
                sleep_since: None,
                sleeps: VecDeque::new(),
                buffer: VecDeque::new(),
                contexts: Vec::new(),
                last_settle: None,
                bits: RandomStream::new(model.seed, stream_node, Purpose::BitErrors),
                impairment: RandomStream::new(model.seed, stream_node, Purpose::Impairment),
                sensing: RandomStream::new(model.seed, stream_node, Purpose::Sensing),
                last_sample: None,
                limiter: RateLimiter::new(suppression),
            });
        }
        let flow_streams = model
            .flows
            .iter()
            .enumerate()
            .map(|(f, flow)| RandomStream::new(model.seed, flow.src as u32, Purpose::Traffic(f as u16)))
            .collect();
        let t = &model.timing;
        let history_margin = model.delay_spread.ceil_to(t.slot()) + t.slot() * 2 + t.frame();
        Ok(World {
            model,
            ber,
            noise_power: channel::noise_power(&model.channel),
            links,
            nodes,
            packets: Vec::new(),
            flow_streams,
            flow_generated: vec![0; model.flows.len()],
            tracer: Tracer { sink, metrics: MetricsAccumulator::new() },
            stats: RunStats::default(),
            scratch: Vec::new(),
            concurrent: Vec::new(),
            history_margin,
        })
    }

    fn trace(&mut self, record: TraceRecord) -> Result<(), EngineError> {
        Ok(self.tracer.emit(record)?)
    }

    fn bootstrap(&mut self, k: &mut Kernel<Ev>) -> Result<(), EngineError> {
        let model = self.model;
        for (f, flow) in model.flows.iter().enumerate() {
            let first = match flow.arrivals {
                Arrivals::Periodic(_) => Some(flow.start),
                Arrivals::Poisson(rate) => self.poisson_gap(f, rate).map(|gap| flow.start + gap),
            };
            if let Some(t) = first.filter(|t| *t < flow.stop && flow.count != Some(0)) {
                k.schedule(t, Target::node(flow.src, Layer::App), Ev::Generate { flow: f as u32 })?;
            }
        }
        if let Some(sensing) = &model.sensing {
            for (p, ph) in sensing.phenomena.iter().enumerate() {
                if ph.start <= model.duration {
                    k.schedule(ph.start, Target::global(Layer::Sensor), Ev::Emit { phenomenon: p as u32 })?;
                }
            }
            if sensing.self_sampling && sensing.device.false_positive_rate > 0.0 {
                for (i, n) in model.nodes.iter().enumerate() {
                    if n.role == Role::Sensor && i != sensing.sink {
                        k.schedule(SimTime::ZERO, Target::node(i, Layer::Sensor), Ev::SelfSample)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn poisson_gap(&mut self, flow: usize, rate: f64) -> Option<SimTime> {
        SimTime::from_secs_rounded(self.flow_streams[flow].exponential(rate))
    }

    fn handle(&mut self, k: &mut Kernel<Ev>, ev: Event<Ev>) -> Result<(), EngineError> {
        let node = ev.target.node;
        match ev.payload {
            Ev::Generate { flow } => self.on_generate(k, flow as usize),
            Ev::TxStart { packet } => self.on_tx_start(k, packet),
            Ev::TxEnd { packet } => self.on_tx_end(k, packet),
            Ev::Pulse { packet, link, k: index } => self.on_pulse(k, packet, link, index),
            Ev::Settle => self.on_settle(k, node.expect("settle targets a node")),
            Ev::AckTimeout { token } => {
                let i = node.expect("timer targets a node");
                let now = k.now();
                let mut cmds = std::mem::take(&mut self.scratch);
                self.nodes[i].mac.on_timeout(token, now, &mut cmds);
                self.exec(k, i, cmds)
            }
            Ev::Emit { phenomenon } => self.on_emit(k, phenomenon as usize),
            Ev::SenseArrival { intensity } => self.on_sense(k, node.expect("sample targets a node"), intensity),
            Ev::SelfSample => self.on_self_sample(k, node.expect("sample targets a node")),
        }
    }

    fn on_generate(&mut self, k: &mut Kernel<Ev>, f: usize) -> Result<(), EngineError> {
        let flow = &self.model.flows[f];
        let now = k.now();
        self.flow_generated[f] += 1;
        let dst = self.model.nodes[flow.dst].id;
        self.enqueue(k, flow.src, dst, flow.payload_bits)?;
        let next = match flow.arrivals {
            Arrivals::Periodic(p) => Some(now + p),
            Arrivals::Poisson(rate) => self.poisson_gap(f, rate).map(|gap| now + gap),
        };
        let more = flow.count.is_none_or(|c| self.flow_generated[f] < c);
        if let Some(t) = next.filter(|t| *t < flow.stop && more) {
            k.schedule(t, Target::node(flow.src, Layer::App), Ev::Generate { flow: f as u32 })?;
        }
        Ok(())
    }

    fn enqueue(&mut self, k: &mut Kernel<Ev>, i: usize, dst: u32, payload_bits: u32) -> Result<(), EngineError> {
        let now = k.now();
        self.wake(i, now)?;
        let mut cmds = std::mem::take(&mut self.scratch);
        let pdu = self.nodes[i].mac.enqueue(dst, payload_bits, now, &mut cmds)?;
        let id = self.nodes[i].id;
        self.trace(TraceRecord::new(now, Some(id), TraceLayer::Mac, TraceEvent::Enqueue).with(pdu_fields(&pdu)))?;
        self.exec(k, i, cmds)
    }

    fn exec(&mut self, k: &mut Kernel<Ev>, i: usize, mut cmds: Vec<MacCommand>) -> Result<(), EngineError> {
        let now = k.now();
        let id = self.nodes[i].id;
        for cmd in cmds.drain(..) {
            let mac_row = |event| TraceRecord::new(now, Some(id), TraceLayer::Mac, event);
            match cmd {
                MacCommand::Transmit { pdu, at, attempt } => {
                    let packet = self.packets.len() as PacketId;
                    self.packets.push(PacketInfo { pdu, src: i, first_pulse: SimTime::MAX });
                    self.trace(mac_row(TraceEvent::Send).with(pdu_fields(&pdu)).with(|f| {
                        f.packet = Some(packet);
                        f.attempt = Some(attempt);
                    }))?;
                    k.schedule(at, Target::node(i, Layer::Phy), Ev::TxStart { packet })?;
                }
                MacCommand::ArmTimer { token, at } => {
                    k.schedule(at, Target::node(i, Layer::Mac), Ev::AckTimeout { token })?;
                }
                MacCommand::DeliverUp { pdu } => {
                    self.trace(
                        mac_row(TraceEvent::Deliver)
                            .with(pdu_fields(&pdu))
                            .with(|f| f.value = Some(pdu.payload_bits as f64)),
                    )?;
                }
                MacCommand::Duplicate { pdu } => self.trace(mac_row(TraceEvent::Duplicate).with(pdu_fields(&pdu)))?,
                MacCommand::Foreign { pdu } => self.trace(mac_row(TraceEvent::Foreign).with(pdu_fields(&pdu)))?,
                MacCommand::AckUnexpected { pdu } => {
                    self.trace(mac_row(TraceEvent::AckUnexpected).with(pdu_fields(&pdu)))?
                }
                MacCommand::Sent { pdu, attempts } => self.trace(
                    mac_row(TraceEvent::Sent).with(pdu_fields(&pdu)).with(|f| f.attempt = Some(attempts)),
                )?,
                MacCommand::Acknowledged { pdu, attempts } => self.trace(
                    mac_row(TraceEvent::Acked).with(pdu_fields(&pdu)).with(|f| f.attempt = Some(attempts)),
                )?,
                MacCommand::Failed { pdu, attempts } => self.trace(
                    mac_row(TraceEvent::Failed).with(pdu_fields(&pdu)).with(|f| f.attempt = Some(attempts)),
                )?,
                MacCommand::Idle => self.maybe_sleep(i, now)?,
            }
        }
        self.scratch = cmds;
        Ok(())
    }

    fn maybe_sleep(&mut self, i: usize, now: SimTime) -> Result<(), EngineError> {
        let model = self.model;
        let node = &mut self.nodes[i];
        if !model.doze || model.nodes[i].role != Role::Sensor || node.sleep_since.is_some() {
            return Ok(());
        }
        let start = now.ceil_to(model.timing.slot());
        node.sleep_since = Some(start);
        let id = node.id;
        self.trace(
            TraceRecord::new(now, Some(id), TraceLayer::Phy, TraceEvent::Sleep)
                .with(|f| f.slot = Some(model.timing.absolute_slot(start))),
        )
    }

    fn wake(&mut self, i: usize, now: SimTime) -> Result<(), EngineError> {
        let model = self.model;
        let node = &mut self.nodes[i];
        let Some(start) = node.sleep_since.take() else { return Ok(()) };
        let end = now.ceil_to(model.timing.slot()).max(start);
        node.ledger.account_interval(SlotState::Sleep, start, end - start, model.duration);
        node.sleeps.push_back((start, end));
        let margin = self.history_margin;
        while node.sleeps.front().is_some_and(|&(_, e)| e + margin < now) {
            node.sleeps.pop_front();
        }
        let id = node.id;
        self.trace(
            TraceRecord::new(now, Some(id), TraceLayer::Phy, TraceEvent::Wake)
                .with(|f| f.slot = Some(model.timing.absolute_slot(end))),
        )
    }

    fn on_tx_start(&mut self, k: &mut Kernel<Ev>, packet: PacketId) -> Result<(), EngineError> {
        let model = self.model;
        let timing = &model.timing;
        let now = k.now();
        let info = self.packets[packet as usize];
        let i = info.src;
        let first = wait_for_slot(now, timing, model.nodes[i].ths);
        let pulses = info.pdu.l_pdu();
        self.packets[packet as usize].first_pulse = first;
        self.stats.transmissions += 1;
        let node = &mut self.nodes[i];
        debug_assert!(node.active_tx.is_none(), "PHY handed a second PDU");
        node.active_tx = Some(packet);
        node.tx_spans.push_back(TxSpan { first, pulses });
        let margin = self.history_margin;
        while node
            .tx_spans
            .front()
            .is_some_and(|s| s.first + timing.frame() * s.pulses as u64 + margin < now)
        {
            node.tx_spans.pop_front();
        }
        let id = node.id;
        self.trace(
            TraceRecord::new(now, Some(id), TraceLayer::Phy, TraceEvent::TxStart)
                .with(pdu_fields(&info.pdu))
                .with(|f| {
                    f.packet = Some(packet);
                    f.slot = Some(timing.absolute_slot(first));
                    f.pulses = Some(pulses);
                }),
        )?;
        for (l, link) in self.links[i].iter().enumerate() {
            k.schedule(
                first + link.delay,
                Target::node(link.rx as usize, Layer::Phy),
                Ev::Pulse { packet, link: l as u32, k: 0 },
            )?;
        }
        k.schedule(first + timing.frame() * pulses as u64, Target::node(i, Layer::Phy), Ev::TxEnd { packet })?;
        Ok(())
    }

    fn on_tx_end(&mut self, k: &mut Kernel<Ev>, packet: PacketId) -> Result<(), EngineError> {
        let now = k.now();
        let info = self.packets[packet as usize];
        let i = info.src;
        let pulses = info.pdu.l_pdu();
        let slot = self.model.timing.slot();
        let node = &mut self.nodes[i];
        node.active_tx = None;
        node.ledger.account_pulses(Direction::Tx, pulses as u64);
        node.ledger.account_state(SlotState::Transmit, slot * pulses as u64);
        let id = node.id;
        self.trace(
            TraceRecord::new(now, Some(id), TraceLayer::Phy, TraceEvent::TxEnd)
                .with(pdu_fields(&info.pdu))
                .with(|f| {
                    f.packet = Some(packet);
                    f.pulses = Some(pulses);
                }),
        )?;
        let mut cmds = std::mem::take(&mut self.scratch);
        self.nodes[i].mac.on_tx_done(info.pdu, now, &mut cmds);
        self.exec(k, i, cmds)
    }

    fn on_pulse(&mut self, k: &mut Kernel<Ev>, packet: PacketId, link: u32, index: u32) -> Result<(), EngineError> {
        let model = self.model;
        let timing = &model.timing;
        let now = k.now();
        let info = self.packets[packet as usize];
        let l = self.links[info.src][link as usize];
        let rx = l.rx as usize;
        self.stats.pulse_arrivals += 1;
        let pulse = PulseArrival {
            arrival: now,
            power: l.power,
            source: model.nodes[info.src].id,
            packet,
            bit_index: index,
        };
        let window = SlotWindow::of(now, timing, model.delay_spread);
        let settle = window.settle_time(timing);
        let node = &mut self.nodes[rx];
        node.buffer.push_back(Buffered { pulse, window, evaluated: false });
        if node.last_settle != Some(settle) {
            node.last_settle = Some(settle);
            k.schedule(settle, Target::node(rx, Layer::Phy), Ev::Settle)?;
        }
        if index + 1 < info.pdu.l_pdu() {
            k.schedule(now + timing.frame(), Target::node(rx, Layer::Phy), Ev::Pulse { packet, link, k: index + 1 })?;
        }
        Ok(())
    }

    fn transmitting_in(&self, i: usize, slot_start: SimTime) -> bool {
        let frame = self.model.timing.frame();
        self.nodes[i].tx_spans.iter().any(|s| {
            slot_start >= s.first
                && (slot_start - s.first).ticks().is_multiple_of(frame.ticks())
                && (slot_start - s.first).ticks() / frame.ticks() < s.pulses as u64
        })
    }

    fn asleep_in(&self, i: usize, slot_start: SimTime) -> bool {
        let node = &self.nodes[i];
        node.sleep_since.is_some_and(|s| slot_start >= s)
            || node.sleeps.iter().any(|&(s, e)| s <= slot_start && slot_start < e)
    }

    fn on_settle(&mut self, k: &mut Kernel<Ev>, rx: usize) -> Result<(), EngineError> {
        let now = k.now();
        let timing = &self.model.timing;
        let mut idx = 0;
        while idx < self.nodes[rx].buffer.len() {
            let b = self.nodes[rx].buffer[idx];
            if !b.evaluated && b.window.settle_time(timing) <= now {
                self.evaluate(k, rx, idx)?;
                self.nodes[rx].buffer[idx].evaluated = true;
            }
            idx += 1;
        }
        let node = &mut self.nodes[rx];
        let horizon = node
            .buffer
            .iter()
            .filter(|b| !b.evaluated)
            .map(|b| b.window.start)
            .min()
            .unwrap_or(SimTime::MAX)
            .min(now.floor_to(timing.slot()));
        while node.buffer.front().is_some_and(|b| b.evaluated && b.window.end <= horizon) {
            node.buffer.pop_front();
        }
        Ok(())
    }

    fn evaluate(&mut self, k: &mut Kernel<Ev>, rx: usize, idx: usize) -> Result<(), EngineError> {
        let model = self.model;
        let now = k.now();
        let timing = &model.timing;
        let b = self.nodes[rx].buffer[idx];
        let pulse = b.pulse;
        let slot_start = b.window.start;
        let slot_index = timing.absolute_slot(slot_start);
        let busy = self.transmitting_in(rx, slot_start) || self.asleep_in(rx, slot_start);
        let sensitivity = model.nodes[rx].sensitivity;
        let info = self.packets[pulse.packet as usize];

        let mut ctx = self.nodes[rx].contexts.iter().position(|c| c.packet == pulse.packet);
        if pulse.bit_index == 0 && ctx.is_none() {
            let limit = model.radio.max_concurrent_receptions as usize;
            let room = limit == 0 || self.nodes[rx].contexts.len() < limit;
            if !busy && room && pulse.power >= sensitivity {
                let ths = model.nodes[info.src].ths;
                let c = ReceptionContext::new(pulse.packet, pulse.source, info.pdu.l_pdu(), ths, now);
                self.nodes[rx].contexts.push(c);
                ctx = Some(self.nodes[rx].contexts.len() - 1);
                let id = self.nodes[rx].id;
                self.trace(
                    TraceRecord::new(now, Some(id), TraceLayer::Phy, TraceEvent::RxStart)
                        .with(pdu_fields(&info.pdu))
                        .with(|f| {
                            f.packet = Some(pulse.packet);
                            f.slot = Some(slot_index);
                        }),
                )?;
            } else if info.pdu.dst == self.nodes[rx].id {
                let reason = if pulse.power < sensitivity { DropReason::BelowSensitivity } else { DropReason::ReceiverBusy };
                let id = self.nodes[rx].id;
                self.trace(
                    TraceRecord::new(now, Some(id), TraceLayer::Phy, TraceEvent::Drop)
                        .with(pdu_fields(&info.pdu))
                        .with(|f| {
                            f.packet = Some(pulse.packet);
                            f.pulses = Some(0);
                            f.collisions = Some(0);
                            f.reason = Some(reason.as_str().to_string());
                        }),
                )?;
            }
        }

        if busy {
            if let Some(c) = ctx {
                self.nodes[rx].contexts[c].miss_pulse();
                self.maybe_finish_context(k, rx, c)?;
            }
            return Ok(());
        }

        let state = match ctx {
            Some(c) => {
                let mut concurrent = std::mem::take(&mut self.concurrent);
                concurrent.clear();
                concurrent.extend(
                    self.nodes[rx]
                        .buffer
                        .iter()
                        .enumerate()
                        .filter(|(j, o)| *j != idx && o.window.intersects(&b.window))
                        .map(|(_, o)| o.pulse),
                );
                let demod = Demodulator {
                    sensitivity,
                    noise_figure: model.radio.noise_figure,
                    noise_power: self.noise_power,
                    ber_table: self.ber,
                };
                let node = &mut self.nodes[rx];
                let outcome = node.contexts[c].on_pulse(&pulse, &concurrent, &demod, &mut node.bits)?;
                self.concurrent = concurrent;
                if outcome.state == SlotState::Receive {
                    node.ledger.account_pulse(Direction::Rx);
                }
                let state = outcome.state;
                node.ledger.mark_receiver_slot(slot_index, state, timing.slot(), model.duration);
                self.maybe_finish_context(k, rx, c)?;
                return Ok(());
            }
            None => SlotState::Sense,
        };
        self.nodes[rx].ledger.mark_receiver_slot(slot_index, state, timing.slot(), model.duration);
        Ok(())
    }

    fn maybe_finish_context(&mut self, k: &mut Kernel<Ev>, rx: usize, c: usize) -> Result<(), EngineError> {
        if !self.nodes[rx].contexts[c].all_pulses_handled() {
            return Ok(());
        }
        let now = k.now();
        let ctx = self.nodes[rx].contexts.remove(c);
        let info = self.packets[ctx.packet as usize];
        let mut summary = ctx.finalize();
        let node = &mut self.nodes[rx];
        if summary.outcome == RxOutcome::Deliver && info.pdu.dst == node.id {
            let p = match info.pdu.kind {
                PduKind::Data => self.model.impairment.data_loss_probability,
                PduKind::Ack => self.model.impairment.ack_loss_probability,
            };
            if p > 0.0 && node.impairment.bernoulli(p) {
                summary.outcome = RxOutcome::Drop(DropReason::ForcedLoss);
            }
        }
        self.trace_rx(now, rx, &info, &summary)?;
        if summary.outcome == RxOutcome::Deliver {
            let mut cmds = std::mem::take(&mut self.scratch);
            self.nodes[rx].mac.on_phy_deliver(info.pdu, now, &mut cmds);
            self.exec(k, rx, cmds)?;
        }
        Ok(())
    }

    fn trace_rx(&mut self, now: SimTime, rx: usize, info: &PacketInfo, s: &RxSummary) -> Result<(), EngineError> {
        let (event, reason) = match s.outcome {
            RxOutcome::Deliver => (TraceEvent::RxOk, None),
            RxOutcome::Drop(r) => (TraceEvent::Drop, Some(r.as_str().to_string())),
        };
        let id = self.nodes[rx].id;
        self.trace(
            TraceRecord::new(now, Some(id), TraceLayer::Phy, event)
                .with(pdu_fields(&info.pdu))
                .with(|f| {
                    f.packet = Some(s.packet);
                    f.pulses = Some(s.pulses_received);
                    f.collisions = Some(s.collisions);
                    f.sinr_db = s.min_sinr_db();
                    f.reason = reason;
                }),
        )
    }

    fn on_emit(&mut self, k: &mut Kernel<Ev>, p: usize) -> Result<(), EngineError> {
        let model = self.model;
        let sensing = model.sensing.as_ref().expect("emission implies sensing");
        let ph = &sensing.phenomena[p];
        let now = k.now();
        self.trace(
            TraceRecord::new(now, None, TraceLayer::Sensor, TraceEvent::Emit).with(|f| f.value = Some(p as f64)),
        )?;
        for (i, n) in model.nodes.iter().enumerate() {
            if n.role != Role::Sensor || i == sensing.sink {
                continue;
            }
            let intensity = ph.intensity_at(&n.position);
            let delay = ph.delay_to(&n.position);
            if delay == SimTime::ZERO {
                self.on_sense(k, i, intensity)?;
            } else {
                k.schedule(now + delay, Target::node(i, Layer::Sensor), Ev::SenseArrival { intensity })?;
            }
        }
        let next = now + ph.period();
        if ph.is_active(next) {
            k.schedule(next, Target::global(Layer::Sensor), Ev::Emit { phenomenon: p as u32 })?;
        }
        Ok(())
    }

    /// A phenomenon sample reaches sensor `i`; the sensor keeps at most one
    /// sample per its own sampling period.
    fn on_sense(&mut self, k: &mut Kernel<Ev>, i: usize, intensity: f64) -> Result<(), EngineError> {
        let sensing = self.model.sensing.as_ref().expect("sample implies sensing");
        let now = k.now();
        let period = sensing.device.period();
        let node = &mut self.nodes[i];
        if node.last_sample.is_some_and(|t| now.saturating_sub(t) < period) {
            return Ok(());
        }
        node.last_sample = Some(now);
        self.sample(k, i, intensity)
    }

    fn on_self_sample(&mut self, k: &mut Kernel<Ev>, i: usize) -> Result<(), EngineError> {
        let sensing = self.model.sensing.as_ref().expect("sample implies sensing");
        let now = k.now();
        if !sensing.phenomena.iter().any(|ph| ph.is_active(now)) {
            self.sample(k, i, 0.0)?;
        }
        k.schedule(now + sensing.device.period(), Target::node(i, Layer::Sensor), Ev::SelfSample)?;
        Ok(())
    }

    fn sample(&mut self, k: &mut Kernel<Ev>, i: usize, intensity: f64) -> Result<(), EngineError> {
        let model = self.model;
        let sensing = model.sensing.as_ref().expect("sample implies sensing");
        let now = k.now();
        let node = &mut self.nodes[i];
        if !sensing.device.sense(intensity, &mut node.sensing) {
            return Ok(());
        }
        let admitted = node.limiter.admit(now);
        let id = node.id;
        self.trace(
            TraceRecord::new(now, Some(id), TraceLayer::Sensor, TraceEvent::Detect).with(|f| f.value = Some(intensity)),
        )?;
        if !admitted {
            return self.trace(TraceRecord::new(now, Some(id), TraceLayer::Sensor, TraceEvent::Suppressed));
        }
        let sink = model.nodes[sensing.sink].id;
        self.trace(TraceRecord::new(now, Some(id), TraceLayer::Sensor, TraceEvent::Report).with(|f| {
            f.src = Some(id);
            f.dst = Some(sink);
        }))?;
        self.enqueue(k, i, sink, sensing.report_bits)
    }

    fn finish(mut self) -> Result<RunOutput, EngineError> {
        let model = self.model;
        let end = model.duration;
        let timing = &model.timing;
        let mut energy = Vec::with_capacity(self.nodes.len());
        for i in 0..self.nodes.len() {
            if let Some(packet) = self.nodes[i].active_tx.take() {
                let info = self.packets[packet as usize];
                let l = info.pdu.l_pdu() as u64;
                let emitted = if info.first_pulse >= end {
                    0
                } else {
                    (end - info.first_pulse).ticks().div_ceil(timing.frame().ticks()).min(l)
                };
                let node = &mut self.nodes[i];
                node.ledger.account_pulses(Direction::Tx, emitted);
                for p in 0..emitted {
                    node.ledger.account_interval(
                        SlotState::Transmit,
                        info.first_pulse + timing.frame() * p,
                        timing.slot(),
                        end,
                    );
                }
                let id = node.id;
                self.trace(
                    TraceRecord::new(end, Some(id), TraceLayer::Phy, TraceEvent::TxEnd)
                        .with(pdu_fields(&info.pdu))
                        .with(|f| {
                            f.packet = Some(packet);
                            f.pulses = Some(emitted as u32);
                            f.reason = Some(DropReason::RunEnd.as_str().to_string());
                        }),
                )?;
            }
            if let Some(start) = self.nodes[i].sleep_since.take() {
                self.nodes[i].ledger.account_interval(SlotState::Sleep, start, end.saturating_sub(start), end);
            }
            let contexts = std::mem::take(&mut self.nodes[i].contexts);
            for ctx in contexts {
                let info = self.packets[ctx.packet as usize];
                let summary = ctx.summary(RxOutcome::Drop(DropReason::RunEnd));
                self.trace_rx(end, i, &info, &summary)?;
            }
            self.nodes[i].ledger.finish(timing.slot(), end)?;
            let report = self.nodes[i].ledger.report();
            let id = report.node;
            let row = |event| TraceRecord::new(end, Some(id), TraceLayer::Energy, event);
            self.trace(row(TraceEvent::PulsesTx).with(|f| f.value = Some(report.pulses_tx as f64)))?;
            self.trace(row(TraceEvent::PulsesRx).with(|f| f.value = Some(report.pulses_rx as f64)))?;
            for state in SlotState::ALL {
                self.trace(row(TraceEvent::StateTime).with(|f| {
                    f.reason = Some(state.as_str().to_string());
                    f.value = Some(report.time(state).ticks() as f64);
                }))?;
            }
            self.trace(row(TraceEvent::Total).with(|f| f.value = Some(report.total_joules)))?;
            energy.push(report);
        }
        let summary = self.tracer.metrics.summary();
        let records = self.tracer.sink.finish()?;
        Ok(RunOutput { summary, energy, records, stats: self.stats })
    }
}
