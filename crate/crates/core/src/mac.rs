//! Time-hopping MAC protocols as per-node state machines.
//!
//! None of the protocols senses the channel: the MAC sees only its own
//! queue, PHY completion notices, delivered PDUs and timers. Each input
//! returns [`MacCommand`]s that the simulation engine executes.
//!
//! * `Unslotted` hands a packet to the PHY at once; the PHY waits for the
//!   node's hop slot.
//! * `Slotted` starts transmissions only at the node's allocated MAC frames.
//! * The reliable variants add acknowledgments: an unacknowledged DATA PDU is
//!   retransmitted after the retransmission delay (unslotted) or at the
//!   node's next allocated frame (slotted), up to `retransmission_limit`
//!   retransmissions. One PDU is outstanding at a time.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    Unslotted,
    Slotted,
    ReliableUnslotted,
    ReliableSlotted,
}

impl Protocol {
    pub fn is_slotted(self) -> bool {
        matches!(self, Protocol::Slotted | Protocol::ReliableSlotted)
    }

    pub fn is_reliable(self) -> bool {
        matches!(self, Protocol::ReliableUnslotted | Protocol::ReliableSlotted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Unslotted => "unslotted",
            Protocol::Slotted => "slotted",
            Protocol::ReliableUnslotted => "reliable-unslotted",
            Protocol::ReliableSlotted => "reliable-slotted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PduKind {
    Data,
    Ack,
}

impl PduKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PduKind::Data => "DATA",
            PduKind::Ack => "ACK",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MacPdu {
    pub src: u32,
    pub dst: u32,
    pub seq: u32,
    pub kind: PduKind,
    pub payload_bits: u32,
    pub header_bits: u32,
}

impl MacPdu {
    /// Total packet length in bits (header plus payload).
    pub fn l_pdu(&self) -> u32 {
        self.header_bits + self.payload_bits
    }

    pub fn ack_for(data: &MacPdu) -> MacPdu {
        MacPdu {
            src: data.dst,
            dst: data.src,
            seq: data.seq,
            kind: PduKind::Ack,
            payload_bits: 0,
            header_bits: data.header_bits,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacError {
    #[error("node {0} has traffic but no allocated MAC frames")]
    NoAllocation(u32),
    #[error("MAC frame duration must be positive")]
    ZeroFrame,
    #[error("allocated frame index {index} outside cycle of {cycle}")]
    FrameOutOfCycle { index: u32, cycle: u32 },
}

/// Static MAC-frame allocation of one node: frame `k` (starting at
/// `k * frame`) belongs to the node iff `k mod cycle` is listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    frame: SimTime,
    cycle: u32,
    frames: Vec<u32>,
}

impl Allocation {
    pub fn new(frame: SimTime, cycle: u32, mut frames: Vec<u32>) -> Result<Self, MacError> {
        if frame == SimTime::ZERO {
            return Err(MacError::ZeroFrame);
        }
        let cycle = cycle.max(1);
        if let Some(&index) = frames.iter().find(|&&f| f >= cycle) {
            return Err(MacError::FrameOutOfCycle { index, cycle });
        }
        frames.sort_unstable();
        frames.dedup();
        Ok(Allocation { frame, cycle, frames })
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self) -> SimTime {
        self.frame
    }

    pub fn is_allocated_start(&self, t: SimTime) -> bool {
        t.ticks().is_multiple_of(self.frame.ticks())
            && self
                .frames
                .binary_search(&(((t.ticks() / self.frame.ticks()) % self.cycle as u64) as u32))
                .is_ok()
    }

    /// Earliest allocated frame start `>= t`.
    pub fn next_start(&self, t: SimTime) -> Option<SimTime> {
        if self.frames.is_empty() {
            return None;
        }
        let first = t.ticks().div_ceil(self.frame.ticks());
        (first..first + self.cycle as u64)
            .find(|k| self.frames.binary_search(&((k % self.cycle as u64) as u32)).is_ok())
            .map(|k| self.frame * k)
    }

    /// Earliest allocated frame start `> t`.
    pub fn next_start_after(&self, t: SimTime) -> Option<SimTime> {
        self.next_start(t + SimTime::from_ticks(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacParams {
    pub protocol: Protocol,
    pub header_bits: u32,
    pub retransmission_delay: SimTime,
    pub retransmission_limit: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxQueueEntry {
    pub pdu: MacPdu,
    pub attempts: u32,
    pub enqueued_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MacCommand {
    /// Hand `pdu` to the PHY at `at` (the PHY then waits for its hop slot).
    Transmit { pdu: MacPdu, at: SimTime, attempt: u32 },
    ArmTimer { token: u64, at: SimTime },
    /// Fresh DATA addressed to this node.
    DeliverUp { pdu: MacPdu },
    Duplicate { pdu: MacPdu },
    /// PDU addressed to another node; there is no forwarding.
    Foreign { pdu: MacPdu },
    AckUnexpected { pdu: MacPdu },
    /// Non-reliable DATA finished transmitting.
    Sent { pdu: MacPdu, attempts: u32 },
    Acknowledged { pdu: MacPdu, attempts: u32 },
    Failed { pdu: MacPdu, attempts: u32 },
    /// Nothing queued, outstanding or on air.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// Handed to the PHY (or waiting for the access instant).
    Sending,
    AwaitingAck { token: u64 },
    RetryPending,
}

#[derive(Debug, Clone, Copy)]
struct Outstanding {
    entry: TxQueueEntry,
    phase: Phase,
    /// Access instant of the current attempt.
    attempt_start: SimTime,
}

#[derive(Debug, Clone)]
pub struct Mac {
    node: u32,
    params: MacParams,
    allocation: Option<Allocation>,
    queue: VecDeque<TxQueueEntry>,
    acks: VecDeque<MacPdu>,
    outstanding: Option<Outstanding>,
    on_air: Option<MacPdu>,
    next_seq: HashMap<u32, u32>,
    last_seen: HashMap<u32, u32>,
    next_token: u64,
}

impl Mac {
    pub fn new(node: u32, params: MacParams, allocation: Option<Allocation>) -> Self {
        Mac {
            node,
            params,
            allocation,
            queue: VecDeque::new(),
            acks: VecDeque::new(),
            outstanding: None,
            on_air: None,
            next_seq: HashMap::new(),
            last_seen: HashMap::new(),
            next_token: 0,
        }
    }

    pub fn node(&self) -> u32 {
        self.node
    }

    pub fn params(&self) -> &MacParams {
        &self.params
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.acks.is_empty() && self.outstanding.is_none() && self.on_air.is_none()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Queues a new DATA PDU and returns it (with its sequence number).
    pub fn enqueue(
        &mut self,
        dst: u32,
        payload_bits: u32,
        now: SimTime,
        out: &mut Vec<MacCommand>,
    ) -> Result<MacPdu, MacError> {
        if self.params.protocol.is_slotted() && self.allocation.as_ref().is_none_or(Allocation::is_empty) {
            return Err(MacError::NoAllocation(self.node));
        }
        let seq = self.next_seq.entry(dst).or_insert(0);
        let pdu = MacPdu {
            src: self.node,
            dst,
            seq: *seq,
            kind: PduKind::Data,
            payload_bits,
            header_bits: self.params.header_bits,
        };
        *seq += 1;
        self.queue.push_back(TxQueueEntry { pdu, attempts: 0, enqueued_at: now });
        self.pump(now, out);
        Ok(pdu)
    }

    /// The PHY finished sending `pdu`.
    pub fn on_tx_done(&mut self, pdu: MacPdu, now: SimTime, out: &mut Vec<MacCommand>) {
        debug_assert_eq!(self.on_air, Some(pdu));
        self.on_air = None;
        if pdu.kind == PduKind::Data {
            if let Some(o) = self.outstanding.as_mut() {
                if o.entry.pdu.seq == pdu.seq && o.entry.pdu.dst == pdu.dst && o.phase == Phase::Sending {
                    if self.params.protocol.is_reliable() {
                        let token = self.next_token;
                        self.next_token += 1;
                        o.phase = Phase::AwaitingAck { token };
                        let at = match (self.params.protocol, &self.allocation) {
                            (Protocol::ReliableSlotted, Some(a)) => {
                                a.next_start_after(o.attempt_start).unwrap_or(SimTime::MAX)
                            }
                            _ => now + self.params.retransmission_delay,
                        };
                        out.push(MacCommand::ArmTimer { token, at });
                    } else {
                        out.push(MacCommand::Sent { pdu, attempts: o.entry.attempts });
                        self.outstanding = None;
                    }
                }
            }
        }
        self.pump(now, out);
    }

    pub fn on_timeout(&mut self, token: u64, now: SimTime, out: &mut Vec<MacCommand>) {
        let Some(o) = self.outstanding.as_mut() else { return };
        if o.phase != (Phase::AwaitingAck { token }) {
            return;
        }
        if o.entry.attempts < self.params.retransmission_limit + 1 {
            o.phase = Phase::RetryPending;
        } else {
            out.push(MacCommand::Failed { pdu: o.entry.pdu, attempts: o.entry.attempts });
            self.outstanding = None;
        }
        self.pump(now, out);
    }

    /// The PHY delivered an error-free PDU.
    pub fn on_phy_deliver(&mut self, pdu: MacPdu, now: SimTime, out: &mut Vec<MacCommand>) {
        if pdu.dst != self.node {
            out.push(MacCommand::Foreign { pdu });
            return;
        }
        match pdu.kind {
            PduKind::Data => {
                let fresh = self.last_seen.get(&pdu.src).is_none_or(|&last| pdu.seq > last);
                if fresh {
                    self.last_seen.insert(pdu.src, pdu.seq);
                    out.push(MacCommand::DeliverUp { pdu });
                } else {
                    out.push(MacCommand::Duplicate { pdu });
                }
                if self.params.protocol.is_reliable() {
                    self.acks.push_back(MacPdu::ack_for(&pdu));
                }
            }
            PduKind::Ack => {
                let matches = self
                    .outstanding
                    .as_ref()
                    .is_some_and(|o| o.entry.pdu.dst == pdu.src && o.entry.pdu.seq == pdu.seq);
                if matches && self.params.protocol.is_reliable() {
                    let o = self.outstanding.take().expect("checked above");
                    out.push(MacCommand::Acknowledged { pdu: o.entry.pdu, attempts: o.entry.attempts });
                } else {
                    out.push(MacCommand::AckUnexpected { pdu });
                }
            }
        }
        self.pump(now, out);
    }

    fn access_time(&self, now: SimTime) -> SimTime {
        match &self.allocation {
            Some(a) if self.params.protocol.is_slotted() => a.next_start(now).unwrap_or(SimTime::MAX),
            _ => now,
        }
    }

    fn pump(&mut self, now: SimTime, out: &mut Vec<MacCommand>) {
        if self.on_air.is_some() {
            return;
        }
        let at = self.access_time(now);
        if let Some(ack) = self.acks.pop_front() {
            self.on_air = Some(ack);
            out.push(MacCommand::Transmit { pdu: ack, at, attempt: 1 });
            return;
        }
        if self.outstanding.is_none() {
            if let Some(entry) = self.queue.pop_front() {
                self.outstanding = Some(Outstanding { entry, phase: Phase::RetryPending, attempt_start: at });
            }
        }
        match self.outstanding.as_mut() {
            Some(o) if o.phase == Phase::RetryPending => {
                o.entry.attempts += 1;
                o.phase = Phase::Sending;
                o.attempt_start = at;
                self.on_air = Some(o.entry.pdu);
                out.push(MacCommand::Transmit { pdu: o.entry.pdu, at, attempt: o.entry.attempts });
            }
            Some(_) => {}
            None => out.push(MacCommand::Idle),
        }
    }
}
