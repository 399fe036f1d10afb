//! Per-pulse capture, SINR and the per-packet deliver/drop decision.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ratio_to_db;
use crate::phy::BerTable;
use crate::rng::RandomStream;
use crate::time::SimTime;

pub type PacketId = u64;

/// Activity of one node during one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlotState {
    Idle,
    Transmit,
    Sleep,
    Sense,
    Receive,
}

impl SlotState {
    pub const ALL: [SlotState; 5] = [
        SlotState::Idle,
        SlotState::Transmit,
        SlotState::Sleep,
        SlotState::Sense,
        SlotState::Receive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotState::Idle => "IDLE",
            SlotState::Transmit => "TRANSMIT",
            SlotState::Sleep => "SLEEP",
            SlotState::Sense => "SENSE",
            SlotState::Receive => "RECEIVE",
        }
    }

    pub fn parse(s: &str) -> Option<SlotState> {
        SlotState::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for SlotState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One pulse at one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseArrival {
    pub arrival: SimTime,
    /// Received power, W.
    pub power: f64,
    /// Node id of the transmitter.
    pub source: u32,
    pub packet: PacketId,
    pub bit_index: u32,
}

impl PulseArrival {
    /// Capture ordering: higher power wins, exact ties go to the lower
    /// source id, then the lower packet id.
    pub fn beats(&self, other: &PulseArrival) -> bool {
        match self.power.partial_cmp(&other.power) {
            Some(std::cmp::Ordering::Greater) => true,
            Some(std::cmp::Ordering::Less) => false,
            _ => (self.source, self.packet) < (other.source, other.packet),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PhyError {
    #[error("signal power must be positive, got {0}")]
    NonPositiveSignal(f64),
    #[error("interferer power {interferer} exceeds candidate power {signal}")]
    InterfererStronger { signal: f64, interferer: f64 },
    #[error("pulse for packet {pulse} offered to context of packet {context}")]
    WrongPacket { pulse: PacketId, context: PacketId },
}

/// Signal to interference-plus-noise ratio of `p_s` against weaker
/// interferers and noise `P_n` scaled by the noise figure.
pub fn sinr(p_s: f64, interferers: &[f64], noise_figure: f64, p_n: f64) -> Result<f64, PhyError> {
    if p_s <= 0.0 || p_s.is_nan() {
        return Err(PhyError::NonPositiveSignal(p_s));
    }
    if let Some(&worst) = interferers.iter().find(|&&p| p > p_s) {
        return Err(PhyError::InterfererStronger { signal: p_s, interferer: worst });
    }
    let interference: f64 = interferers.iter().sum();
    Ok(p_s / (interference + noise_figure * p_n))
}

/// Receiver-side constants for pulse demodulation.
#[derive(Debug, Clone, Copy)]
pub struct Demodulator<'a> {
    pub sensitivity: f64,
    pub noise_figure: f64,
    pub noise_power: f64,
    pub ber_table: &'a BerTable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseOutcome {
    pub state: SlotState,
    /// `Some(true)` for a correctly decoded bit, `Some(false)` for an error.
    pub bit_ok: Option<bool>,
    /// Linear SINR of this pulse against everything it overlapped.
    pub sinr: f64,
    pub collided: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    BelowSensitivity,
    BitError,
    ReceiverBusy,
    ForcedLoss,
    RunEnd,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::BelowSensitivity => "below-sensitivity",
            DropReason::BitError => "bit-error",
            DropReason::ReceiverBusy => "receiver-busy",
            DropReason::ForcedLoss => "forced-loss",
            DropReason::RunEnd => "run-end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxOutcome {
    Deliver,
    Drop(DropReason),
}

/// Reception of one packet at one receiver.
#[derive(Debug, Clone)]
pub struct ReceptionContext {
    pub packet: PacketId,
    pub source: u32,
    pub l_pdu: u32,
    /// Frame-relative receiver slot the packet's pulses land in.
    pub expected_slot: u32,
    pub first_arrival: SimTime,
    pub sinr_log: Vec<f64>,
    pub bit_errors: u32,
    pub pulses_received: u32,
    /// Pulses lost while the receiver was transmitting or asleep.
    pub pulses_missed: u32,
    pub collisions: u32,
    /// Set once the packet's airtime has elapsed at this receiver.
    pub end_reached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxSummary {
    pub packet: PacketId,
    pub outcome: RxOutcome,
    pub pulses_received: u32,
    pub bit_errors: u32,
    pub collisions: u32,
    pub min_sinr: Option<f64>,
}

impl RxSummary {
    pub fn min_sinr_db(&self) -> Option<f64> {
        self.min_sinr.map(ratio_to_db)
    }
}

impl ReceptionContext {
    pub fn new(packet: PacketId, source: u32, l_pdu: u32, expected_slot: u32, first_arrival: SimTime) -> Self {
        ReceptionContext {
            packet,
            source,
            l_pdu,
            expected_slot,
            first_arrival,
            sinr_log: Vec::with_capacity(l_pdu as usize),
            bit_errors: 0,
            pulses_received: 0,
            pulses_missed: 0,
            collisions: 0,
            end_reached: false,
        }
    }

    /// Pulses accounted so far, received or missed.
    pub fn pulses_handled(&self) -> u32 {
        self.pulses_received + self.pulses_missed
    }

    pub fn all_pulses_handled(&self) -> bool {
        self.pulses_handled() >= self.l_pdu
    }

    pub fn miss_pulse(&mut self) {
        self.pulses_missed += 1;
    }

    /// Demodulates one of this packet's pulses against the pulses that
    /// overlap it (`concurrent` excludes `pulse` itself).
    ///
    /// The strongest pulse in the window is the candidate; everything weaker
    /// is summed as interference. If another packet's pulse is the candidate,
    /// this packet loses the bit.
    pub fn on_pulse(
        &mut self,
        pulse: &PulseArrival,
        concurrent: &[PulseArrival],
        demod: &Demodulator<'_>,
        stream: &mut RandomStream,
    ) -> Result<PulseOutcome, PhyError> {
        if pulse.packet != self.packet {
            return Err(PhyError::WrongPacket { pulse: pulse.packet, context: self.packet });
        }
        if pulse.power < demod.sensitivity {
            self.pulses_missed += 1;
            return Ok(PulseOutcome { state: SlotState::Sense, bit_ok: None, sinr: 0.0, collided: false });
        }
        let candidate = concurrent
            .iter()
            .fold(pulse, |best, p| if p.beats(best) { p } else { best });
        let collided = !concurrent.is_empty();
        let others: f64 = concurrent.iter().map(|p| p.power).sum();
        let ratio = pulse.power / (others + demod.noise_figure * demod.noise_power);

        let bit_ok = if std::ptr::eq(candidate, pulse) {
            let interferers: Vec<f64> = concurrent.iter().map(|p| p.power).collect();
            let s = sinr(pulse.power, &interferers, demod.noise_figure, demod.noise_power)?;
            let ber = demod.ber_table.lookup(ratio_to_db(s));
            !stream.bernoulli(ber)
        } else {
            false
        };

        self.pulses_received += 1;
        self.sinr_log.push(ratio);
        if collided {
            self.collisions += 1;
        }
        if !bit_ok {
            self.bit_errors += 1;
        }
        Ok(PulseOutcome { state: SlotState::Receive, bit_ok: Some(bit_ok), sinr: ratio, collided })
    }

    /// Deliver iff every pulse was received and none was in error.
    pub fn finalize(self) -> RxSummary {
        let outcome = if self.pulses_received < self.l_pdu {
            RxOutcome::Drop(DropReason::ReceiverBusy)
        } else if self.bit_errors > 0 {
            RxOutcome::Drop(DropReason::BitError)
        } else {
            RxOutcome::Deliver
        };
        self.summary(outcome)
    }

    pub fn summary(self, outcome: RxOutcome) -> RxSummary {
        let min_sinr = self.sinr_log.iter().copied().reduce(f64::min);
        RxSummary {
            packet: self.packet,
            outcome,
            pulses_received: self.pulses_received,
            bit_errors: self.bit_errors,
            collisions: self.collisions,
            min_sinr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use proptest::prelude::*;

    fn table() -> BerTable {
        BerTable::from_rows(vec![(-10.0, 0.5), (0.0, 0.5), (10.0, 1e-3), (20.0, 1e-12)]).unwrap()
    }

    fn pulse(power: f64, source: u32, packet: PacketId) -> PulseArrival {
        PulseArrival { arrival: SimTime::from_nanos(5), power, source, packet, bit_index: 0 }
    }

    fn stream() -> RandomStream {
        RandomStream::new(1, 0, Purpose::BitErrors)
    }

    #[test]
    fn sinr_examples() {
        assert_eq!(sinr(1e-9, &[], 2.0, 2e-12).unwrap(), 1e-9 / 4e-12);
        let s = sinr(1e-9, &[1e-10], 2.0, 2e-12).unwrap();
        assert!((s - 9.615384615).abs() < 1e-6, "{s}");
        let tiny = sinr(1e-9, &[1e-30], 2.0, 2e-12).unwrap();
        assert!((tiny - 250.0).abs() < 1e-9);
        assert!(matches!(sinr(1e-9, &[2e-9], 1.0, 1e-12), Err(PhyError::InterfererStronger { .. })));
        assert!(matches!(sinr(0.0, &[], 1.0, 1e-12), Err(PhyError::NonPositiveSignal(_))));
    }

    #[test]
    fn clean_pulse_is_received() {
        let t = table();
        let demod = Demodulator { sensitivity: 1e-13, noise_figure: 1.0, noise_power: 1e-12, ber_table: &t };
        let mut ctx = ReceptionContext::new(7, 1, 1, 0, SimTime::ZERO);
        let out = ctx.on_pulse(&pulse(1e-9, 1, 7), &[], &demod, &mut stream()).unwrap();
        assert_eq!(out.state, SlotState::Receive);
        assert_eq!(out.bit_ok, Some(true));
        assert!(!out.collided);
        assert_eq!(ctx.finalize().outcome, RxOutcome::Deliver);
    }

    #[test]
    fn equal_power_tie_goes_to_lower_id() {
        let t = table();
        let demod = Demodulator { sensitivity: 1e-13, noise_figure: 1.0, noise_power: 1e-30, ber_table: &t };
        let a = pulse(1e-9, 1, 10);
        let b = pulse(1e-9, 2, 20);
        let mut ctx_a = ReceptionContext::new(10, 1, 1, 0, SimTime::ZERO);
        let mut ctx_b = ReceptionContext::new(20, 2, 1, 0, SimTime::ZERO);
        let out_a = ctx_a.on_pulse(&a, &[b], &demod, &mut stream()).unwrap();
        let out_b = ctx_b.on_pulse(&b, &[a], &demod, &mut stream()).unwrap();
        assert!(ratio_to_db(out_a.sinr).abs() < 1e-9);
        assert!(out_a.collided && out_b.collided);
        // The loser always errs; the winner errs with BER(0 dB) = 0.5.
        assert_eq!(out_b.bit_ok, Some(false));
        assert_eq!(ctx_b.finalize().outcome, RxOutcome::Drop(DropReason::BitError));
    }

    #[test]
    fn weak_pulse_senses_without_bit() {
        let t = table();
        let demod = Demodulator { sensitivity: 1e-10, noise_figure: 1.0, noise_power: 1e-12, ber_table: &t };
        let mut ctx = ReceptionContext::new(1, 0, 4, 0, SimTime::ZERO);
        let out = ctx.on_pulse(&pulse(1e-11, 0, 1), &[], &demod, &mut stream()).unwrap();
        assert_eq!(out.state, SlotState::Sense);
        assert_eq!(out.bit_ok, None);
        assert_eq!(ctx.pulses_received, 0);
    }

    #[test]
    fn finalize_rules() {
        let mut clean = ReceptionContext::new(1, 0, 3, 0, SimTime::ZERO);
        clean.pulses_received = 3;
        assert_eq!(clean.finalize().outcome, RxOutcome::Deliver);

        let mut one_error = ReceptionContext::new(1, 0, 3, 0, SimTime::ZERO);
        one_error.pulses_received = 3;
        one_error.bit_errors = 1;
        assert_eq!(one_error.finalize().outcome, RxOutcome::Drop(DropReason::BitError));

        let mut short = ReceptionContext::new(1, 0, 3, 0, SimTime::ZERO);
        short.pulses_received = 2;
        short.pulses_missed = 1;
        assert_eq!(short.finalize().outcome, RxOutcome::Drop(DropReason::ReceiverBusy));
    }

    #[test]
    fn wrong_packet_rejected() {
        let t = table();
        let demod = Demodulator { sensitivity: 0.0, noise_figure: 1.0, noise_power: 1e-12, ber_table: &t };
        let mut ctx = ReceptionContext::new(1, 0, 1, 0, SimTime::ZERO);
        assert!(ctx.on_pulse(&pulse(1e-9, 0, 2), &[], &demod, &mut stream()).is_err());
    }

    proptest! {
        #[test]
        fn weaker_interferer_never_raises_ber(p_s in 1e-12f64..1e-6, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
            let t = table();
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let ber = |frac: f64| {
                let s = sinr(p_s, &[p_s * frac], 1.5, 1e-12).unwrap();
                t.lookup(ratio_to_db(s))
            };
            prop_assert!(ber(lo) <= ber(hi));
        }
    }
}
