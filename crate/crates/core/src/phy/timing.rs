//! Frame/slot arithmetic and pulse collision predicates.
//!
//! Every node uses a length-one hopping sequence: it transmits in slot `ths`
//! of every frame. A pulse reaching a receiver occupies the receiver slot
//! that contains its arrival instant, widened by the configured delay
//! spread. Two pulses collide when those windows intersect.

use thiserror::Error;

use crate::phy::PulseArrival;
use crate::time::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimingError {
    #[error("slot duration must be positive")]
    ZeroSlot,
    #[error("a frame needs at least one slot")]
    NoSlots,
    #[error("frame duration {frame} != slots_per_frame ({n_slots}) * slot duration ({slot})")]
    FrameMismatch { frame: SimTime, slot: SimTime, n_slots: u32 },
    #[error("hop value {ths} outside [0, {n_slots})")]
    HopOutOfRange { ths: u32, n_slots: u32 },
    #[error("packet length must be at least one bit")]
    EmptyPacket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameTiming {
    slot: SimTime,
    frame: SimTime,
    n_slots: u32,
}

impl FrameTiming {
    pub fn new(slot: SimTime, n_slots: u32) -> Result<Self, TimingError> {
        if slot == SimTime::ZERO {
            return Err(TimingError::ZeroSlot);
        }
        if n_slots == 0 {
            return Err(TimingError::NoSlots);
        }
        Ok(FrameTiming {
            slot,
            frame: slot * n_slots as u64,
            n_slots,
        })
    }

    /// Like [`FrameTiming::new`] but also checks an explicitly configured frame duration.
    pub fn with_frame(slot: SimTime, n_slots: u32, frame: SimTime) -> Result<Self, TimingError> {
        let timing = Self::new(slot, n_slots)?;
        if timing.frame != frame {
            return Err(TimingError::FrameMismatch { frame, slot, n_slots });
        }
        Ok(timing)
    }

    pub fn slot(&self) -> SimTime {
        self.slot
    }

    pub fn frame(&self) -> SimTime {
        self.frame
    }

    pub fn n_slots(&self) -> u32 {
        self.n_slots
    }

    pub fn check_hop(&self, ths: u32) -> Result<(), TimingError> {
        if ths >= self.n_slots {
            return Err(TimingError::HopOutOfRange { ths, n_slots: self.n_slots });
        }
        Ok(())
    }

    /// Absolute slot index since time zero.
    pub fn absolute_slot(&self, t: SimTime) -> u64 {
        t.ticks() / self.slot.ticks()
    }
}

/// Position of the slot containing `t` within its frame:
/// `floor((t mod t_f) / t_s)`.
pub fn current_slot(t: SimTime, timing: &FrameTiming) -> u32 {
    ((t.ticks() % timing.frame.ticks()) / timing.slot.ticks()) as u32
}

/// Airtime of an `l_pdu`-bit packet: one pulse, hence one bit, per frame.
pub fn transmission_duration(l_pdu: u32, timing: &FrameTiming) -> Result<SimTime, TimingError> {
    if l_pdu == 0 {
        return Err(TimingError::EmptyPacket);
    }
    Ok(timing.frame * l_pdu as u64)
}

/// Start of the first slot numbered `ths` at or after `t`.
pub fn wait_for_slot(t: SimTime, timing: &FrameTiming, ths: u32) -> SimTime {
    let frame_start = t.floor_to(timing.frame);
    let candidate = frame_start + timing.slot * ths as u64;
    if candidate >= t {
        candidate
    } else {
        candidate + timing.frame
    }
}

/// Half-open interval of receiver time a pulse occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotWindow {
    pub start: SimTime,
    pub end: SimTime,
}

impl SlotWindow {
    pub fn of(arrival: SimTime, timing: &FrameTiming, delay_spread: SimTime) -> Self {
        let start = arrival.floor_to(timing.slot);
        SlotWindow {
            start,
            end: start + timing.slot + delay_spread,
        }
    }

    pub fn intersects(&self, other: &SlotWindow) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// First slot boundary by which every pulse that could overlap this
    /// window has arrived.
    pub fn settle_time(&self, timing: &FrameTiming) -> SimTime {
        self.end.ceil_to(timing.slot)
    }
}

/// Whether two arrivals at the same receiver interfere.
pub fn pulses_overlap(
    a: &PulseArrival,
    b: &PulseArrival,
    timing: &FrameTiming,
    delay_spread: SimTime,
) -> bool {
    SlotWindow::of(a.arrival, timing, delay_spread)
        .intersects(&SlotWindow::of(b.arrival, timing, delay_spread))
}

/// Collision test for two frame-synchronized length-one hopping sequences
/// with per-link delays `delay1`, `delay2`: the pulse trains collide iff
/// `(ths_i * t_s + delay_i) mod t_f` falls in the same receiver slot.
///
/// Equal delays collide only for equal sequences; distinct sequences collide
/// only when the delay difference re-aligns them, i.e.
/// `delay2 = delay1 + (ths1 - ths2) * t_s` modulo the frame, up to slot
/// quantization.
pub fn collision_predicate_length1(
    ths1: u32,
    ths2: u32,
    delay1: SimTime,
    delay2: SimTime,
    timing: &FrameTiming,
) -> bool {
    let receiver_slot = |ths: u32, delay: SimTime| {
        let offset = timing.slot * ths as u64 + delay;
        current_slot(offset, timing)
    };
    receiver_slot(ths1, delay1) == receiver_slot(ths2, delay2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ns(v: u64) -> SimTime {
        SimTime::from_nanos(v)
    }

    fn timing(slot_ns: u64, n: u32) -> FrameTiming {
        FrameTiming::new(ns(slot_ns), n).unwrap()
    }

    fn arrival(t: SimTime, source: u32) -> PulseArrival {
        PulseArrival { arrival: t, power: 1e-9, source, packet: source as u64, bit_index: 0 }
    }

    #[test]
    fn slot_index_examples() {
        let tm = timing(10, 10);
        assert_eq!(current_slot(SimTime::ZERO, &tm), 0);
        assert_eq!(current_slot(ns(235), &tm), 3);
        for k in 0..20 {
            assert_eq!(current_slot(tm.frame() * k, &tm), 0);
        }
    }

    #[test]
    fn frame_mismatch_rejected() {
        assert!(matches!(
            FrameTiming::with_frame(ns(10), 10, ns(99)),
            Err(TimingError::FrameMismatch { .. })
        ));
        assert!(FrameTiming::with_frame(ns(10), 10, ns(100)).is_ok());
        assert_eq!(timing(10, 4).check_hop(4), Err(TimingError::HopOutOfRange { ths: 4, n_slots: 4 }));
    }

    #[test]
    fn airtime_examples() {
        let tm = timing(10, 10);
        assert_eq!(transmission_duration(1, &tm).unwrap(), tm.frame());
        assert_eq!(transmission_duration(256, &tm).unwrap(), SimTime::from_nanos(25_600));
        assert_eq!(
            transmission_duration(512, &tm).unwrap(),
            transmission_duration(256, &tm).unwrap() * 2
        );
        assert_eq!(transmission_duration(0, &tm), Err(TimingError::EmptyPacket));
    }

    #[test]
    fn wait_examples() {
        let tm = timing(10, 10);
        assert_eq!(wait_for_slot(ns(20), &tm, 2), ns(20));
        assert_eq!(wait_for_slot(ns(120), &tm, 2), ns(120));
        assert_eq!(wait_for_slot(ns(35), &tm, 2), ns(120));
        // Enumerate slot starts and take the first match.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let t = SimTime::from_ticks(rng.random_range(0..5_000_000));
            let ths = rng.random_range(0..10);
            let mut s = t.ceil_to(tm.slot());
            while current_slot(s, &tm) != ths {
                s += tm.slot();
            }
            let w = wait_for_slot(t, &tm, ths);
            assert_eq!(w, s);
            assert!(w - t < tm.frame());
        }
    }

    #[test]
    fn hopping_pair_orthogonal_sequences_do_not_collide() {
        let tm = timing(10, 4);
        let d = ns(10);
        assert!(!collision_predicate_length1(1, 2, d, d, &tm));
    }

    #[test]
    fn hopping_pair_delay_realigns_orthogonal_sequences() {
        // Node1 (slot 1) is one slot time farther from the receiver than
        // Node2 (slot 2): both pulse trains land in receiver slot 3.
        let tm = timing(10, 4);
        let d2 = ns(10);
        let d1 = d2 + tm.slot();
        assert!(collision_predicate_length1(1, 2, d1, d2, &tm));
        // Mirrored offset places the trains two slots apart.
        assert!(!collision_predicate_length1(1, 2, d2, d1, &tm));
    }

    #[test]
    fn identical_sequences_and_delays_collide() {
        let tm = timing(10, 8);
        for ths in 0..8 {
            assert!(collision_predicate_length1(ths, ths, ns(33), ns(33), &tm));
        }
    }

    #[test]
    fn realignment_wraps_around_the_frame() {
        // Pulse in slot 3 delayed by one frame minus two slots lands in slot 1
        // of the following frame, where slot-1 pulses without delay sit.
        let tm = timing(10, 4);
        assert!(collision_predicate_length1(3, 1, ns(20), ns(0), &tm));
    }

    #[test]
    fn overlap_boundaries() {
        let tm = timing(10, 10);
        let a = arrival(ns(40), 0);
        assert!(pulses_overlap(&a, &arrival(ns(40) + SimTime::from_ticks(1), 1), &tm, SimTime::ZERO));
        assert!(!pulses_overlap(&a, &arrival(ns(50), 1), &tm, SimTime::ZERO));
        // Delay spread of one full slot: windows abut at exactly t_s + spread.
        let spread = tm.slot();
        assert!(!pulses_overlap(&a, &arrival(ns(60), 1), &tm, spread));
        assert!(pulses_overlap(&a, &arrival(ns(59), 1), &tm, spread));
    }

    #[test]
    fn overlap_agrees_with_train_predicate() {
        // Synchronized trains starting in frame 0, unit hops; the train
        // predicate must match "some pulse pair overlaps".
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let slot = ns(rng.random_range(1..=100));
            let n = rng.random_range(2..=64);
            let tm = FrameTiming::new(slot, n).unwrap();
            let ths1 = rng.random_range(0..n);
            let ths2 = rng.random_range(0..n);
            let span = tm.frame().ticks() * 3;
            let d1 = SimTime::from_ticks(rng.random_range(0..=span));
            let d2 = if rng.random_bool(0.5) {
                // Constructed re-alignments so both outcomes are exercised.
                let shift = (ths1 as i64 - ths2 as i64) * slot.ticks() as i64;
                let v = d1.ticks() as i64 + shift + rng.random_range(0..3) * tm.frame().ticks() as i64;
                SimTime::from_ticks(v.rem_euclid(span as i64 + 1) as u64)
            } else {
                SimTime::from_ticks(rng.random_range(0..=span))
            };
            let len = 10u64;
            let train = |ths: u32, d: SimTime| -> Vec<PulseArrival> {
                (0..len)
                    .map(|k| arrival(tm.frame() * k + slot * ths as u64 + d, ths))
                    .collect()
            };
            let (t1, t2) = (train(ths1, d1), train(ths2, d2));
            let any = t1
                .iter()
                .any(|a| t2.iter().any(|b| pulses_overlap(a, b, &tm, SimTime::ZERO)));
            assert_eq!(any, collision_predicate_length1(ths1, ths2, d1, d2, &tm));
        }
    }

    proptest! {
        #[test]
        fn slot_matches_enumeration(slot in 1u64..200_000, n in 1u32..64, t in 0u64..1_000_000_000) {
            let tm = FrameTiming::new(SimTime::from_ticks(slot), n).unwrap();
            let t = SimTime::from_ticks(t);
            let mut frame_start = 0u64;
            while frame_start + tm.frame().ticks() <= t.ticks() {
                frame_start += tm.frame().ticks();
            }
            let mut idx = 0u32;
            while frame_start + (idx as u64 + 1) * slot <= t.ticks() {
                idx += 1;
            }
            prop_assert_eq!(current_slot(t, &tm), idx);
        }

        #[test]
        fn slot_is_frame_periodic(slot in 1u64..100_000, n in 1u32..64, t in 0u64..1u64 << 40, k in 0u64..1000) {
            let tm = FrameTiming::new(SimTime::from_ticks(slot), n).unwrap();
            let t = SimTime::from_ticks(t);
            prop_assert_eq!(current_slot(t, &tm), current_slot(t + tm.frame() * k, &tm));
        }
    }
}
