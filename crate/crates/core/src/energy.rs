//! Per-node energy ledger: per-pulse transmit/receive energy plus continuous
//! draw for the idle, sense and sleep slot states.
//!
//! TRANSMIT and RECEIVE slots draw nothing beyond their per-pulse energy.
//! The total is always recomputed from integer counters in a fixed order:
//! `tx pulses * e_tx + rx pulses * e_rx + sum over SlotState::ALL of p_state * t_state`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::SlotState;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerProfile {
    /// J per transmitted pulse.
    pub e_tx_pulse: f64,
    /// J per received pulse.
    pub e_rx_pulse: f64,
    /// W.
    pub p_idle: f64,
    pub p_sense: f64,
    pub p_sleep: f64,
}

/// Placeholder figures so a scenario runs without an energy block; they are
/// not measurements and every field can be overridden.
impl Default for PowerProfile {
    fn default() -> Self {
        PowerProfile {
            e_tx_pulse: 50e-12,
            e_rx_pulse: 100e-12,
            p_idle: 1e-3,
            p_sense: 2e-3,
            p_sleep: 1e-6,
        }
    }
}

impl PowerProfile {
    pub fn state_power(&self, state: SlotState) -> f64 {
        match state {
            SlotState::Idle => self.p_idle,
            SlotState::Sense => self.p_sense,
            SlotState::Sleep => self.p_sleep,
            SlotState::Transmit | SlotState::Receive => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("e_tx_pulse", self.e_tx_pulse),
            ("e_rx_pulse", self.e_rx_pulse),
            ("p_idle", self.p_idle),
            ("p_sense", self.p_sense),
            ("p_sleep", self.p_sleep),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.p_sleep > self.p_idle {
            return Err(format!("p_sleep ({}) exceeds p_idle ({})", self.p_sleep, self.p_idle));
        }
        Ok(())
    }

    /// Closed-form total for the given counters.
    pub fn total_joules(&self, pulses_tx: u64, pulses_rx: u64, time_in_state: &[SimTime; 5]) -> f64 {
        let mut total = pulses_tx as f64 * self.e_tx_pulse + pulses_rx as f64 * self.e_rx_pulse;
        for (state, t) in SlotState::ALL.iter().zip(time_in_state) {
            total += self.state_power(*state) * t.as_secs_f64();
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Tx,
    Rx,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("state intervals of node {node} overlap: {accounted} accounted in a run of {run}")]
    Overlap { node: u32, accounted: SimTime, run: SimTime },
}

fn state_index(state: SlotState) -> usize {
    SlotState::ALL.iter().position(|s| *s == state).unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct EnergyLedger {
    node: u32,
    profile: PowerProfile,
    pulses_tx: u64,
    pulses_rx: u64,
    time_in_state: [SimTime; 5],
    /// Receiver slot awaiting classification: marks arrive in
    /// non-decreasing slot order and RECEIVE overrides SENSE.
    open_slot: Option<(u64, SlotState)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub node: u32,
    pub pulses_tx: u64,
    pub pulses_rx: u64,
    pub time_in_state: [SimTime; 5],
    pub total_joules: f64,
}

impl EnergyReport {
    pub fn time(&self, state: SlotState) -> SimTime {
        self.time_in_state[state_index(state)]
    }
}

impl EnergyLedger {
    pub fn new(node: u32, profile: PowerProfile) -> Self {
        EnergyLedger {
            node,
            profile,
            pulses_tx: 0,
            pulses_rx: 0,
            time_in_state: [SimTime::ZERO; 5],
            open_slot: None,
        }
    }

    pub fn profile(&self) -> &PowerProfile {
        &self.profile
    }

    pub fn account_pulse(&mut self, direction: Direction) {
        self.account_pulses(direction, 1);
    }

    pub fn account_pulses(&mut self, direction: Direction, count: u64) {
        match direction {
            Direction::Tx => self.pulses_tx += count,
            Direction::Rx => self.pulses_rx += count,
        }
    }

    pub fn account_state(&mut self, state: SlotState, duration: SimTime) {
        self.time_in_state[state_index(state)] += duration;
    }

    /// Accounts `[start, start + len)` clipped to the run end.
    pub fn account_interval(&mut self, state: SlotState, start: SimTime, len: SimTime, run_end: SimTime) {
        if start >= run_end {
            return;
        }
        let end = (start + len).min(run_end);
        self.account_state(state, end - start);
    }

    /// Classifies receiver slot `index` (of duration `slot`) as SENSE or
    /// RECEIVE. Slots must be marked in non-decreasing order.
    pub fn mark_receiver_slot(&mut self, index: u64, state: SlotState, slot: SimTime, run_end: SimTime) {
        debug_assert!(matches!(state, SlotState::Sense | SlotState::Receive));
        match self.open_slot {
            Some((open, current)) if open == index => {
                if state == SlotState::Receive && current == SlotState::Sense {
                    self.open_slot = Some((index, state));
                }
            }
            Some((open, _)) => {
                debug_assert!(index > open, "receiver slots marked out of order");
                self.flush_open_slot(slot, run_end);
                self.open_slot = Some((index, state));
            }
            None => self.open_slot = Some((index, state)),
        }
    }

    fn flush_open_slot(&mut self, slot: SimTime, run_end: SimTime) {
        if let Some((index, state)) = self.open_slot.take() {
            self.account_interval(state, slot * index, slot, run_end);
        }
    }

    /// Closes the ledger at `run_end`: idle time fills whatever the other
    /// states did not cover.
    pub fn finish(&mut self, slot: SimTime, run_end: SimTime) -> Result<(), LedgerError> {
        self.flush_open_slot(slot, run_end);
        let accounted = self
            .time_in_state
            .iter()
            .fold(SimTime::ZERO, |acc, t| acc + *t);
        let idle = run_end.checked_sub(accounted).ok_or(LedgerError::Overlap {
            node: self.node,
            accounted,
            run: run_end,
        })?;
        self.account_state(SlotState::Idle, idle);
        Ok(())
    }

    pub fn total_joules(&self) -> f64 {
        self.profile.total_joules(self.pulses_tx, self.pulses_rx, &self.time_in_state)
    }

    pub fn report(&self) -> EnergyReport {
        EnergyReport {
            node: self.node,
            pulses_tx: self.pulses_tx,
            pulses_rx: self.pulses_rx,
            time_in_state: self.time_in_state,
            total_joules: self.total_joules(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(v: u64) -> SimTime {
        SimTime::from_nanos(v)
    }

    #[test]
    fn pulse_energy_is_linear() {
        let profile = PowerProfile { e_tx_pulse: 1e-9, ..Default::default() };
        let mut l = EnergyLedger::new(0, profile);
        assert_eq!(l.report().total_joules, 0.0);
        for _ in 0..100 {
            l.account_pulse(Direction::Tx);
        }
        assert!((l.total_joules() - 100e-9).abs() < 1e-20);
    }

    #[test]
    fn run_asleep() {
        let p = PowerProfile::default();
        let mut l = EnergyLedger::new(0, p);
        let run = SimTime::from_micros(1_000);
        l.account_state(SlotState::Sleep, run);
        l.finish(ns(10), run).unwrap();
        assert_eq!(l.report().time(SlotState::Idle), SimTime::ZERO);
        assert_eq!(l.total_joules(), p.p_sleep * run.as_secs_f64());
    }

    #[test]
    fn mixed_run_tiles_and_reconciles() {
        let p = PowerProfile::default();
        let mut l = EnergyLedger::new(3, p);
        let slot = ns(10);
        let run = ns(1000);
        l.account_interval(SlotState::Transmit, ns(0), slot, run);
        l.account_pulses(Direction::Tx, 1);
        l.mark_receiver_slot(5, SlotState::Sense, slot, run);
        l.mark_receiver_slot(5, SlotState::Receive, slot, run);
        l.mark_receiver_slot(7, SlotState::Sense, slot, run);
        l.account_pulses(Direction::Rx, 2);
        l.account_interval(SlotState::Sleep, ns(500), ns(600), run);
        l.finish(slot, run).unwrap();
        let r = l.report();
        assert_eq!(r.time(SlotState::Transmit), slot);
        assert_eq!(r.time(SlotState::Receive), slot);
        assert_eq!(r.time(SlotState::Sense), slot);
        assert_eq!(r.time(SlotState::Sleep), ns(500));
        let sum = r.time_in_state.iter().fold(SimTime::ZERO, |a, t| a + *t);
        assert_eq!(sum, run);
        let expected = 1.0 * p.e_tx_pulse
            + 2.0 * p.e_rx_pulse
            + p.p_idle * ns(470).as_secs_f64()
            + 0.0
            + p.p_sleep * ns(500).as_secs_f64()
            + p.p_sense * slot.as_secs_f64()
            + 0.0;
        assert_eq!(r.total_joules, expected);
    }

    #[test]
    fn overlap_is_detected() {
        let mut l = EnergyLedger::new(1, PowerProfile::default());
        l.account_state(SlotState::Sleep, ns(80));
        l.account_state(SlotState::Sense, ns(30));
        assert!(matches!(l.finish(ns(10), ns(100)), Err(LedgerError::Overlap { node: 1, .. })));
    }

    #[test]
    fn profile_validation() {
        assert!(PowerProfile::default().validate().is_ok());
        let bad = PowerProfile { p_sleep: 1.0, p_idle: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let neg = PowerProfile { e_rx_pulse: -1.0, ..Default::default() };
        assert!(neg.validate().is_err());
    }
}
