//! Integer simulation clock.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Ticks per second. One tick is one picosecond.
pub const TICKS_PER_SECOND: u64 = 1_000_000_000_000;

/// Largest deviation from an integer tick count (in ticks) still accepted when
/// converting a duration given in seconds.
const REPRESENTABLE_SLACK: f64 = 1e-3;

/// A point in (or span of) simulated time, counted in picosecond ticks.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ticks(ticks: u64) -> Self {
        SimTime(ticks)
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    /// Nearest tick to `seconds`. Negative or non-finite input yields `None`.
    pub fn from_secs_rounded(seconds: f64) -> Option<Self> {
        if !seconds.is_finite() || seconds < 0.0 {
            return None;
        }
        let ticks = (seconds * TICKS_PER_SECOND as f64).round();
        if ticks > u64::MAX as f64 {
            return None;
        }
        Some(SimTime(ticks as u64))
    }

    /// Converts `seconds` only if it is an integer number of ticks (within a
    /// thousandth of a tick of floating-point slack).
    pub fn from_secs_exact(seconds: f64) -> Option<Self> {
        let raw = seconds * TICKS_PER_SECOND as f64;
        let rounded = Self::from_secs_rounded(seconds)?;
        if (raw - rounded.0 as f64).abs() <= REPRESENTABLE_SLACK.max(raw.abs() * 1e-15) {
            Some(rounded)
        } else {
            None
        }
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_SECOND as f64
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    /// Smallest multiple of `step` that is `>= self`.
    pub fn ceil_to(self, step: SimTime) -> SimTime {
        debug_assert!(step.0 > 0);
        SimTime(self.0.div_ceil(step.0) * step.0)
    }

    /// Largest multiple of `step` that is `<= self`.
    pub fn floor_to(self, step: SimTime) -> SimTime {
        debug_assert!(step.0 > 0);
        SimTime(self.0 / step.0 * step.0)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0 * rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}
