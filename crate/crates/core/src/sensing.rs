//! Generic sensing channel: a phenomenon periodically broadcasts a wave whose
//! intensity decays with distance; sensors threshold it with configurable
//! false-positive and false-negative rates.
//!
//! The sensing domain is independent of the radio channel and never enters
//! interference accounting.

use crate::channel::Position;
use crate::rng::RandomStream;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct Phenomenon {
    pub position: Position,
    pub source_intensity: f64,
    /// Hz; one emission every `1 / sampling_rate` seconds.
    pub sampling_rate: f64,
    pub path_loss_exponent: f64,
    pub reference_distance: f64,
    pub start: SimTime,
    pub end: SimTime,
    /// m/s. `None` delivers every emission instantly.
    pub wave_velocity: Option<f64>,
}

impl Phenomenon {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.source_intensity > 0.0 && self.source_intensity.is_finite()) {
            return Err(format!("source intensity must be positive, got {}", self.source_intensity));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(format!("sampling rate must be positive, got {}", self.sampling_rate));
        }
        if !(self.path_loss_exponent > 0.0 && self.path_loss_exponent.is_finite()) {
            return Err(format!("path loss exponent must be positive, got {}", self.path_loss_exponent));
        }
        if !(self.reference_distance > 0.0 && self.reference_distance.is_finite()) {
            return Err(format!("reference distance must be positive, got {}", self.reference_distance));
        }
        if self.end < self.start {
            return Err(format!("active interval ends ({}) before it starts ({})", self.end, self.start));
        }
        if let Some(v) = self.wave_velocity {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("wave velocity must be positive, got {v}"));
            }
        }
        if self.period() == SimTime::ZERO {
            return Err(format!("sampling rate {} Hz is finer than one tick", self.sampling_rate));
        }
        Ok(())
    }

    pub fn period(&self) -> SimTime {
        SimTime::from_secs_rounded(1.0 / self.sampling_rate).unwrap_or(SimTime::MAX)
    }

    pub fn is_active(&self, t: SimTime) -> bool {
        self.start <= t && t <= self.end
    }

    /// Emission instants `start, start + period, ...` up to and including `end`.
    pub fn emission_times(&self) -> impl Iterator<Item = SimTime> + '_ {
        let period = self.period();
        (0u64..)
            .map(move |k| self.start.ticks().checked_add(period.ticks().checked_mul(k)?))
            .map_while(|t| t.map(SimTime::from_ticks))
            .take_while(move |t| *t <= self.end)
    }

    pub fn intensity_at_distance(&self, d: f64) -> f64 {
        let d = if d == 0.0 { self.reference_distance } else { d };
        self.source_intensity * (self.reference_distance / d).powf(self.path_loss_exponent)
    }

    pub fn intensity_at(&self, p: &Position) -> f64 {
        self.intensity_at_distance(self.position.distance(p))
    }

    pub fn delay_to(&self, p: &Position) -> SimTime {
        match self.wave_velocity {
            Some(v) => SimTime::from_secs_rounded(self.position.distance(p) / v).unwrap_or(SimTime::MAX),
            None => SimTime::ZERO,
        }
    }

    /// Radius of the sphere inside which the received intensity reaches `threshold`.
    pub fn sensing_radius(&self, threshold: f64) -> f64 {
        (self.source_intensity / threshold).powf(1.0 / self.path_loss_exponent) * self.reference_distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorDevice {
    pub threshold: f64,
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
    /// Hz. Emissions arriving faster than this are skipped.
    pub sampling_rate: f64,
}

impl Default for SensorDevice {
    fn default() -> Self {
        SensorDevice {
            threshold: 1e-3,
            false_positive_rate: 0.0,
            false_negative_rate: 0.0,
            sampling_rate: 10.0,
        }
    }
}

impl SensorDevice {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(format!("threshold must be positive, got {}", self.threshold));
        }
        for (name, p) in [
            ("false_positive_rate", self.false_positive_rate),
            ("false_negative_rate", self.false_negative_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(format!("sampling rate must be positive, got {}", self.sampling_rate));
        }
        if self.period() == SimTime::ZERO {
            return Err(format!("sampling rate {} Hz is finer than one tick", self.sampling_rate));
        }
        Ok(())
    }

    pub fn period(&self) -> SimTime {
        SimTime::from_secs_rounded(1.0 / self.sampling_rate).unwrap_or(SimTime::MAX)
    }

    /// One detection decision for a sample of `intensity`.
    pub fn sense(&self, intensity: f64, stream: &mut RandomStream) -> bool {
        if intensity >= self.threshold {
            !stream.bernoulli(self.false_negative_rate)
        } else {
            stream.bernoulli(self.false_positive_rate)
        }
    }
}

/// Admits at most one event per `window`, measured from the last admitted one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimiter {
    window: SimTime,
    last: Option<SimTime>,
}

impl RateLimiter {
    pub fn new(window: SimTime) -> Self {
        RateLimiter { window, last: None }
    }

    pub fn admit(&mut self, now: SimTime) -> bool {
        let ok = match self.last {
            None => true,
            Some(last) => now.saturating_sub(last) >= self.window,
        };
        if ok {
            self.last = Some(now);
        }
        ok
    }
}
