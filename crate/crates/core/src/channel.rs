//! Radio propagation: pulse velocity, propagation delay, received power and
//! the thermal noise floor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimTime, TICKS_PER_SECOND};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("received power is undefined at zero distance")]
    ZeroDistance,
    #[error("negative distance {0}")]
    NegativeDistance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Center of the occupied band, Hz.
    pub center_frequency: f64,
    /// Occupied bandwidth, Hz.
    pub bandwidth: f64,
    /// Noise temperature, K.
    pub noise_temperature: f64,
    pub path_loss_exponent: f64,
    /// Reference distance of the path-loss model, m.
    pub reference_distance: f64,
    /// Extra time a pulse occupies the receiver beyond its slot, s.
    pub delay_spread: f64,
    /// Propagation speed relative to free space. 1.0 gives the free-space
    /// wavelength and hence a pulse velocity of c.
    pub velocity_factor: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            center_frequency: 4.0e9,
            bandwidth: 500.0e6,
            noise_temperature: 290.0,
            path_loss_exponent: 2.0,
            reference_distance: 1.0,
            delay_spread: 0.0,
            velocity_factor: 1.0,
        }
    }
}

impl ChannelConfig {
    /// Wavelength in the propagation medium, m.
    pub fn wavelength(&self) -> f64 {
        self.velocity_factor * SPEED_OF_LIGHT / self.center_frequency
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// Transmitted pulse power, W.
    pub tx_power: f64,
    pub tx_gain: f64,
    pub rx_gain: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudget {
            tx_power: 1e-3,
            tx_gain: 1.0,
            rx_gain: 1.0,
        }
    }
}

/// `v = wavelength * f_c`.
pub fn pulse_velocity(config: &ChannelConfig) -> f64 {
    config.wavelength() * config.center_frequency
}

/// Time of flight over `d` meters rounded to the nearest tick.
pub fn propagation_delay(d: f64, config: &ChannelConfig) -> Result<SimTime, ChannelError> {
    if d < 0.0 || d.is_nan() {
        return Err(ChannelError::NegativeDistance(d));
    }
    let ticks = (d / pulse_velocity(config) * TICKS_PER_SECOND as f64).round();
    Ok(SimTime::from_ticks(ticks as u64))
}

/// Log-distance path loss anchored to the Friis loss at the reference
/// distance: `P_tx * G * (lambda / (4 pi d0))^2 * (d0 / d)^n`.
pub fn received_power(budget: &LinkBudget, d: f64, config: &ChannelConfig) -> Result<f64, ChannelError> {
    if d < 0.0 || d.is_nan() {
        return Err(ChannelError::NegativeDistance(d));
    }
    if d == 0.0 {
        return Err(ChannelError::ZeroDistance);
    }
    let d0 = config.reference_distance;
    let friis = (config.wavelength() / (4.0 * std::f64::consts::PI * d0)).powi(2);
    Ok(budget.tx_power
        * budget.tx_gain
        * budget.rx_gain
        * friis
        * (d0 / d).powf(config.path_loss_exponent))
}

/// Thermal noise power `K T W`, W.
pub fn noise_power(config: &ChannelConfig) -> f64 {
    BOLTZMANN * config.noise_temperature * config.bandwidth
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn ratio_to_db(r: f64) -> f64 {
    10.0 * r.log10()
}
