//! System configuration: array sizes, carrier, fading statistics, noise and
//! power budgets, and anchor positions for the transmitter, receiver, surface
//! and destination.
//!
//! The JSON boundary form ([`SystemConfigFile`]) carries powers in dBm and the
//! Rician factor in dB; [`SystemConfig`] holds everything in watts and linear
//! ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{db_to_linear, dbm_to_watts, watts_to_dbm};

/// A point in meters.
pub type Point = [f64; 3];

/// Physical and statistical parameters of one link instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Transmit antenna count M.
    pub num_tx: usize,
    /// Receive antenna count N.
    pub num_rx: usize,
    /// Surface element count L.
    pub num_elements: usize,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Inter-element / inter-antenna spacing in meters.
    pub spacing: f64,
    /// Rician factor K as a linear power ratio.
    pub rician_k: f64,
    /// Pathloss exponent κ for the faded links.
    pub pathloss_exp: f64,
    /// Destination noise power in watts.
    pub sigma_d2: f64,
    /// Receive-antenna noise power in watts.
    pub sigma_r2: f64,
    /// Transmit power budget in watts.
    pub p_max: f64,
    /// Transmit antenna gain exponent q_t (0 = isotropic).
    pub gain_exponent_tx: f64,
    /// Receive antenna gain exponent q_r (0 = isotropic).
    pub gain_exponent_rx: f64,
    /// Peak antenna gain G0 (linear).
    pub gain_peak: f64,
    /// First transmit antenna position.
    pub tx_anchor: Point,
    /// First receive antenna position.
    pub rx_anchor: Point,
    /// First surface element position.
    pub ios_anchor: Point,
    /// Destination position.
    pub dest_position: Point,
    /// Seed for the fading draws.
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let wavelength = 0.05;
        Self {
            num_tx: 4,
            num_rx: 1,
            num_elements: 16,
            wavelength,
            spacing: wavelength / 2.0,
            rician_k: db_to_linear(3.0),
            pathloss_exp: 2.5,
            sigma_d2: 1e-11,
            sigma_r2: 1e-11,
            p_max: 1.0,
            gain_exponent_tx: 0.0,
            gain_exponent_rx: 0.0,
            gain_peak: 1.0,
            tx_anchor: [0.0, 0.0, 5.0],
            rx_anchor: [0.0, 0.1, 5.0],
            ios_anchor: [0.5, 0.0, 5.0],
            dest_position: [20.0, -10.0, 1.5],
            rng_seed: 0,
        }
    }
}

impl SystemConfig {
    /// Checks the structural invariants. Every constructor path goes through
    /// here before the configuration is used.
    pub fn validate(&self) -> Result<()> {
        if self.num_tx < 1 || self.num_rx < 1 || self.num_elements < 1 {
            return Err(Error::Config(
                "antenna and element counts must be at least 1".into(),
            ));
        }
        if self.wavelength <= 0.0 {
            return Err(Error::Config("wavelength must be positive".into()));
        }
        if self.spacing <= 0.0 {
            return Err(Error::Config("spacing must be positive".into()));
        }
        if self.rician_k < 0.0 {
            return Err(Error::Config("rician factor must be nonnegative".into()));
        }
        if self.pathloss_exp < 2.0 {
            return Err(Error::Config("pathloss exponent must be at least 2".into()));
        }
        if self.sigma_d2 <= 0.0 || self.sigma_r2 <= 0.0 || self.p_max <= 0.0 {
            return Err(Error::Config("powers must be positive".into()));
        }
        Ok(())
    }
}

/// JSON boundary form of [`SystemConfig`]: powers in dBm, Rician factor in dB.
/// Missing fields fall back to the defaults above.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfigFile {
    #[serde(default = "default_num_tx")]
    pub num_tx: usize,
    #[serde(default = "default_num_rx")]
    pub num_rx: usize,
    #[serde(default = "default_num_elements")]
    pub num_elements: usize,
    #[serde(default = "default_wavelength")]
    pub wavelength_m: f64,
    /// Defaults to half the wavelength when absent.
    #[serde(default)]
    pub spacing_m: Option<f64>,
    #[serde(default = "default_rician_k_db")]
    pub rician_k_db: f64,
    #[serde(default = "default_pathloss_exp")]
    pub pathloss_exp: f64,
    #[serde(default = "default_noise_dbm")]
    pub noise_dest_dbm: f64,
    #[serde(default = "default_noise_dbm")]
    pub noise_rx_dbm: f64,
    #[serde(default = "default_p_max_dbm")]
    pub p_max_dbm: f64,
    #[serde(default)]
    pub gain_exponent_tx: f64,
    #[serde(default)]
    pub gain_exponent_rx: f64,
    #[serde(default = "default_gain_peak")]
    pub gain_peak: f64,
    #[serde(default = "default_tx_anchor")]
    pub tx_anchor_m: Point,
    #[serde(default = "default_rx_anchor")]
    pub rx_anchor_m: Point,
    #[serde(default = "default_ios_anchor")]
    pub ios_anchor_m: Point,
    #[serde(default = "default_dest_position")]
    pub dest_position_m: Point,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_num_tx() -> usize {
    4
}
fn default_num_rx() -> usize {
    1
}
fn default_num_elements() -> usize {
    16
}
fn default_wavelength() -> f64 {
    0.05
}
fn default_rician_k_db() -> f64 {
    3.0
}
fn default_pathloss_exp() -> f64 {
    2.5
}
fn default_noise_dbm() -> f64 {
    -80.0
}
fn default_p_max_dbm() -> f64 {
    30.0
}
fn default_gain_peak() -> f64 {
    1.0
}
fn default_tx_anchor() -> Point {
    [0.0, 0.0, 5.0]
}
fn default_rx_anchor() -> Point {
    [0.0, 0.1, 5.0]
}
fn default_ios_anchor() -> Point {
    [0.5, 0.0, 5.0]
}
fn default_dest_position() -> Point {
    [20.0, -10.0, 1.5]
}

impl Default for SystemConfigFile {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config object")
    }
}

impl SystemConfigFile {
    /// Converts the boundary form into the internal watt/linear representation.
    pub fn resolve(&self) -> Result<SystemConfig> {
        let config = SystemConfig {
            num_tx: self.num_tx,
            num_rx: self.num_rx,
            num_elements: self.num_elements,
            wavelength: self.wavelength_m,
            spacing: self.spacing_m.unwrap_or(self.wavelength_m / 2.0),
            rician_k: db_to_linear(self.rician_k_db),
            pathloss_exp: self.pathloss_exp,
            sigma_d2: dbm_to_watts(self.noise_dest_dbm),
            sigma_r2: dbm_to_watts(self.noise_rx_dbm),
            p_max: dbm_to_watts(self.p_max_dbm),
            gain_exponent_tx: self.gain_exponent_tx,
            gain_exponent_rx: self.gain_exponent_rx,
            gain_peak: self.gain_peak,
            tx_anchor: self.tx_anchor_m,
            rx_anchor: self.rx_anchor_m,
            ios_anchor: self.ios_anchor_m,
            dest_position: self.dest_position_m,
            rng_seed: self.rng_seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Boundary form of an internal configuration (dBm / dB fields).
    pub fn from_config(config: &SystemConfig) -> Self {
        Self {
            num_tx: config.num_tx,
            num_rx: config.num_rx,
            num_elements: config.num_elements,
            wavelength_m: config.wavelength,
            spacing_m: Some(config.spacing),
            rician_k_db: 10.0 * config.rician_k.log10(),
            pathloss_exp: config.pathloss_exp,
            noise_dest_dbm: watts_to_dbm(config.sigma_d2),
            noise_rx_dbm: watts_to_dbm(config.sigma_r2),
            p_max_dbm: watts_to_dbm(config.p_max),
            gain_exponent_tx: config.gain_exponent_tx,
            gain_exponent_rx: config.gain_exponent_rx,
            gain_peak: config.gain_peak,
            tx_anchor_m: config.tx_anchor,
            rx_anchor_m: config.rx_anchor,
            ios_anchor_m: config.ios_anchor,
            dest_position_m: config.dest_position,
            rng_seed: config.rng_seed,
        }
    }
}
