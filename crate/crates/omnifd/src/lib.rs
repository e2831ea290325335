//! Link-level simulator and optimizer for a full-duplex MISO transmitter
//! assisted by an intelligent Omni surface.
//!
//! The surface sits next to the transmit/receive arrays; each element both
//! refracts impinging energy toward a far destination and reflects it back
//! toward the receive antennas, so one coefficient set simultaneously shapes
//! the downlink rate and the residual self-interference. The crate covers:
//!
//! - channel synthesis over an explicit 3-D geometry with Rician fading
//!   ([`geometry`], [`channel`]);
//! - energy-splitting and mode-switching surface models with their
//!   feasibility rules and link metrics ([`surface`]);
//! - the convexified block updates: beamformer, surface phases/amplitudes,
//!   and semidefinite-relaxed binary mode selection with Gaussian
//!   randomization ([`steps`], [`conic`]);
//! - alternating rate-maximization and interference-minimization loops
//!   ([`optimizer`]);
//! - seeded experiment sweeps with CSV/JSON outputs ([`experiment`]).
//!
//! Start from the runnable programs in `examples/`; each one exercises a
//! single capability end to end.

// Linked for the dense eigenvalue routines behind the semidefinite cone.
extern crate openblas_src;

pub mod channel;
pub mod config;
pub mod conic;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod optimizer;
pub mod steps;
pub mod surface;
pub mod units;

pub use channel::{corrupt_csi, sample_channels, ChannelSet, C64};
pub use config::{SystemConfig, SystemConfigFile};
pub use error::{Error, Result};
pub use geometry::{antenna_gain, build_geometry, Geometry};
pub use optimizer::{maximize_rate, minimize_si, Objective, OptConfig, OptResult, SurfaceMode};
pub use surface::{
    data_rate, effective_channels, quantize_phases, si_power, Coefficients, EffectiveChannels,
    EsCoefficients, MsCoefficients,
};
