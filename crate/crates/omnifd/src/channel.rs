//! Channel synthesis for the four links: transmitter→surface, transmitter→
//! receiver, surface→destination, surface→receiver.
//!
//! The surface-adjacent links are pure line-of-sight with free-space decay
//! `λ/(4πr)`; the transmitter→receiver and surface→destination links are
//! Rician mixtures with amplitude decay `λ/(4π r^{κ/2})`, LoS weight
//! `sqrt(K/(K+1))` and NLoS weight `sqrt(1/(K+1))`. NLoS entries are
//! zero-mean unit-variance circularly symmetric complex Gaussians drawn from
//! a counter-seeded stream, so a `(geometry, seed)` pair reproduces the set
//! bit-identically.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{PI, TAU};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{antenna_gain, Geometry};

pub type C64 = Complex<f64>;

/// The four channel matrices of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Transmitter to surface, L×M, pure LoS.
    pub tx_to_surface: DMatrix<C64>,
    /// Transmitter to receive antennas, M×N, Rician.
    ///
    /// Stored transposed relative to the natural N×M receive orientation so
    /// that its adjoint applies directly to an M×1 beamformer.
    pub tx_to_rx: DMatrix<C64>,
    /// Surface to destination, L, Rician.
    pub surface_to_dest: DVector<C64>,
    /// Surface to receive antennas, L×N, pure LoS.
    pub surface_to_rx: DMatrix<C64>,
}

impl ChannelSet {
    pub fn num_tx(&self) -> usize {
        self.tx_to_surface.ncols()
    }

    pub fn num_rx(&self) -> usize {
        self.surface_to_rx.ncols()
    }

    pub fn num_elements(&self) -> usize {
        self.tx_to_surface.nrows()
    }
}

fn complex_gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) / 2f64.sqrt()
}

fn los_phase(range: f64, wavelength: f64) -> C64 {
    C64::from_polar(1.0, -(TAU * range / wavelength) % TAU)
}

/// Synthesizes all four channels for a geometry. The LoS-only matrices depend
/// only on the geometry; the Rician matrices are reproducible from `seed`.
pub fn sample_channels(
    geometry: &Geometry,
    config: &SystemConfig,
    seed: u64,
) -> Result<ChannelSet> {
    let (m_cnt, n_cnt, l_cnt) = (config.num_tx, config.num_rx, config.num_elements);
    if geometry.tx_positions.len() != m_cnt
        || geometry.rx_positions.len() != n_cnt
        || geometry.ios_positions.len() != l_cnt
    {
        return Err(Error::Dimension(
            "geometry does not match the configured array sizes".into(),
        ));
    }

    let lambda = config.wavelength;
    let los_w = (config.rician_k / (config.rician_k + 1.0)).sqrt();
    let nlos_w = (1.0 / (config.rician_k + 1.0)).sqrt();
    let half_exp = config.pathloss_exp / 2.0;

    let tx_to_surface = DMatrix::from_fn(l_cnt, m_cnt, |l, m| {
        let r = geometry.ios_tx.range[(l, m)];
        let g = antenna_gain(
            geometry.ios_tx.elevation[(l, m)],
            geometry.ios_tx.azimuth[(l, m)],
            config.gain_exponent_tx,
            config.gain_peak,
        );
        lambda * g.sqrt() / (4.0 * PI * r) * los_phase(r, lambda)
    });

    let surface_to_rx = DMatrix::from_fn(l_cnt, n_cnt, |l, n| {
        let r = geometry.ios_rx.range[(l, n)];
        let g = antenna_gain(
            geometry.ios_rx.elevation[(l, n)],
            geometry.ios_rx.azimuth[(l, n)],
            config.gain_exponent_rx,
            config.gain_peak,
        );
        lambda * g.sqrt() / (4.0 * PI * r) * los_phase(r, lambda)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Draw order is fixed: tx_to_rx row-major, then surface_to_dest.
    let mut tx_to_rx = DMatrix::zeros(m_cnt, n_cnt);
    for m in 0..m_cnt {
        for n in 0..n_cnt {
            let r = geometry.tx_rx.range[(m, n)];
            let gt = antenna_gain(
                geometry.tx_rx.elevation[(m, n)],
                geometry.tx_rx.azimuth[(m, n)],
                config.gain_exponent_tx,
                config.gain_peak,
            );
            let gr = antenna_gain(
                geometry.rx_tx.elevation[(n, m)],
                geometry.rx_tx.azimuth[(n, m)],
                config.gain_exponent_rx,
                config.gain_peak,
            );
            let scale = lambda * (gt * gr).sqrt() / (4.0 * PI * r.powf(half_exp));
            let nlos = complex_gaussian(&mut rng);
            tx_to_rx[(m, n)] = scale * (los_w * los_phase(r, lambda) + nlos_w * nlos);
        }
    }

    let mut surface_to_dest = DVector::zeros(l_cnt);
    for l in 0..l_cnt {
        let r = geometry.ios_dest_range[l];
        let scale = lambda / (4.0 * PI * r.powf(half_exp));
        let nlos = complex_gaussian(&mut rng);
        surface_to_dest[l] = scale * (los_w * los_phase(r, lambda) + nlos_w * nlos);
    }

    Ok(ChannelSet {
        tx_to_surface,
        tx_to_rx,
        surface_to_dest,
        surface_to_rx,
    })
}

/// Imperfect-CSI mixture: replaces the two estimated links by
/// `sqrt(η) h + sqrt(1-η) Δh`, where `Δh` is a fresh draw with the same
/// statistics. The LoS-only links are known exactly and pass through.
pub fn corrupt_csi(
    channels: &ChannelSet,
    geometry: &Geometry,
    config: &SystemConfig,
    eta: f64,
    seed: u64,
) -> Result<ChannelSet> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
    }
    if eta == 1.0 {
        return Ok(channels.clone());
    }
    let fresh = sample_channels(geometry, config, seed)?;
    let w_true = eta.sqrt();
    let w_err = (1.0 - eta).sqrt();
    Ok(ChannelSet {
        tx_to_surface: channels.tx_to_surface.clone(),
        tx_to_rx: channels.tx_to_rx.map_with_location(|m, n, h| {
            w_true * h + w_err * fresh.tx_to_rx[(m, n)]
        }),
        surface_to_dest: channels.surface_to_dest.map_with_location(|l, _, h| {
            w_true * h + w_err * fresh.surface_to_dest[l]
        }),
        surface_to_rx: channels.surface_to_rx.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_geometry;
    use approx::assert_relative_eq;
    use crate::units::wrap_phase;

    fn setup(config: &SystemConfig) -> (Geometry, ChannelSet) {
        let geometry = build_geometry(config).unwrap();
        let channels = sample_channels(&geometry, config, config.rng_seed).unwrap();
        (geometry, channels)
    }

    #[test]
    fn los_magnitude_is_free_space() {
        let config = SystemConfig::default();
        let (geometry, channels) = setup(&config);
        // unit gain: |entry| = λ / (4π r), r = 0.5 for the anchor pair
        let expected = 0.05 / (4.0 * PI * 0.5);
        assert_relative_eq!(
            channels.tx_to_surface[(0, 0)].norm(),
            expected,
            max_relative = 1e-12
        );
        assert_relative_eq!(expected, 7.9577e-3, max_relative = 1e-4);
        for l in 0..config.num_elements {
            for m in 0..config.num_tx {
                let r = geometry.ios_tx.range[(l, m)];
                assert_relative_eq!(
                    channels.tx_to_surface[(l, m)].norm(),
                    config.wavelength / (4.0 * PI * r),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn los_phase_matches_range() {
        let config = SystemConfig::default();
        let (geometry, channels) = setup(&config);
        for l in 0..config.num_elements {
            for m in 0..config.num_tx {
                let r = geometry.ios_tx.range[(l, m)];
                let expected = wrap_phase(-(TAU * r / config.wavelength) % TAU);
                let got = wrap_phase(channels.tx_to_surface[(l, m)].arg());
                let diff = (got - expected).abs();
                assert!(diff.min(TAU - diff) < 1e-9, "phase mismatch {diff}");
            }
        }
    }

    #[test]
    fn strong_los_limit_fixes_rician_phase() {
        let mut config = SystemConfig::default();
        config.rician_k = 1e30;
        let (geometry, channels) = setup(&config);
        let r = geometry.tx_rx.range[(0, 0)];
        let expected = wrap_phase(-(TAU * r / config.wavelength) % TAU);
        let got = wrap_phase(channels.tx_to_rx[(0, 0)].arg());
        let diff = (got - expected).abs();
        assert!(diff.min(TAU - diff) < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let config = SystemConfig::default();
        let geometry = build_geometry(&config).unwrap();
        let a = sample_channels(&geometry, &config, 7).unwrap();
        let b = sample_channels(&geometry, &config, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seed_only_moves_faded_links() {
        let config = SystemConfig::default();
        let geometry = build_geometry(&config).unwrap();
        let a = sample_channels(&geometry, &config, 1).unwrap();
        let b = sample_channels(&geometry, &config, 2).unwrap();
        assert_eq!(a.tx_to_surface, b.tx_to_surface);
        assert_eq!(a.surface_to_rx, b.surface_to_rx);
        assert_ne!(a.tx_to_rx, b.tx_to_rx);
        assert_ne!(a.surface_to_dest, b.surface_to_dest);
    }

    #[test]
    fn nlos_power_is_unit_variance() {
        // K = 0 makes every faded entry a pure scaled NLoS draw; strip the
        // pathloss and average |nlos|^2 over 10^4 surface-destination entries.
        let mut config = SystemConfig::default();
        config.rician_k = 0.0;
        config.num_elements = 10_000;
        config.num_tx = 1;
        let geometry = build_geometry(&config).unwrap();
        let channels = sample_channels(&geometry, &config, 3).unwrap();
        let half_exp = config.pathloss_exp / 2.0;
        let mean_power: f64 = (0..config.num_elements)
            .map(|l| {
                let scale =
                    config.wavelength / (4.0 * PI * geometry.ios_dest_range[l].powf(half_exp));
                (channels.surface_to_dest[l] / scale).norm_sqr()
            })
            .sum::<f64>()
            / config.num_elements as f64;
        assert!(
            (mean_power - 1.0).abs() < 0.03,
            "mean NLoS power {mean_power}"
        );
    }

    #[test]
    fn csi_mixture_limits() {
        let config = SystemConfig::default();
        let (geometry, channels) = setup(&config);

        let perfect = corrupt_csi(&channels, &geometry, &config, 1.0, 99).unwrap();
        assert_eq!(perfect, channels);

        let fresh = corrupt_csi(&channels, &geometry, &config, 0.0, 99).unwrap();
        assert_eq!(fresh.tx_to_surface, channels.tx_to_surface);
        assert_eq!(fresh.surface_to_rx, channels.surface_to_rx);
        assert_ne!(fresh.tx_to_rx, channels.tx_to_rx);
        // zero overlap weight: the fresh draw with the corrupt seed
        let expected = sample_channels(&geometry, &config, 99).unwrap();
        assert_eq!(fresh.tx_to_rx, expected.tx_to_rx);

        assert!(corrupt_csi(&channels, &geometry, &config, 1.5, 0).is_err());
    }

    #[test]
    fn csi_mixture_is_deterministic() {
        let config = SystemConfig::default();
        let (geometry, channels) = setup(&config);
        let a = corrupt_csi(&channels, &geometry, &config, 0.95, 5).unwrap();
        let b = corrupt_csi(&channels, &geometry, &config, 0.95, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.surface_to_dest, channels.surface_to_dest);
    }
}
