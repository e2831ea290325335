//! Shared fixtures for the integration suites.

use nalgebra::{DMatrix, DVector};
use omnifd::channel::{sample_channels, ChannelSet, C64};
use omnifd::geometry::build_geometry;
use omnifd::SystemConfig;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

pub fn system(l: usize, m: usize, n: usize) -> SystemConfig {
    let mut config = SystemConfig::default();
    config.num_elements = l;
    config.num_tx = m;
    config.num_rx = n;
    config
}

pub fn channels_for(config: &SystemConfig, seed: u64) -> ChannelSet {
    let geometry = build_geometry(config).unwrap();
    sample_channels(&geometry, config, seed).unwrap()
}

pub fn random_unit_w(m: usize, seed: u64) -> DVector<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DVector::from_fn(m, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let norm = w.norm();
    w / C64::new(norm, 0.0)
}

pub fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let a = DMatrix::from_fn(n, n, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    (&a + a.adjoint()) / C64::new(2.0, 0.0)
}

pub fn random_complex_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<C64> {
    DVector::from_fn(n, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    })
}

pub fn random_phases(l: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..l).map(|_| rng.random::<f64>() * TAU).collect()
}
