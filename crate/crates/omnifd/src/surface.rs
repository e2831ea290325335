//! Surface coefficient sets and the link-level quantities they induce.
//!
//! An energy-splitting element carries a reflection amplitude/phase pair and
//! a refraction amplitude/phase pair under the per-element energy budget
//! `a² + b² ≤ 1`. A mode-switching element is either a unit-amplitude
//! reflector or a unit-amplitude refractor, with independent phases for both
//! roles so the inactive role keeps a well-defined phase across mode flips.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::channel::{ChannelSet, C64};
use crate::error::{Error, Result};
use crate::units::wrap_phase;

/// Round-off slack accepted on the per-element energy budget.
pub const ENERGY_BUDGET_SLACK: f64 = 1e-9;

/// Energy-splitting coefficients: per element, reflection amplitude `a` and
/// phase `α`, refraction amplitude `b` and phase `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsCoefficients {
    pub reflect_amp: Vec<f64>,
    pub reflect_phase: Vec<f64>,
    pub refract_amp: Vec<f64>,
    pub refract_phase: Vec<f64>,
}

impl EsCoefficients {
    pub fn new(
        reflect_amp: Vec<f64>,
        reflect_phase: Vec<f64>,
        refract_amp: Vec<f64>,
        refract_phase: Vec<f64>,
    ) -> Result<Self> {
        let coeffs = Self {
            reflect_amp,
            reflect_phase: reflect_phase.into_iter().map(wrap_phase).collect(),
            refract_amp,
            refract_phase: refract_phase.into_iter().map(wrap_phase).collect(),
        };
        coeffs.validate()?;
        Ok(coeffs)
    }

    /// Amplitude/phase extraction from complex reflection and refraction
    /// vectors, e.g. a solver iterate.
    pub fn from_vectors(reflection: &DVector<C64>, refraction: &DVector<C64>) -> Result<Self> {
        let amp_phase = |v: &DVector<C64>| -> (Vec<f64>, Vec<f64>) {
            let amps = v.iter().map(|c| c.norm()).collect();
            let phases = v
                .iter()
                .map(|c| if c.norm() > 0.0 { wrap_phase(c.arg()) } else { 0.0 })
                .collect();
            (amps, phases)
        };
        let (a, alpha) = amp_phase(reflection);
        let (b, beta) = amp_phase(refraction);
        Self::new(a, alpha, b, beta)
    }

    pub fn len(&self) -> usize {
        self.reflect_amp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reflect_amp.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.reflect_amp.len();
        if self.reflect_phase.len() != l
            || self.refract_amp.len() != l
            || self.refract_phase.len() != l
        {
            return Err(Error::Coefficients("mismatched coefficient lengths".into()));
        }
        for i in 0..l {
            let (a, b) = (self.reflect_amp[i], self.refract_amp[i]);
            if !(0.0..=1.0 + ENERGY_BUDGET_SLACK).contains(&a)
                || !(0.0..=1.0 + ENERGY_BUDGET_SLACK).contains(&b)
            {
                return Err(Error::Coefficients(format!(
                    "amplitude out of [0, 1] at element {i}: a={a}, b={b}"
                )));
            }
            if a * a + b * b > 1.0 + ENERGY_BUDGET_SLACK {
                return Err(Error::Coefficients(format!(
                    "energy budget violated at element {i}: a^2+b^2 = {}",
                    a * a + b * b
                )));
            }
            if !(0.0..TAU).contains(&self.reflect_phase[i])
                || !(0.0..TAU).contains(&self.refract_phase[i])
            {
                return Err(Error::Coefficients(format!(
                    "phase outside [0, 2pi) at element {i}"
                )));
            }
        }
        Ok(())
    }

    /// Complex reflection vector `a_l e^{jα_l}`.
    pub fn reflection_vector(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.len(),
            self.reflect_amp
                .iter()
                .zip(&self.reflect_phase)
                .map(|(&a, &p)| C64::from_polar(a, p)),
        )
    }

    /// Complex refraction vector `b_l e^{jβ_l}`.
    pub fn refraction_vector(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.len(),
            self.refract_amp
                .iter()
                .zip(&self.refract_phase)
                .map(|(&b, &p)| C64::from_polar(b, p)),
        )
    }
}

/// Mode-switching coefficients: per element a binary role (true = reflect)
/// plus reflection and refraction phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsCoefficients {
    pub mode: Vec<bool>,
    pub reflect_phase: Vec<f64>,
    pub refract_phase: Vec<f64>,
}

impl MsCoefficients {
    pub fn new(mode: Vec<bool>, reflect_phase: Vec<f64>, refract_phase: Vec<f64>) -> Result<Self> {
        let coeffs = Self {
            mode,
            reflect_phase: reflect_phase.into_iter().map(wrap_phase).collect(),
            refract_phase: refract_phase.into_iter().map(wrap_phase).collect(),
        };
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn len(&self) -> usize {
        self.mode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.reflect_phase.len() != self.mode.len() || self.refract_phase.len() != self.mode.len()
        {
            return Err(Error::Coefficients("mismatched coefficient lengths".into()));
        }
        for i in 0..self.mode.len() {
            if !(0.0..TAU).contains(&self.reflect_phase[i])
                || !(0.0..TAU).contains(&self.refract_phase[i])
            {
                return Err(Error::Coefficients(format!(
                    "phase outside [0, 2pi) at element {i}"
                )));
            }
        }
        Ok(())
    }

    /// Effective reflection vector: `e^{jα_l}` on reflecting elements, 0 on
    /// refracting ones.
    pub fn reflection_vector(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.len(),
            self.mode.iter().zip(&self.reflect_phase).map(|(&on, &p)| {
                if on {
                    C64::from_polar(1.0, p)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
        )
    }

    /// Effective refraction vector: `e^{jβ_l}` on refracting elements, 0 on
    /// reflecting ones.
    pub fn refraction_vector(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.len(),
            self.mode.iter().zip(&self.refract_phase).map(|(&on, &p)| {
                if on {
                    C64::new(0.0, 0.0)
                } else {
                    C64::from_polar(1.0, p)
                }
            }),
        )
    }

    /// Unit-modulus reflection phase vector, ignoring the mode mask.
    pub fn reflect_phase_vector(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.len(),
            self.reflect_phase.iter().map(|&p| C64::from_polar(1.0, p)),
        )
    }

    /// Unit-modulus refraction phase vector, ignoring the mode mask.
    pub fn refract_phase_vector(&self) -> DVector<C64> {
        DVector::from_iterator(
            self.len(),
            self.refract_phase.iter().map(|&p| C64::from_polar(1.0, p)),
        )
    }
}

/// Either coefficient family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficients {
    Es(EsCoefficients),
    Ms(MsCoefficients),
}

impl Coefficients {
    pub fn len(&self) -> usize {
        match self {
            Coefficients::Es(c) => c.len(),
            Coefficients::Ms(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Coefficients::Es(c) => c.validate(),
            Coefficients::Ms(c) => c.validate(),
        }
    }

    pub fn reflection_vector(&self) -> DVector<C64> {
        match self {
            Coefficients::Es(c) => c.reflection_vector(),
            Coefficients::Ms(c) => c.reflection_vector(),
        }
    }

    pub fn refraction_vector(&self) -> DVector<C64> {
        match self {
            Coefficients::Es(c) => c.refraction_vector(),
            Coefficients::Ms(c) => c.refraction_vector(),
        }
    }
}

/// The two channels the beamformer sees: the destination row
/// `h_d = h_id^H Φ H_ti` and the residual self-interference matrix
/// `H_r = H_tr^H + H_ir^H Θ H_ti`. The information symbol is unit power, so
/// rate and interference formulas take the beamformer alone.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub dest: RowDVector<C64>,
    pub rx: DMatrix<C64>,
}

/// Builds both effective channels from a channel set and a coefficient set.
pub fn effective_channels(
    channels: &ChannelSet,
    coeffs: &Coefficients,
) -> Result<EffectiveChannels> {
    coeffs.validate()?;
    if coeffs.len() != channels.num_elements() {
        return Err(Error::Dimension(format!(
            "coefficient count {} does not match element count {}",
            coeffs.len(),
            channels.num_elements()
        )));
    }
    let reflection = coeffs.reflection_vector();
    let refraction = coeffs.refraction_vector();
    Ok(effective_channels_from_vectors(
        channels,
        &reflection,
        &refraction,
    ))
}

/// Same as [`effective_channels`] but from raw complex coefficient vectors.
pub fn effective_channels_from_vectors(
    channels: &ChannelSet,
    reflection: &DVector<C64>,
    refraction: &DVector<C64>,
) -> EffectiveChannels {
    let l_cnt = channels.num_elements();
    let m_cnt = channels.num_tx();

    // h_d[m] = Σ_l conj(h_id[l]) b_l e^{jβ_l} H_ti[l, m]
    let mut dest = RowDVector::zeros(m_cnt);
    for l in 0..l_cnt {
        let s = channels.surface_to_dest[l].conj() * refraction[l];
        if s != C64::new(0.0, 0.0) {
            for m in 0..m_cnt {
                dest[m] += s * channels.tx_to_surface[(l, m)];
            }
        }
    }

    // H_r = H_tr^H + H_ir^H diag(reflection) H_ti
    let mut scaled = channels.tx_to_surface.clone();
    for l in 0..l_cnt {
        for m in 0..m_cnt {
            scaled[(l, m)] *= reflection[l];
        }
    }
    let rx = channels.tx_to_rx.adjoint() + channels.surface_to_rx.adjoint() * scaled;

    EffectiveChannels { dest, rx }
}

/// Destination data rate in bps/Hz: `log2(1 + |h_d w|^2 / σ_d^2)`.
pub fn data_rate(eff: &EffectiveChannels, w: &DVector<C64>, sigma_d2: f64) -> f64 {
    (1.0 + dest_gain(eff, w) / sigma_d2).log2()
}

/// Received signal power at the destination, `|h_d w|^2`.
pub fn dest_gain(eff: &EffectiveChannels, w: &DVector<C64>) -> f64 {
    (&eff.dest * w)[(0, 0)].norm_sqr()
}

/// Residual self-interference power in watts, `‖H_r w‖²`. Equals the
/// Frobenius norm of the rank-one received covariance exactly.
pub fn si_power(eff: &EffectiveChannels, w: &DVector<C64>) -> f64 {
    (&eff.rx * w).norm_squared()
}

/// Literal Frobenius-norm form `‖H_r w w^H H_r^H‖_F`, kept as an independent
/// evaluation route for [`si_power`].
pub fn si_power_frobenius(eff: &EffectiveChannels, w: &DVector<C64>) -> f64 {
    let u = &eff.rx * w;
    let cov = &u * u.adjoint();
    cov.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Snaps every phase to the nearest level of a `2^bits`-point uniform grid on
/// `[0, 2π)`. Amplitudes and modes are untouched.
pub fn quantize_phases(coeffs: &Coefficients, bits: u32) -> Coefficients {
    assert!(bits >= 1, "quantization needs at least one bit");
    let levels = (1u64 << bits) as f64;
    let step = TAU / levels;
    let snap = |p: &f64| wrap_phase((p / step).round() * step);
    match coeffs {
        Coefficients::Es(c) => Coefficients::Es(EsCoefficients {
            reflect_amp: c.reflect_amp.clone(),
            reflect_phase: c.reflect_phase.iter().map(snap).collect(),
            refract_amp: c.refract_amp.clone(),
            refract_phase: c.refract_phase.iter().map(snap).collect(),
        }),
        Coefficients::Ms(c) => Coefficients::Ms(MsCoefficients {
            mode: c.mode.clone(),
            reflect_phase: c.reflect_phase.iter().map(snap).collect(),
            refract_phase: c.refract_phase.iter().map(snap).collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::geometry::build_geometry;
    use crate::channel::sample_channels;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn test_channels(l: usize, m: usize, n: usize, seed: u64) -> ChannelSet {
        let mut config = SystemConfig::default();
        config.num_elements = l;
        config.num_tx = m;
        config.num_rx = n;
        let geometry = build_geometry(&config).unwrap();
        sample_channels(&geometry, &config, seed).unwrap()
    }

    fn random_es(l: usize, seed: u64) -> EsCoefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::new();
        let mut alpha = Vec::new();
        let mut b = Vec::new();
        let mut beta = Vec::new();
        for _ in 0..l {
            let budget: f64 = rng.random();
            let split: f64 = rng.random();
            a.push((budget * split).sqrt());
            b.push((budget * (1.0 - split)).sqrt());
            alpha.push(rng.random::<f64>() * TAU);
            beta.push(rng.random::<f64>() * TAU);
        }
        EsCoefficients::new(a, alpha, b, beta).unwrap()
    }

    fn random_w(m: usize, seed: u64) -> DVector<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(m, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn energy_budget_enforced() {
        assert!(EsCoefficients::new(vec![0.8], vec![0.0], vec![0.8], vec![0.0]).is_err());
        let ok = EsCoefficients::new(vec![0.6], vec![7.0], vec![0.8], vec![-0.5]).unwrap();
        assert!(ok.reflect_phase[0] < TAU && ok.refract_phase[0] < TAU);
        // round-off slack accepted
        let a = (0.5f64).sqrt();
        assert!(EsCoefficients::new(
            vec![a],
            vec![0.0],
            vec![(0.5f64 + 5e-10).sqrt()],
            vec![0.0]
        )
        .is_ok());
    }

    #[test]
    fn zero_amplitudes_leave_only_direct_leakage() {
        let channels = test_channels(8, 3, 2, 1);
        let coeffs = Coefficients::Es(
            EsCoefficients::new(vec![0.0; 8], vec![0.0; 8], vec![0.0; 8], vec![0.0; 8]).unwrap(),
        );
        let eff = effective_channels(&channels, &coeffs).unwrap();
        assert!(eff.dest.iter().all(|c| c.norm() == 0.0));
        let direct = channels.tx_to_rx.adjoint();
        assert_relative_eq!((eff.rx - direct).norm(), 0.0, epsilon = 1e-30);
    }

    #[test]
    fn all_reflect_ms_kills_destination_link() {
        let channels = test_channels(6, 2, 1, 2);
        let coeffs = Coefficients::Ms(
            MsCoefficients::new(vec![true; 6], vec![0.3; 6], vec![0.9; 6]).unwrap(),
        );
        let eff = effective_channels(&channels, &coeffs).unwrap();
        assert!(eff.dest.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn destination_row_matches_entrywise_expansion() {
        let channels = test_channels(10, 4, 2, 3);
        let es = random_es(10, 4);
        let eff =
            effective_channels(&channels, &Coefficients::Es(es.clone())).unwrap();
        // independent oracle: h_d[m] = Σ_l conj(h_id)_l b_l e^{jβ_l} H_ti[l, m]
        for m in 0..4 {
            let mut expected = C64::new(0.0, 0.0);
            for l in 0..10 {
                expected += channels.surface_to_dest[l].conj()
                    * C64::from_polar(es.refract_amp[l], es.refract_phase[l])
                    * channels.tx_to_surface[(l, m)];
            }
            assert_relative_eq!(eff.dest[m].re, expected.re, max_relative = 1e-12);
            assert_relative_eq!(eff.dest[m].im, expected.im, max_relative = 1e-12);
        }
    }

    #[test]
    fn rate_values() {
        let sigma = 1e-11;
        // craft an effective channel with |h_d w|^2 = k * sigma
        let eff = EffectiveChannels {
            dest: RowDVector::from_element(1, C64::new(1.0, 0.0)),
            rx: DMatrix::zeros(1, 1),
        };
        let w0 = DVector::from_element(1, C64::new(0.0, 0.0));
        assert_eq!(data_rate(&eff, &w0, sigma), 0.0);
        let w1 = DVector::from_element(1, C64::new(sigma.sqrt(), 0.0));
        assert_relative_eq!(data_rate(&eff, &w1, sigma), 1.0, max_relative = 1e-12);
        let w3 = DVector::from_element(1, C64::new((3.0 * sigma).sqrt(), 0.0));
        assert_relative_eq!(data_rate(&eff, &w3, sigma), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn si_power_identity_and_values() {
        let eff = EffectiveChannels {
            dest: RowDVector::zeros(3),
            rx: DMatrix::identity(3, 3),
        };
        let unit = DVector::from_column_slice(&[
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ]);
        assert_relative_eq!(si_power(&eff, &unit), 1.0, max_relative = 1e-14);
        assert_eq!(si_power(&eff, &DVector::zeros(3)), 0.0);

        for seed in 0..20 {
            let channels = test_channels(8, 4, 3, seed);
            let es = random_es(8, seed + 100);
            let eff = effective_channels(&channels, &Coefficients::Es(es)).unwrap();
            let w = random_w(4, seed + 200);
            let a = si_power(&eff, &w);
            let b = si_power_frobenius(&eff, &w);
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn refraction_scaling_is_linear() {
        let channels = test_channels(8, 3, 1, 9);
        let es = random_es(8, 10);
        let eff1 = effective_channels(&channels, &Coefficients::Es(es.clone())).unwrap();
        let mut scaled = es.clone();
        for b in &mut scaled.refract_amp {
            *b *= 0.5;
        }
        let eff2 = effective_channels(&channels, &Coefficients::Es(scaled)).unwrap();
        for m in 0..3 {
            assert_relative_eq!(eff2.dest[m].re, 0.5 * eff1.dest[m].re, max_relative = 1e-12);
            assert_relative_eq!(eff2.dest[m].im, 0.5 * eff1.dest[m].im, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_element_flip_perturbation() {
        let channels = test_channels(5, 3, 2, 11);
        let ms = MsCoefficients::new(
            vec![true, false, true, false, true],
            vec![0.4, 1.0, 2.2, 3.0, 4.4],
            vec![0.1, 0.9, 1.7, 2.5, 5.3],
        )
        .unwrap();
        let eff = effective_channels(&channels, &Coefficients::Ms(ms.clone())).unwrap();

        let flip = 2; // reflect -> refract
        let mut flipped = ms.clone();
        flipped.mode[flip] = false;
        let eff2 = effective_channels(&channels, &Coefficients::Ms(flipped)).unwrap();

        // h_d gains exactly the element's refraction term
        let refr_term = channels.surface_to_dest[flip].conj()
            * C64::from_polar(1.0, ms.refract_phase[flip]);
        for m in 0..3 {
            let expected = eff.dest[m] + refr_term * channels.tx_to_surface[(flip, m)];
            assert_relative_eq!(eff2.dest[m].re, expected.re, max_relative = 1e-12);
            assert_relative_eq!(eff2.dest[m].im, expected.im, max_relative = 1e-12);
        }
        // H_r loses exactly the element's reflection term
        let refl = C64::from_polar(1.0, ms.reflect_phase[flip]);
        for n in 0..2 {
            for m in 0..3 {
                let expected = eff.rx[(n, m)]
                    - channels.surface_to_rx[(flip, n)].conj()
                        * refl
                        * channels.tx_to_surface[(flip, m)];
                assert_relative_eq!(eff2.rx[(n, m)].re, expected.re, max_relative = 1e-12);
                assert_relative_eq!(eff2.rx[(n, m)].im, expected.im, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn quantization_grid() {
        let es = EsCoefficients::new(
            vec![0.5, 0.5, 0.5],
            vec![0.9 * PI, 0.2, PI / 4.0],
            vec![0.5, 0.5, 0.5],
            vec![0.0, TAU / 16.0, 1.9],
        )
        .unwrap();
        let q = quantize_phases(&Coefficients::Es(es), 4);
        let Coefficients::Es(q) = q else { unreachable!() };
        // 0.2 rad snaps to 2π/16 ≈ 0.3927
        assert_relative_eq!(q.reflect_phase[1], TAU / 16.0, max_relative = 1e-12);
        // grid points stay put
        assert_relative_eq!(q.refract_phase[1], TAU / 16.0, max_relative = 1e-12);
        assert_eq!(q.refract_phase[0], 0.0);

        let es1 = EsCoefficients::new(vec![0.5], vec![0.9 * PI], vec![0.5], vec![0.0]).unwrap();
        let Coefficients::Es(q1) = quantize_phases(&Coefficients::Es(es1), 1) else {
            unreachable!()
        };
        assert_relative_eq!(q1.reflect_phase[0], PI, max_relative = 1e-12);
    }

    #[test]
    fn quantization_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for bits in 1..=6u32 {
            let phases: Vec<f64> = (0..64).map(|_| rng.random::<f64>() * TAU).collect();
            let es = EsCoefficients::new(vec![0.5; 64], phases.clone(), vec![0.5; 64], phases.clone())
                .unwrap();
            let Coefficients::Es(q) = quantize_phases(&Coefficients::Es(es), bits) else {
                unreachable!()
            };
            let bound = PI / (1u64 << bits) as f64 + 1e-12;
            for (orig, quant) in phases.iter().zip(&q.reflect_phase) {
                let diff = (orig - quant).abs();
                assert!(diff.min(TAU - diff) <= bound);
            }
        }
    }

    #[test]
    fn coefficients_json_round_trip() {
        let es = random_es(4, 42);
        let json = serde_json::to_string(&Coefficients::Es(es.clone())).unwrap();
        let back: Coefficients = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Coefficients::Es(es));

        let ms = MsCoefficients::new(vec![true, false], vec![0.1, 0.2], vec![0.3, 0.4]).unwrap();
        let json = serde_json::to_string(&Coefficients::Ms(ms.clone())).unwrap();
        let back: Coefficients = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Coefficients::Ms(ms));
    }
}
