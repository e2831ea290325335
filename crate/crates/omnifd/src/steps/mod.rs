//! Block updates of the alternating optimizers.
//!
//! Each update fixes all but one variable block, convexifies the remaining
//! subproblem (first-order surrogate for the nonconvex piece, exact convex
//! quadratics elsewhere), solves it through [`crate::conic`], and maps the
//! solution back to the domain types. The mode-selection update additionally
//! lifts the binary vector to a rank-relaxed PSD matrix and recovers a binary
//! point by Gaussian randomization.

mod beamforming;
mod es_phase;
mod mode_select;
mod ms_phase;

pub use beamforming::{beamforming_step_rate, beamforming_step_si};
pub use es_phase::{es_phase_step_rate, es_phase_step_si};
pub use mode_select::{
    build_sdr_data, mode_selection_bruteforce, mode_selection_rate, mode_selection_si,
    ModeObjective, ModeSelection, SdrData,
};
pub use ms_phase::{ms_phase_step_rate, ms_phase_step_si};

use nalgebra::{DMatrix, DVector};

use crate::channel::{ChannelSet, C64};
use crate::linalg::hadamard_transpose;

/// Relative slack allowed when re-checking a side constraint on a candidate
/// point that was evaluated exactly.
pub const STEP_FEAS_SLACK: f64 = 1e-9;

/// A solver point is usable as a step candidate when it is optimal, or when
/// the interior point stopped early but the primal point is still nearly
/// feasible: every step's caller re-verifies constraints and objectives in
/// exact arithmetic before accepting the candidate.
pub(crate) fn usable_solution(sol: &crate::conic::ConicSolution) -> bool {
    use crate::conic::SolveStatus;
    match sol.status {
        SolveStatus::Optimal => true,
        SolveStatus::NumericalFailure | SolveStatus::MaxIters => sol.max_violation <= 1e-5,
        SolveStatus::Infeasible => false,
    }
}

/// How a block update ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    /// Subproblem solved; `updated` is the solver point.
    Solved,
    /// The expansion point nulls the surrogate; the block needs
    /// re-initialization instead of a solve.
    Degenerate,
    /// The solved point was projected/checked and rejected; `updated` equals
    /// the previous iterate.
    KeptPrevious,
}

/// Outcome of one block update.
#[derive(Debug, Clone)]
pub struct StepResult<T> {
    pub updated: T,
    /// First-order model of the subproblem objective at `updated`; equals
    /// `true_objective` when the objective was already convex.
    pub surrogate_objective: f64,
    /// Subproblem's true objective at `updated`.
    pub true_objective: f64,
    /// Relative mismatch between the surrogate and the true objective at the
    /// expansion point; zero up to round-off by construction.
    pub expansion_gap: f64,
    pub status: StepStatus,
}

/// The quadratic data every surface update shares. With `β` the refraction
/// vector and `α` the reflection vector:
///
/// - destination numerator `|h_d w|² = β^H rate_form β`
/// - residual interference `‖H_r w‖² = α^H si_form α + 2 Re{αᵀ si_cross} + si_direct`
#[derive(Debug, Clone)]
pub struct SurfaceForms {
    pub rate_form: DMatrix<C64>,
    pub si_form: DMatrix<C64>,
    pub si_cross: DVector<C64>,
    pub si_direct: f64,
}

impl SurfaceForms {
    /// Builds the forms for a fixed beamformer from the raw channels.
    pub fn new(channels: &ChannelSet, w: &DVector<C64>) -> Self {
        let tx_w = &channels.tx_to_surface * w; // H_ti w, length L
        let gram = &tx_w * tx_w.adjoint();
        let dest_outer = &channels.surface_to_dest * channels.surface_to_dest.adjoint();
        let rx_outer = &channels.surface_to_rx * channels.surface_to_rx.adjoint();
        let rate_form = hadamard_transpose(&dest_outer, &gram);
        let si_form = hadamard_transpose(&rx_outer, &gram);

        // cross term: diag(H_ti w w^H H_tr H_ir^H)
        let rx_row = (w.adjoint() * &channels.tx_to_rx) * channels.surface_to_rx.adjoint();
        let si_cross = DVector::from_fn(tx_w.len(), |l, _| tx_w[l] * rx_row[(0, l)]);

        let si_direct = (channels.tx_to_rx.adjoint() * w).norm_squared();
        Self {
            rate_form,
            si_form,
            si_cross,
            si_direct,
        }
    }

    /// Restriction to a fixed reflect/refract mode split: refraction terms of
    /// reflecting elements and reflection terms of refracting elements drop
    /// out.
    pub fn masked(&self, mode: &[bool]) -> Self {
        let l = mode.len();
        let keep_refract = |i: usize| if mode[i] { 0.0 } else { 1.0 };
        let keep_reflect = |i: usize| if mode[i] { 1.0 } else { 0.0 };
        Self {
            rate_form: DMatrix::from_fn(l, l, |i, j| {
                self.rate_form[(i, j)] * keep_refract(i) * keep_refract(j)
            }),
            si_form: DMatrix::from_fn(l, l, |i, j| {
                self.si_form[(i, j)] * keep_reflect(i) * keep_reflect(j)
            }),
            si_cross: DVector::from_fn(l, |i, _| self.si_cross[i] * keep_reflect(i)),
            si_direct: self.si_direct,
        }
    }

    /// Interference at a reflection vector.
    pub fn si_at(&self, reflection: &DVector<C64>) -> f64 {
        crate::linalg::hermitian_quad(&self.si_form, reflection)
            + 2.0 * reflection.dot(&self.si_cross).re
            + self.si_direct
    }

    /// Destination numerator at a refraction vector.
    pub fn rate_numerator_at(&self, refraction: &DVector<C64>) -> f64 {
        crate::linalg::hermitian_quad(&self.rate_form, refraction)
    }
}

pub(crate) fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}


#[cfg(test)]
mod tests {
    use super::testsupport::*;
    use super::*;
    use crate::surface::{effective_channels, Coefficients, EsCoefficients, MsCoefficients};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    #[test]
    fn forms_reproduce_link_quantities_for_es() {
        let channels = test_channels(8, 3, 2, 31);
        let w = random_w(3, 32);
        let forms = SurfaceForms::new(&channels, &w);

        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let amp: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 0.7).collect();
        let amp2: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 0.7).collect();
        let ph1: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * TAU).collect();
        let ph2: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * TAU).collect();
        let es = EsCoefficients::new(amp, ph1, amp2, ph2).unwrap();
        let eff = effective_channels(&channels, &Coefficients::Es(es.clone())).unwrap();

        let rate_direct = crate::surface::dest_gain(&eff, &w);
        let si_direct = crate::surface::si_power(&eff, &w);

        assert_relative_eq!(
            forms.rate_numerator_at(&es.refraction_vector()),
            rate_direct,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            forms.si_at(&es.reflection_vector()),
            si_direct,
            max_relative = 1e-10
        );
    }

    #[test]
    fn masked_forms_match_ms_evaluation() {
        let channels = test_channels(6, 2, 2, 41);
        let w = random_w(2, 42);
        let forms = SurfaceForms::new(&channels, &w);

        let mode = vec![true, false, true, true, false, false];
        let ms = MsCoefficients::new(
            mode.clone(),
            vec![0.5, 1.1, 2.0, 3.3, 4.0, 5.9],
            vec![0.2, 0.8, 1.9, 2.7, 3.5, 6.0],
        )
        .unwrap();
        let masked = forms.masked(&mode);
        let eff = effective_channels(&channels, &Coefficients::Ms(ms.clone())).unwrap();

        // evaluated at the full unit-modulus phase vectors, the masked forms
        // reproduce the mode-pruned link quantities
        assert_relative_eq!(
            masked.rate_numerator_at(&ms.refract_phase_vector()),
            crate::surface::dest_gain(&eff, &w),
            max_relative = 1e-10
        );
        assert_relative_eq!(
            masked.si_at(&ms.reflect_phase_vector()),
            crate::surface::si_power(&eff, &w),
            max_relative = 1e-10
        );
    }

    #[test]
    fn interference_never_below_zero() {
        let channels = test_channels(5, 2, 3, 51);
        let w = random_w(2, 52);
        let forms = SurfaceForms::new(&channels, &w);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let alpha = DVector::from_fn(5, |_, _| {
                C64::from_polar(rng.random::<f64>(), rng.random::<f64>() * TAU)
            });
            assert!(forms.si_at(&alpha) >= -1e-12 * forms.si_direct.max(1.0));
        }
    }
}
