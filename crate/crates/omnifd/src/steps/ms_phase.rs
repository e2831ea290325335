//! Mode-switching phase updates with the beamformer and the mode split fixed.
//!
//! The unit-modulus constraints on the reflection and refraction phase
//! vectors are relaxed to unit balls for the solve; the solution is projected
//! back to unit modulus by phase extraction, and each half is accepted only
//! if the projected point keeps its own side of the problem sound: the
//! refraction half must not regress the rate quantity, the reflection half
//! must not break (rate side) or regress (interference side) the reflected
//! power.

use nalgebra::{DMatrix, DVector};

use crate::channel::{ChannelSet, C64};
use crate::conic::{solve_qcqp, ConicProblem, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{embed_hermitian, hermitian_quad, taylor_lower_bound, unembed_vector};
use crate::surface::MsCoefficients;

use super::{relative_gap, StepResult, StepStatus, SurfaceForms, STEP_FEAS_SLACK};

/// Variable layout mirrors the energy-splitting update:
/// `[Re α; Im α; Re β; Im β]` with per-element balls `|α_l| ≤ 1`, `|β_l| ≤ 1`.
struct MsLayout {
    l: usize,
    n: usize,
}

impl MsLayout {
    fn new(l: usize, epigraph: bool) -> Self {
        Self {
            l,
            n: 4 * l + usize::from(epigraph),
        }
    }

    fn ball_quad(&self, element: usize, beta_block: bool) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n, self.n);
        let base = if beta_block { 2 * self.l } else { 0 };
        q[(base + element, base + element)] = 1.0;
        q[(base + self.l + element, base + self.l + element)] = 1.0;
        q
    }

    fn alpha_quad(&self, form: &DMatrix<C64>) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n, self.n);
        q.view_mut((0, 0), (2 * self.l, 2 * self.l))
            .copy_from(&embed_hermitian(form));
        q
    }

    fn alpha_cross(&self, z: &DVector<C64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        for i in 0..self.l {
            g[i] = z[i].re;
            g[self.l + i] = -z[i].im;
        }
        g
    }

    fn beta_linear(&self, c: &DVector<C64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        for i in 0..self.l {
            g[2 * self.l + i] = c[i].re;
            g[3 * self.l + i] = c[i].im;
        }
        g
    }

    fn split(&self, x: &[f64]) -> (DVector<C64>, DVector<C64>) {
        let alpha = unembed_vector(&x[..2 * self.l]);
        let beta = unembed_vector(&x[2 * self.l..4 * self.l]);
        (alpha, beta)
    }
}

/// Phase extraction; entries with negligible magnitude keep their previous
/// phase instead of picking up noise.
fn project_unit(v: &DVector<C64>, prev: &DVector<C64>) -> DVector<C64> {
    DVector::from_fn(v.len(), |i, _| {
        if v[i].norm() > 1e-12 {
            v[i] / C64::new(v[i].norm(), 0.0)
        } else {
            prev[i]
        }
    })
}

fn phases_of(v: &DVector<C64>) -> Vec<f64> {
    v.iter().map(|c| crate::units::wrap_phase(c.arg())).collect()
}

/// Rate-side phase update for a fixed mode split.
pub fn ms_phase_step_rate(
    channels: &ChannelSet,
    w: &DVector<C64>,
    ms_prev: &MsCoefficients,
    p_th: f64,
) -> Result<StepResult<MsCoefficients>> {
    let l = ms_prev.len();
    let forms = SurfaceForms::new(channels, w).masked(&ms_prev.mode);
    let beta_prev = ms_prev.refract_phase_vector();
    let alpha_prev = ms_prev.reflect_phase_vector();

    let lin = &forms.rate_form * &beta_prev;
    let scale = forms
        .rate_form
        .iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max);
    if lin.norm() <= 1e-14 * scale.max(f64::MIN_POSITIVE) * (l as f64) {
        return Ok(StepResult {
            updated: ms_prev.clone(),
            surrogate_objective: 0.0,
            true_objective: forms.rate_numerator_at(&beta_prev),
            expansion_gap: 0.0,
            status: StepStatus::Degenerate,
        });
    }

    let layout = MsLayout::new(l, false);
    let mut problem = ConicProblem::minimize(-layout.beta_linear(&lin));
    for e in 0..l {
        problem.add_quad(layout.ball_quad(e, false), DVector::zeros(layout.n), -1.0)?;
        problem.add_quad(layout.ball_quad(e, true), DVector::zeros(layout.n), -1.0)?;
    }
    if p_th.is_finite() {
        problem.add_quad(
            layout.alpha_quad(&forms.si_form),
            layout.alpha_cross(&forms.si_cross),
            forms.si_direct - p_th,
        )?;
    }

    let sol = solve_qcqp(&problem)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible(
            "interference cap unreachable for the current beamformer".into(),
        ));
    }
    if !super::usable_solution(&sol) {
        return Err(Error::Solver(format!(
            "phase update failed: {:?} ({}, violation {:.3e})",
            sol.status, sol.solver_status, sol.max_violation
        )));
    }

    let (alpha_raw, beta_raw) = layout.split(&sol.x);
    let alpha_proj = project_unit(&alpha_raw, &alpha_prev);
    let beta_proj = project_unit(&beta_raw, &beta_prev);

    // accept each half independently: β must not regress the rate numerator,
    // α must still satisfy the interference cap after projection
    let gain_prev = forms.rate_numerator_at(&beta_prev);
    let gain_proj = forms.rate_numerator_at(&beta_proj);
    let beta_ok = gain_proj >= gain_prev * (1.0 - STEP_FEAS_SLACK);
    let alpha_ok = !p_th.is_finite()
        || forms.si_at(&alpha_proj) <= p_th * (1.0 + STEP_FEAS_SLACK) + f64::MIN_POSITIVE;

    let beta_new = if beta_ok { &beta_proj } else { &beta_prev };
    let alpha_new = if alpha_ok { &alpha_proj } else { &alpha_prev };

    let updated = MsCoefficients::new(
        ms_prev.mode.clone(),
        phases_of(alpha_new),
        phases_of(beta_new),
    )?;
    let status = if beta_ok || alpha_ok {
        StepStatus::Solved
    } else {
        StepStatus::KeptPrevious
    };
    Ok(StepResult {
        updated,
        surrogate_objective: taylor_lower_bound(&forms.rate_form, beta_new, &beta_prev),
        true_objective: forms.rate_numerator_at(beta_new),
        expansion_gap: relative_gap(
            taylor_lower_bound(&forms.rate_form, &beta_prev, &beta_prev),
            gain_prev,
        ),
        status,
    })
}

/// Interference-side phase update for a fixed mode split.
pub fn ms_phase_step_si(
    channels: &ChannelSet,
    w: &DVector<C64>,
    ms_prev: &MsCoefficients,
    r_th: f64,
    sigma_d2: f64,
) -> Result<StepResult<MsCoefficients>> {
    let l = ms_prev.len();
    let forms = SurfaceForms::new(channels, w).masked(&ms_prev.mode);
    let beta_prev = ms_prev.refract_phase_vector();
    let alpha_prev = ms_prev.reflect_phase_vector();
    let floor = (2f64.powf(r_th) - 1.0) * sigma_d2;

    let gain_prev = forms.rate_numerator_at(&beta_prev);
    if floor > 0.0 && gain_prev < floor * (1.0 - 1e-7) {
        return Err(Error::Infeasible(
            "expansion point violates the rate floor".into(),
        ));
    }
    let rate_lin = &forms.rate_form * &beta_prev;
    if floor > 0.0 && rate_lin.norm() == 0.0 {
        return Err(Error::Infeasible(
            "rate floor cannot be linearized from a null refraction state".into(),
        ));
    }

    let si_scale = forms
        .si_form
        .iter()
        .map(|c| c.norm())
        .chain(forms.si_cross.iter().map(|c| c.norm()))
        .fold(0.0f64, f64::max);
    if si_scale == 0.0 {
        // no reflecting element contributes; nothing to move
        return Ok(StepResult {
            updated: ms_prev.clone(),
            surrogate_objective: 0.0,
            true_objective: 0.0,
            expansion_gap: relative_gap(
                taylor_lower_bound(&forms.rate_form, &beta_prev, &beta_prev),
                gain_prev,
            ),
            status: StepStatus::Solved,
        });
    }

    let layout = MsLayout::new(l, true);
    let t_idx = 4 * l;
    let mut objective = DVector::zeros(layout.n);
    objective[t_idx] = 1.0;
    let mut problem = ConicProblem::minimize(objective);

    let quad = layout.alpha_quad(&(&forms.si_form / C64::new(si_scale, 0.0)));
    let mut lin = layout.alpha_cross(&(&forms.si_cross / C64::new(si_scale, 0.0)));
    lin[t_idx] = -0.5;
    problem.add_quad(quad, lin, 0.0)?;

    for e in 0..l {
        problem.add_quad(layout.ball_quad(e, false), DVector::zeros(layout.n), -1.0)?;
        problem.add_quad(layout.ball_quad(e, true), DVector::zeros(layout.n), -1.0)?;
    }
    if floor > 0.0 {
        problem.add_linear(-layout.beta_linear(&rate_lin), gain_prev + floor);
    }

    let sol = solve_qcqp(&problem)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible(
            "rate floor unreachable for the current beamformer".into(),
        ));
    }
    if !super::usable_solution(&sol) {
        return Err(Error::Solver(format!(
            "phase update failed: {:?} ({}, violation {:.3e})",
            sol.status, sol.solver_status, sol.max_violation
        )));
    }

    let (alpha_raw, beta_raw) = layout.split(&sol.x);
    let alpha_proj = project_unit(&alpha_raw, &alpha_prev);
    let beta_proj = if floor > 0.0 {
        project_unit(&beta_raw, &beta_prev)
    } else {
        // β is unconstrained and objective-free here; keep it put
        beta_prev.clone()
    };

    let si_quad_at = |alpha: &DVector<C64>| {
        hermitian_quad(&forms.si_form, alpha) + 2.0 * alpha.dot(&forms.si_cross).re
    };
    let prev_value = si_quad_at(&alpha_prev);
    let proj_value = si_quad_at(&alpha_proj);
    let magnitude = prev_value.abs().max(proj_value.abs()).max(f64::MIN_POSITIVE);
    let alpha_ok = proj_value - prev_value <= STEP_FEAS_SLACK * magnitude;
    let beta_ok = floor <= 0.0
        || forms.rate_numerator_at(&beta_proj) >= floor * (1.0 - STEP_FEAS_SLACK);

    let alpha_new = if alpha_ok { &alpha_proj } else { &alpha_prev };
    let beta_new = if beta_ok { &beta_proj } else { &beta_prev };

    let updated = MsCoefficients::new(
        ms_prev.mode.clone(),
        phases_of(alpha_new),
        phases_of(beta_new),
    )?;
    let value = si_quad_at(alpha_new);
    let status = if alpha_ok {
        StepStatus::Solved
    } else {
        StepStatus::KeptPrevious
    };
    Ok(StepResult {
        updated,
        surrogate_objective: value,
        true_objective: value,
        expansion_gap: relative_gap(
            taylor_lower_bound(&forms.rate_form, &beta_prev, &beta_prev),
            gain_prev,
        ),
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testsupport::*;
    use super::*;
    use crate::surface::{data_rate, effective_channels, Coefficients};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn random_ms(l: usize, seed: u64) -> MsCoefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MsCoefficients::new(
            (0..l).map(|i| i % 2 == 1).collect(),
            (0..l).map(|_| rng.random::<f64>() * TAU).collect(),
            (0..l).map(|_| rng.random::<f64>() * TAU).collect(),
        )
        .unwrap()
    }

    #[test]
    fn relaxed_projected_previous_chain() {
        let channels = test_channels(4, 3, 2, 91);
        let w = random_w(3, 92) * C64::new(0.4, 0.0);
        let ms = random_ms(4, 93);
        let forms = SurfaceForms::new(&channels, &w).masked(&ms.mode);
        let p_th = forms.si_at(&ms.reflect_phase_vector()) * 1.5;

        let prev_gain = forms.rate_numerator_at(&ms.refract_phase_vector());
        let step = ms_phase_step_rate(&channels, &w, &ms, p_th).unwrap();
        // projected true objective does not regress the previous iterate
        assert!(step.true_objective >= prev_gain * (1.0 - 1e-9));
        // and stays below the relaxed surrogate optimum by construction
        assert!(step.surrogate_objective <= step.true_objective * (1.0 + 1e-9) + 1e-30);
        assert!(step.expansion_gap < 1e-9);
    }

    #[test]
    fn all_reflect_rate_step_is_degenerate() {
        let channels = test_channels(4, 2, 1, 94);
        let w = random_w(2, 95);
        let ms =
            MsCoefficients::new(vec![true; 4], vec![0.0; 4], vec![0.0; 4]).unwrap();
        let step = ms_phase_step_rate(&channels, &w, &ms, f64::INFINITY).unwrap();
        assert_eq!(step.status, StepStatus::Degenerate);
        assert_eq!(step.true_objective, 0.0);
    }

    #[test]
    fn all_refract_si_constraint_reduces_to_direct_leak() {
        let channels = test_channels(4, 2, 2, 96);
        let w = random_w(2, 97);
        let ms = MsCoefficients::new(vec![false; 4], vec![0.1; 4], vec![0.2; 4]).unwrap();
        let forms = SurfaceForms::new(&channels, &w).masked(&ms.mode);
        // the reflected quadratic vanishes: interference is the direct leak
        assert!(forms.si_form.iter().all(|c| c.norm() == 0.0));
        assert_eq!(
            forms.si_at(&ms.reflect_phase_vector()),
            forms.si_direct
        );
        // cap above the leak: step feasible, phases free
        let step = ms_phase_step_rate(&channels, &w, &ms, forms.si_direct * 1.01).unwrap();
        assert_eq!(step.status, StepStatus::Solved);
        // cap below the leak: infeasible
        let out = ms_phase_step_rate(&channels, &w, &ms, forms.si_direct * 0.5);
        assert!(matches!(out, Err(Error::Infeasible(_))));
    }

    #[test]
    fn si_step_descends_under_rate_floor() {
        let channels = test_channels(8, 4, 2, 98);
        let sigma = 1e-11;
        let ms = random_ms(8, 99);
        let eff = effective_channels(&channels, &Coefficients::Ms(ms.clone())).unwrap();
        let w = eff.dest.adjoint() * C64::new(0.5 / eff.dest.norm(), 0.0);
        let eff_rate = data_rate(&eff, &w, sigma);
        let r_th = eff_rate * 0.4;
        let floor = (2f64.powf(r_th) - 1.0) * sigma;

        let forms = SurfaceForms::new(&channels, &w).masked(&ms.mode);
        let mut state = ms;
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let step = ms_phase_step_si(&channels, &w, &state, r_th, sigma).unwrap();
            let magnitude = step.true_objective.abs().max(last.abs()).max(1e-300);
            assert!(step.true_objective - last <= 1e-9 * magnitude);
            last = step.true_objective;
            state = step.updated;
            assert!(
                forms.rate_numerator_at(&state.refract_phase_vector())
                    >= floor * (1.0 - 1e-7)
            );
        }
    }

    #[test]
    fn modes_never_change_in_phase_steps() {
        let channels = test_channels(6, 3, 1, 100);
        let w = random_w(3, 101) * C64::new(0.3, 0.0);
        let ms = random_ms(6, 102);
        let step = ms_phase_step_rate(&channels, &w, &ms, f64::INFINITY).unwrap();
        assert_eq!(step.updated.mode, ms.mode);
    }
}
