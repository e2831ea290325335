//! Energy-splitting surface updates with the beamformer fixed.
//!
//! Both amplitudes and phases move jointly through the complex reflection and
//! refraction vectors `α`, `β` under the per-element budget
//! `|α_l|² + |β_l|² ≤ 1`.

use nalgebra::{DMatrix, DVector};

use crate::channel::{ChannelSet, C64};
use crate::conic::{solve_qcqp, ConicProblem, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{embed_hermitian, hermitian_quad, taylor_lower_bound, unembed_vector};
use crate::surface::EsCoefficients;

use super::{relative_gap, StepResult, StepStatus, SurfaceForms};

/// Variable layout: `[Re α; Im α; Re β; Im β]`, plus one trailing epigraph
/// variable on the interference-minimization side.
struct EsLayout {
    l: usize,
    n: usize,
}

impl EsLayout {
    fn new(l: usize, epigraph: bool) -> Self {
        Self {
            l,
            n: 4 * l + usize::from(epigraph),
        }
    }

    fn budget_quad(&self, element: usize) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n, self.n);
        for block in 0..4 {
            let i = block * self.l + element;
            q[(i, i)] = 1.0;
        }
        q
    }

    /// Places a Hermitian form over α into the full variable space.
    fn alpha_quad(&self, form: &DMatrix<C64>) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n, self.n);
        q.view_mut((0, 0), (2 * self.l, 2 * self.l))
            .copy_from(&embed_hermitian(form));
        q
    }

    /// Linear coefficients for `2 Re{αᵀ z}` in the real variables.
    fn alpha_cross(&self, z: &DVector<C64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        for i in 0..self.l {
            g[i] = z[i].re;
            g[self.l + i] = -z[i].im;
        }
        g
    }

    /// Linear coefficients for `Re{β^H c}` in the real variables.
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

/// Rescales any per-element pair that exceeds the unit budget by round-off.
fn clamp_budget(alpha: &mut DVector<C64>, beta: &mut DVector<C64>) {
    for l in 0..alpha.len() {
        let s = alpha[l].norm_sqr() + beta[l].norm_sqr();
        if s > 1.0 {
            let f = C64::new((1.0 / s).sqrt(), 0.0);
            alpha[l] *= f;
            beta[l] *= f;
        }
    }
}

/// Rate-side surface update: maximize the linearized destination numerator
/// `Re{β^H Ξ β̃}` subject to the per-element budget and the interference cap,
/// which is convex quadratic in `α`.
pub fn es_phase_step_rate(
    channels: &ChannelSet,
    w: &DVector<C64>,
    es_prev: &EsCoefficients,
    p_th: f64,
) -> Result<StepResult<EsCoefficients>> {
    let l = es_prev.len();
    let forms = SurfaceForms::new(channels, w);
    let beta_prev = es_prev.refraction_vector();
    let lin = &forms.rate_form * &beta_prev;
    let scale = forms
        .rate_form
        .iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max);
    if lin.norm() <= 1e-14 * scale.max(f64::MIN_POSITIVE) * beta_prev.norm().max(1.0) {
        return Ok(StepResult {
            updated: es_prev.clone(),
            surrogate_objective: 0.0,
            true_objective: forms.rate_numerator_at(&beta_prev),
            expansion_gap: 0.0,
            status: StepStatus::Degenerate,
        });
    }

    let layout = EsLayout::new(l, false);
    let mut problem = ConicProblem::minimize(-layout.beta_linear(&lin));
    for e in 0..l {
        problem.add_quad(layout.budget_quad(e), DVector::zeros(layout.n), -1.0)?;
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
            "surface update failed: {:?} ({}, violation {:.3e})",
            sol.status, sol.solver_status, sol.max_violation
        )));
    }

    let (mut alpha, mut beta) = layout.split(&sol.x);
    clamp_budget(&mut alpha, &mut beta);
    let updated = EsCoefficients::from_vectors(&alpha, &beta)?;

    let at_prev = hermitian_quad(&forms.rate_form, &beta_prev);
    Ok(StepResult {
        updated,
        surrogate_objective: taylor_lower_bound(&forms.rate_form, &beta, &beta_prev),
        true_objective: hermitian_quad(&forms.rate_form, &beta),
        expansion_gap: relative_gap(
            taylor_lower_bound(&forms.rate_form, &beta_prev, &beta_prev),
            at_prev,
        ),
        status: StepStatus::Solved,
    })
}

/// Interference-side surface update: minimize the reflected-path quadratic
/// `α^H Ξ α + 2Re{αᵀ z}` subject to the per-element budget and the
/// linearized rate floor on `β`.
pub fn es_phase_step_si(
    channels: &ChannelSet,
    w: &DVector<C64>,
    es_prev: &EsCoefficients,
    r_th: f64,
    sigma_d2: f64,
) -> Result<StepResult<EsCoefficients>> {
    let l = es_prev.len();
    let forms = SurfaceForms::new(channels, w);
    let beta_prev = es_prev.refraction_vector();
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
        // the reflected quadratic vanishes identically; keep the surface
        return Ok(StepResult {
            updated: es_prev.clone(),
            surrogate_objective: 0.0,
            true_objective: 0.0,
            expansion_gap: relative_gap(
                taylor_lower_bound(&forms.rate_form, &beta_prev, &beta_prev),
                gain_prev,
            ),
            status: StepStatus::Solved,
        });
    }

    let layout = EsLayout::new(l, true);
    let t_idx = 4 * l;
    let mut objective = DVector::zeros(layout.n);
    objective[t_idx] = 1.0;
    let mut problem = ConicProblem::minimize(objective);

    // epigraph: (α^H Ξ α + 2Re{αᵀ z})/s − t ≤ 0
    let mut quad = layout.alpha_quad(&(&forms.si_form / C64::new(si_scale, 0.0)));
    quad[(t_idx, t_idx)] = 0.0;
    let mut lin = layout.alpha_cross(&(&forms.si_cross / C64::new(si_scale, 0.0)));
    lin[t_idx] = -0.5;
    problem.add_quad(quad, lin, 0.0)?;

    for e in 0..l {
        problem.add_quad(layout.budget_quad(e), DVector::zeros(layout.n), -1.0)?;
    }
    if floor > 0.0 {
        // −2Re{β^H Ξ β̃} + β̃^H Ξ β̃ + floor ≤ 0
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
            "surface update failed: {:?} ({}, violation {:.3e})",
            sol.status, sol.solver_status, sol.max_violation
        )));
    }

    let (mut alpha, mut beta) = layout.split(&sol.x);
    clamp_budget(&mut alpha, &mut beta);
    let updated = EsCoefficients::from_vectors(&alpha, &beta)?;

    let quad_value =
        hermitian_quad(&forms.si_form, &alpha) + 2.0 * alpha.dot(&forms.si_cross).re;
    Ok(StepResult {
        updated,
        surrogate_objective: quad_value,
        true_objective: quad_value,
        expansion_gap: relative_gap(
            taylor_lower_bound(&forms.rate_form, &beta_prev, &beta_prev),
            gain_prev,
        ),
        status: StepStatus::Solved,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testsupport::*;
    use super::*;
    use crate::surface::{data_rate, effective_channels, Coefficients};
    use approx::assert_relative_eq;

    fn es_uniform(l: usize) -> EsCoefficients {
        let a = 1.0 / 2f64.sqrt();
        EsCoefficients::new(vec![a; l], vec![0.0; l], vec![a; l], vec![0.0; l]).unwrap()
    }

    #[test]
    fn single_element_closed_form() {
        // L = M = 1 with no interference cap: the optimum parks the whole
        // budget on refraction, so |h_d| = |h_id| |H_ti|.
        let channels = test_channels(1, 1, 1, 81);
        let w = DVector::from_element(1, C64::new(1.0, 0.0));
        let mut es = es_uniform(1);
        for _ in 0..40 {
            es = es_phase_step_rate(&channels, &w, &es, f64::INFINITY)
                .unwrap()
                .updated;
        }
        assert_relative_eq!(es.refract_amp[0], 1.0, max_relative = 1e-6);
        assert!(es.reflect_amp[0] < 1e-4);
        let eff = effective_channels(&channels, &Coefficients::Es(es)).unwrap();
        let expected =
            channels.surface_to_dest[0].norm() * channels.tx_to_surface[(0, 0)].norm();
        assert_relative_eq!(eff.dest[0].norm(), expected, max_relative = 1e-6);
    }

    #[test]
    fn rate_step_is_monotone_and_feasible() {
        let channels = test_channels(8, 4, 2, 82);
        let w = random_w(4, 83) * C64::new(0.3, 0.0);
        let forms = SurfaceForms::new(&channels, &w);
        let mut es = es_uniform(8);
        let p_th = forms.si_at(&es.reflection_vector()) * 1.2;

        let mut last = forms.rate_numerator_at(&es.refraction_vector());
        for _ in 0..15 {
            let step = es_phase_step_rate(&channels, &w, &es, p_th).unwrap();
            assert!(step.status == StepStatus::Solved);
            assert!(
                step.true_objective >= last * (1.0 - 1e-9) - 1e-30,
                "objective regressed: {} -> {}",
                last,
                step.true_objective
            );
            assert!(step.surrogate_objective <= step.true_objective * (1.0 + 1e-9) + 1e-30);
            assert!(step.expansion_gap < 1e-9);
            es = step.updated;
            // per-element budget and interference cap hold
            for l in 0..8 {
                assert!(es.reflect_amp[l].powi(2) + es.refract_amp[l].powi(2) <= 1.0 + 1e-9);
            }
            assert!(forms.si_at(&es.reflection_vector()) <= p_th * (1.0 + 1e-7));
            last = step.true_objective;
        }
    }

    #[test]
    fn zero_refraction_expansion_is_degenerate() {
        let channels = test_channels(4, 2, 1, 84);
        let w = random_w(2, 85);
        let es = EsCoefficients::new(
            vec![0.5; 4],
            vec![0.0; 4],
            vec![0.0; 4],
            vec![0.0; 4],
        )
        .unwrap();
        let step = es_phase_step_rate(&channels, &w, &es, f64::INFINITY).unwrap();
        assert_eq!(step.status, StepStatus::Degenerate);
    }

    #[test]
    fn si_step_descends_and_keeps_rate() {
        let channels = test_channels(8, 4, 2, 86);
        let sigma = 1e-11;
        // matched-filter beamformer against the uniform surface
        let es0 = es_uniform(8);
        let eff0 = effective_channels(&channels, &Coefficients::Es(es0.clone())).unwrap();
        let w = eff0.dest.adjoint() * C64::new(1.0 / eff0.dest.norm(), 0.0);
        let r_th = data_rate(&eff0, &w, sigma) * 0.5;
        let floor = (2f64.powf(r_th) - 1.0) * sigma;

        let forms = SurfaceForms::new(&channels, &w);
        let mut es = es0;
        let mut last = f64::INFINITY;
        for _ in 0..15 {
            let step = es_phase_step_si(&channels, &w, &es, r_th, sigma).unwrap();
            assert!(step.true_objective <= last + 1e-12 * last.abs().max(1.0));
            last = step.true_objective;
            es = step.updated;
            assert!(
                forms.rate_numerator_at(&es.refraction_vector()) >= floor * (1.0 - 1e-7),
                "rate floor violated"
            );
        }
        // full interference including the direct leak went down or held
        let si_now = forms.si_at(&es.reflection_vector());
        let si_init = forms.si_at(&es_uniform(8).reflection_vector());
        assert!(si_now <= si_init * (1.0 + 1e-9));
    }

    #[test]
    fn vacuous_rate_floor_lets_reflection_cancel() {
        // r_th = 0 frees α; the solved reflection must do at least as well as
        // no reflection at all
        let channels = test_channels(6, 3, 2, 87);
        let w = random_w(3, 88) * C64::new(0.4, 0.0);
        let es = es_uniform(6);
        let step = es_phase_step_si(&channels, &w, &es, 0.0, 1e-11).unwrap();
        assert!(step.true_objective <= 1e-12 * SurfaceForms::new(&channels, &w).si_direct);
    }

    #[test]
    fn dead_reflection_path_returns_zero_objective() {
        let mut channels = test_channels(4, 2, 1, 89);
        channels.surface_to_rx.fill(C64::new(0.0, 0.0));
        channels.tx_to_rx.fill(C64::new(0.0, 0.0));
        let w = random_w(2, 90);
        let es = es_uniform(4);
        let step = es_phase_step_si(&channels, &w, &es, 0.0, 1e-11).unwrap();
        assert_eq!(step.true_objective, 0.0);
    }
}
