//! Beamformer updates with the surface fixed.

use nalgebra::{DMatrix, DVector};

use crate::channel::C64;
use crate::conic::{solve_qcqp, ConicProblem, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{
    embed_hermitian, embed_vector, hermitian_quad, taylor_lower_bound, unembed_vector,
};
use crate::surface::EffectiveChannels;

use super::{relative_gap, StepResult, StepStatus};

fn dest_gram(eff: &EffectiveChannels) -> DMatrix<C64> {
    eff.dest.adjoint() * &eff.dest
}

fn si_gram(eff: &EffectiveChannels) -> DMatrix<C64> {
    eff.rx.adjoint() * &eff.rx
}

/// Scales the beamformer back onto the power ball if the solver left it a
/// hair outside.
fn clamp_power(w: &mut DVector<C64>, p_max: f64) {
    let p = w.norm_squared();
    if p > p_max {
        *w *= C64::new((p_max / p).sqrt(), 0.0);
    }
}

/// Rate-side beamformer update: maximize the linearized destination gain
/// under the power budget and the interference cap.
///
/// The surrogate `2Re{w^H A w̃} − w̃^H A w̃` with `A = h_d^H h_d` lower-bounds
/// the true gain `w^H A w`, so any optimal solution cannot regress the true
/// objective relative to a feasible expansion point.
pub fn beamforming_step_rate(
    eff: &EffectiveChannels,
    w_prev: &DVector<C64>,
    p_max: f64,
    p_th: f64,
) -> Result<StepResult<DVector<C64>>> {
    let m = w_prev.len();
    let a = dest_gram(eff);
    let lin = &a * w_prev; // h_d^H (h_d w̃)
    let scale = eff.dest.norm_squared() * w_prev.norm();
    if lin.norm() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Ok(StepResult {
            updated: w_prev.clone(),
            surrogate_objective: 0.0,
            true_objective: hermitian_quad(&a, w_prev),
            expansion_gap: 0.0,
            status: StepStatus::Degenerate,
        });
    }

    let cap = p_th.is_finite().then(|| si_gram(eff));
    let mut problem = ConicProblem::minimize(-embed_vector(&lin));
    problem.add_quad(
        DMatrix::identity(2 * m, 2 * m),
        DVector::zeros(2 * m),
        -p_max,
    )?;
    if let Some(b) = &cap {
        if b.iter().any(|c| c.norm_sqr() > 0.0) {
            problem.add_quad(embed_hermitian(b), DVector::zeros(2 * m), -p_th)?;
        }
    }

    let sol = solve_qcqp(&problem)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible(
            "interference cap unreachable for the current surface state".into(),
        ));
    }
    if !super::usable_solution(&sol) {
        return Err(Error::Solver(format!(
            "beamformer update failed: {:?} ({}, violation {:.3e})",
            sol.status, sol.solver_status, sol.max_violation
        )));
    }

    let mut w = unembed_vector(&sol.x);
    clamp_power(&mut w, p_max);
    if let Some(b) = &cap {
        // interference is exactly quadratic in w, so residual solver slack on
        // the cap is repaired by a deterministic rescale
        let si = hermitian_quad(b, &w);
        if si > p_th {
            w *= C64::new((p_th / si).sqrt() * (1.0 - 1e-15), 0.0);
        }
    }

    let at_prev = hermitian_quad(&a, w_prev);
    Ok(StepResult {
        updated: w.clone(),
        surrogate_objective: taylor_lower_bound(&a, &w, w_prev),
        true_objective: hermitian_quad(&a, &w),
        expansion_gap: relative_gap(taylor_lower_bound(&a, w_prev, w_prev), at_prev),
        status: StepStatus::Solved,
    })
}

/// Interference-side beamformer update: minimize `‖H_r w‖²` under the power
/// budget and the linearized rate floor
/// `2Re{w^H A w̃} ≥ w̃^H A w̃ + (2^{R_th}−1)σ_d²`.
///
/// The linearized floor under-estimates the true destination gain, so the
/// returned point satisfies the unlinearized rate constraint as well.
pub fn beamforming_step_si(
    eff: &EffectiveChannels,
    w_prev: &DVector<C64>,
    p_max: f64,
    r_th: f64,
    sigma_d2: f64,
) -> Result<StepResult<DVector<C64>>> {
    let m = w_prev.len();
    let b = si_gram(eff);
    let floor = (2f64.powf(r_th) - 1.0) * sigma_d2;

    if floor <= 0.0 {
        // vacuous rate floor: the unconstrained minimizer is w = 0
        let w = DVector::zeros(m);
        return Ok(StepResult {
            updated: w,
            surrogate_objective: 0.0,
            true_objective: 0.0,
            expansion_gap: 0.0,
            status: StepStatus::Solved,
        });
    }

    let a = dest_gram(eff);
    let gain_prev = hermitian_quad(&a, w_prev);
    if gain_prev < floor * (1.0 - 1e-7) {
        return Err(Error::Infeasible(
            "expansion point violates the rate floor".into(),
        ));
    }

    let b_scale = b.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if b_scale == 0.0 {
        // no interference path at all; the previous point already meets the
        // rate floor and any feasible point scores zero
        return Ok(StepResult {
            updated: w_prev.clone(),
            surrogate_objective: 0.0,
            true_objective: 0.0,
            expansion_gap: relative_gap(taylor_lower_bound(&a, w_prev, w_prev), gain_prev),
            status: StepStatus::Solved,
        });
    }

    // variables [Re w; Im w; t], minimizing the epigraph variable t of the
    // scale-normalized interference quadratic
    let n = 2 * m + 1;
    let mut objective = DVector::zeros(n);
    objective[2 * m] = 1.0;
    let mut problem = ConicProblem::minimize(objective);

    let mut quad = DMatrix::zeros(n, n);
    quad.view_mut((0, 0), (2 * m, 2 * m))
        .copy_from(&(embed_hermitian(&b) / b_scale));
    let mut lin = DVector::zeros(n);
    lin[2 * m] = -0.5;
    problem.add_quad(quad, lin, 0.0)?;

    let mut ball = DMatrix::zeros(n, n);
    ball.view_mut((0, 0), (2 * m, 2 * m))
        .copy_from(&DMatrix::identity(2 * m, 2 * m));
    problem.add_quad(ball, DVector::zeros(n), -p_max)?;

    // rate floor: -2 Re{w^H A w̃} + w̃^H A w̃ + floor <= 0
    let lin_rate = &a * w_prev;
    let mut g = DVector::zeros(n);
    g.rows_mut(0, 2 * m).copy_from(&(-embed_vector(&lin_rate)));
    problem.add_linear(g, gain_prev + floor);

    let sol = solve_qcqp(&problem)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible(
            "rate floor unreachable under the power budget".into(),
        ));
    }
    if !super::usable_solution(&sol) {
        return Err(Error::Solver(format!(
            "beamformer update failed: {:?} ({}, violation {:.3e})",
            sol.status, sol.solver_status, sol.max_violation
        )));
    }

    let mut w = unembed_vector(&sol.x[..2 * m]);
    clamp_power(&mut w, p_max);
    // the linearized floor under-estimates the true gain, so this only
    // triggers on residual solver slack; the previous iterate stays valid
    let (w, status) = if hermitian_quad(&a, &w) >= floor * (1.0 - 1e-9) {
        (w, StepStatus::Solved)
    } else {
        (w_prev.clone(), StepStatus::KeptPrevious)
    };
    let si = hermitian_quad(&b, &w);
    Ok(StepResult {
        updated: w,
        surrogate_objective: si,
        true_objective: si,
        expansion_gap: relative_gap(taylor_lower_bound(&a, w_prev, w_prev), gain_prev),
        status,
    })
}
