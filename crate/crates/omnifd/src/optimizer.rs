//! Alternating optimization loops: rate maximization under an interference
//! cap, and interference minimization under a rate floor, for the
//! energy-splitting surface, the mode-switching surface, and the frozen
//! no-optimization baseline.
//!
//! Each outer iteration runs the beamformer update, then the surface update,
//! then (mode-switching only) the relaxed mode selection, and re-evaluates
//! the tracked objective. A block update is kept only if it does not regress
//! the objective and keeps its side constraint; a rejected update leaves the
//! previous block value in place, so the objective trace is monotone by
//! construction even under solver round-off.

use nalgebra::DVector;
use serde::Serialize;

use crate::channel::{ChannelSet, C64};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::steps::{
    beamforming_step_rate, beamforming_step_si, build_sdr_data, es_phase_step_rate,
    es_phase_step_si, mode_selection_rate, mode_selection_si, ms_phase_step_rate,
    ms_phase_step_si, StepStatus, SurfaceForms,
};
use crate::surface::{
    data_rate, dest_gain, effective_channels, si_power, Coefficients, EffectiveChannels,
    EsCoefficients, MsCoefficients,
};
use crate::units::wrap_phase;

/// Slack for accept/reject comparisons between successive objective values.
const ACCEPT_SLACK: f64 = 1e-12;

/// Which quantity the outer loop drives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// Maximize the destination rate; residual interference capped at
    /// `si_cap` watts (`f64::INFINITY` disables the cap).
    MaximizeRate { si_cap: f64 },
    /// Minimize the residual interference; destination rate floored at
    /// `rate_floor` bps/Hz.
    MinimizeSi { rate_floor: f64 },
}

/// Surface operating model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceMode {
    /// Energy splitting: joint amplitudes and phases.
    Es,
    /// Mode switching: binary reflect/refract roles plus phases.
    Ms,
    /// Surface present but frozen; only the beamformer moves.
    Wo,
}

/// Outer-loop parameters.
#[derive(Debug, Clone, Copy)]
pub struct OptConfig {
    pub objective: Objective,
    pub surface: SurfaceMode,
    /// Relative-change convergence threshold.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    /// Gaussian randomization draws per mode selection.
    pub randomizations: usize,
    pub seed: u64,
}

impl OptConfig {
    pub fn new(objective: Objective, surface: SurfaceMode) -> Self {
        Self {
            objective,
            surface,
            epsilon: 1e-5,
            max_outer_iters: 100,
            randomizations: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("need at least one outer iteration".into()));
        }
        match self.objective {
            Objective::MaximizeRate { si_cap } => {
                if si_cap <= 0.0 {
                    return Err(Error::Config("interference cap must be positive".into()));
                }
            }
            Objective::MinimizeSi { rate_floor } => {
                if rate_floor < 0.0 {
                    return Err(Error::Config("rate floor must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    Converged,
    MaxIters,
    Infeasible,
}

/// Converged (or terminal) state of one optimization run.
#[derive(Debug, Clone, Serialize)]
pub struct OptResult {
    pub w: DVector<C64>,
    pub coeffs: Coefficients,
    /// Destination rate in bps/Hz at the final point.
    pub rate: f64,
    /// Residual interference in watts at the final point.
    pub si: f64,
    /// Tracked objective per outer iteration, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub iters: usize,
    pub status: OptStatus,
    /// Largest relative mismatch observed between any step's surrogate and
    /// its true objective at the expansion point.
    pub max_expansion_gap: f64,
}

impl OptResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Initial beamformer and surface state.
#[derive(Debug, Clone)]
pub struct InitState {
    pub w: DVector<C64>,
    pub coeffs: Coefficients,
    /// False when no useful feasible starting beamformer exists.
    pub feasible: bool,
}

/// Phase choices that co-phase every element's refraction term at the
/// destination and anti-phase every reflection term against the direct
/// transmit→receive leak.
fn aligned_phases(channels: &ChannelSet) -> (Vec<f64>, Vec<f64>) {
    let l_cnt = channels.num_elements();
    let direct = channels.tx_to_rx[(0, 0)].conj();
    let mut reflect = Vec::with_capacity(l_cnt);
    let mut refract = Vec::with_capacity(l_cnt);
    for l in 0..l_cnt {
        let refr_term = channels.surface_to_dest[l].conj() * channels.tx_to_surface[(l, 0)];
        refract.push(wrap_phase(-refr_term.arg()));
        let refl_term = channels.surface_to_rx[(l, 0)].conj() * channels.tx_to_surface[(l, 0)];
        let target = if direct.norm() > 0.0 {
            std::f64::consts::PI + direct.arg()
        } else {
            std::f64::consts::PI
        };
        reflect.push(wrap_phase(target - refl_term.arg()));
    }
    (reflect, refract)
}

fn initial_coefficients(surface: SurfaceMode, channels: &ChannelSet) -> Coefficients {
    let l_cnt = channels.num_elements();
    let half = 1.0 / 2f64.sqrt();
    match surface {
        SurfaceMode::Es => {
            let (reflect, refract) = aligned_phases(channels);
            Coefficients::Es(
                EsCoefficients::new(vec![half; l_cnt], reflect, vec![half; l_cnt], refract)
                    .expect("uniform split is feasible"),
            )
        }
        SurfaceMode::Ms => {
            let (reflect, refract) = aligned_phases(channels);
            // alternate roles: odd elements (1-based) refract, even reflect
            let mode = (0..l_cnt).map(|i| i % 2 == 1).collect();
            Coefficients::Ms(
                MsCoefficients::new(mode, reflect, refract).expect("phases are wrapped"),
            )
        }
        SurfaceMode::Wo => Coefficients::Es(
            EsCoefficients::new(
                vec![half; l_cnt],
                vec![0.0; l_cnt],
                vec![half; l_cnt],
                vec![0.0; l_cnt],
            )
            .expect("uniform split is feasible"),
        ),
    }
}

/// Matched-filter beamformer scaled onto the interference cap (rate side) or
/// checked against the rate floor (interference side).
pub fn default_init(
    system: &SystemConfig,
    config: &OptConfig,
    channels: &ChannelSet,
) -> Result<InitState> {
    config.validate()?;
    let coeffs = initial_coefficients(config.surface, channels);
    let eff = effective_channels(channels, &coeffs)?;
    let m = channels.num_tx();

    if eff.dest.norm() == 0.0 {
        return Ok(InitState {
            w: DVector::zeros(m),
            coeffs,
            feasible: false,
        });
    }
    let mrt = eff.dest.adjoint() * C64::new((system.p_max / eff.dest.norm_squared()).sqrt(), 0.0);

    match config.objective {
        Objective::MaximizeRate { si_cap } => {
            let si_full = si_power(&eff, &mrt);
            if !si_cap.is_finite() || si_full <= si_cap {
                return Ok(InitState {
                    w: mrt,
                    coeffs,
                    feasible: true,
                });
            }
            // interference scales exactly quadratically in the beamformer, so
            // the largest admissible scale is closed-form
            let scale = (si_cap / si_full).sqrt();
            if scale > 0.0 {
                Ok(InitState {
                    w: mrt * C64::new(scale, 0.0),
                    coeffs,
                    feasible: true,
                })
            } else {
                Ok(InitState {
                    w: DVector::zeros(m),
                    coeffs,
                    feasible: false,
                })
            }
        }
        Objective::MinimizeSi { rate_floor } => {
            let rate = data_rate(&eff, &mrt, system.sigma_d2);
            if rate + 1e-9 < rate_floor {
                return Ok(InitState {
                    w: mrt,
                    coeffs,
                    feasible: false,
                });
            }
            Ok(InitState {
                w: mrt,
                coeffs,
                feasible: true,
            })
        }
    }
}

fn mix_seed(seed: u64, iter: usize) -> u64 {
    seed.wrapping_add((iter as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Scales the beamformer onto the interference cap. Interference is exactly
/// quadratic in `w`, so this restores feasibility deterministically; the
/// destination gain shrinks by the same factor.
fn scale_onto_cap(eff: &EffectiveChannels, w: &DVector<C64>, cap: f64) -> DVector<C64> {
    if !cap.is_finite() {
        return w.clone();
    }
    let si = si_power(eff, w);
    if si <= cap {
        return w.clone();
    }
    w * C64::new((cap / si).sqrt() * (1.0 - 1e-15), 0.0)
}

fn converged(epsilon: f64, old: f64, new: f64) -> bool {
    if new == 0.0 {
        return old == 0.0;
    }
    ((new - old).abs() / new.abs()) <= epsilon
}

/// Refraction-side re-initialization after a degenerate expansion point:
/// re-aligns the refraction phases and restores refraction amplitude within
/// the remaining per-element budget. Reflection coefficients are untouched,
/// so the interference state is preserved.
fn reinit_refraction(coeffs: &Coefficients, channels: &ChannelSet) -> Coefficients {
    let (_, refract) = aligned_phases(channels);
    match coeffs {
        Coefficients::Es(es) => {
            let mut es = es.clone();
            for l in 0..es.len() {
                let budget = (1.0 - es.reflect_amp[l].powi(2)).max(0.0).sqrt();
                es.refract_amp[l] = budget.min(1.0 / 2f64.sqrt()).max(budget * 0.5);
                es.refract_phase[l] = refract[l];
            }
            Coefficients::Es(es)
        }
        Coefficients::Ms(ms) => {
            let mut ms = ms.clone();
            ms.refract_phase = refract;
            Coefficients::Ms(ms)
        }
    }
}

struct LoopState {
    w: DVector<C64>,
    coeffs: Coefficients,
    eff: EffectiveChannels,
    max_gap: f64,
}

impl LoopState {
    fn refresh(&mut self, channels: &ChannelSet) -> Result<()> {
        self.eff = effective_channels(channels, &self.coeffs)?;
        Ok(())
    }

    fn track_gap(&mut self, gap: f64) {
        if gap > self.max_gap {
            self.max_gap = gap;
        }
    }
}

fn finish(
    state: LoopState,
    sigma_d2: f64,
    trace: Vec<f64>,
    iters: usize,
    status: OptStatus,
) -> OptResult {
    let rate = data_rate(&state.eff, &state.w, sigma_d2);
    let si = si_power(&state.eff, &state.w);
    OptResult {
        w: state.w,
        coeffs: state.coeffs,
        rate,
        si,
        objective_trace: trace,
        iters,
        status,
        max_expansion_gap: state.max_gap,
    }
}

/// Rate maximization under an interference cap.
///
/// Loop order per outer iteration: beamformer update, surface update
/// (energy-splitting amplitudes/phases or mode-switching phases), then for
/// the mode-switching surface one relaxed mode selection, then the
/// convergence test on the relative rate change.
pub fn maximize_rate(
    system: &SystemConfig,
    config: &OptConfig,
    channels: &ChannelSet,
) -> Result<OptResult> {
    let Objective::MaximizeRate { si_cap } = config.objective else {
        return Err(Error::Config(
            "maximize_rate requires a rate objective".into(),
        ));
    };
    let init = default_init(system, config, channels)?;
    let mut state = LoopState {
        eff: effective_channels(channels, &init.coeffs)?,
        w: init.w,
        coeffs: init.coeffs,
        max_gap: 0.0,
    };
    let mut trace = vec![data_rate(&state.eff, &state.w, system.sigma_d2)];
    if !init.feasible {
        return Ok(finish(state, system.sigma_d2, trace, 0, OptStatus::Infeasible));
    }

    for iter in 1..=config.max_outer_iters {
        // beamformer block
        match beamforming_step_rate(&state.eff, &state.w, system.p_max, si_cap) {
            Ok(step) => {
                state.track_gap(step.expansion_gap);
                match step.status {
                    StepStatus::Degenerate => {
                        let re = default_init(system, config, channels)?;
                        if re.feasible && dest_gain(&state.eff, &re.w) > dest_gain(&state.eff, &state.w)
                        {
                            state.w = re.w;
                        }
                    }
                    _ => {
                        if dest_gain(&state.eff, &step.updated)
                            >= dest_gain(&state.eff, &state.w) * (1.0 - ACCEPT_SLACK)
                        {
                            state.w = step.updated;
                        }
                    }
                }
            }
            Err(Error::Infeasible(_)) => {
                return Ok(finish(
                    state,
                    system.sigma_d2,
                    trace,
                    iter,
                    OptStatus::Infeasible,
                ))
            }
            Err(e) => return Err(e),
        }

        // surface block; the frozen baseline keeps its coefficients
        match (&config.surface, &state.coeffs) {
            (SurfaceMode::Wo, _) => {}
            (_, Coefficients::Es(es)) => {
                match es_phase_step_rate(channels, &state.w, es, si_cap) {
                    Ok(step) => {
                        state.track_gap(step.expansion_gap);
                        match step.status {
                            StepStatus::Degenerate => {
                                state.coeffs = reinit_refraction(&state.coeffs, channels);
                                state.refresh(channels)?;
                            }
                            _ => {
                                let prev = dest_gain(&state.eff, &state.w);
                                let cand = Coefficients::Es(step.updated);
                                let cand_eff = effective_channels(channels, &cand)?;
                                let cand_w = scale_onto_cap(&cand_eff, &state.w, si_cap);
                                if dest_gain(&cand_eff, &cand_w) >= prev * (1.0 - ACCEPT_SLACK) {
                                    state.coeffs = cand;
                                    state.eff = cand_eff;
                                    state.w = cand_w;
                                }
                            }
                        }
                    }
                    Err(Error::Infeasible(_)) => {
                        return Ok(finish(
                            state,
                            system.sigma_d2,
                            trace,
                            iter,
                            OptStatus::Infeasible,
                        ))
                    }
                    Err(e) => return Err(e),
                }
            }
            (_, Coefficients::Ms(ms)) => {
                match ms_phase_step_rate(channels, &state.w, ms, si_cap) {
                    Ok(step) => {
                        state.track_gap(step.expansion_gap);
                        match step.status {
                            StepStatus::Degenerate => {
                                state.coeffs = reinit_refraction(&state.coeffs, channels);
                                state.refresh(channels)?;
                            }
                            _ => {
                                let prev = dest_gain(&state.eff, &state.w);
                                let cand = Coefficients::Ms(step.updated);
                                let cand_eff = effective_channels(channels, &cand)?;
                                let cand_w = scale_onto_cap(&cand_eff, &state.w, si_cap);
                                if dest_gain(&cand_eff, &cand_w) >= prev * (1.0 - ACCEPT_SLACK) {
                                    state.coeffs = cand;
                                    state.eff = cand_eff;
                                    state.w = cand_w;
                                }
                            }
                        }
                    }
                    Err(Error::Infeasible(_)) => {
                        return Ok(finish(
                            state,
                            system.sigma_d2,
                            trace,
                            iter,
                            OptStatus::Infeasible,
                        ))
                    }
                    Err(e) => return Err(e),
                }

                // mode-selection block
                let Coefficients::Ms(ms) = &state.coeffs else {
                    unreachable!()
                };
                let sdr = build_sdr_data(channels, &state.w, ms)?;
                match mode_selection_rate(&sdr, si_cap, config.randomizations, mix_seed(config.seed, iter)) {
                    Ok(selection) => {
                        let prev = dest_gain(&state.eff, &state.w);
                        if selection.feasible {
                            let mut ms = ms.clone();
                            ms.mode = selection.mode;
                            let cand = Coefficients::Ms(ms);
                            let cand_eff = effective_channels(channels, &cand)?;
                            let cand_w = scale_onto_cap(&cand_eff, &state.w, si_cap);
                            if dest_gain(&cand_eff, &cand_w) >= prev * (1.0 - ACCEPT_SLACK) {
                                state.coeffs = cand;
                                state.eff = cand_eff;
                                state.w = cand_w;
                            }
                        }
                    }
                    Err(Error::Infeasible(_)) => {
                        return Ok(finish(
                            state,
                            system.sigma_d2,
                            trace,
                            iter,
                            OptStatus::Infeasible,
                        ))
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let rate = data_rate(&state.eff, &state.w, system.sigma_d2);
        let prev = *trace.last().expect("trace starts nonempty");
        trace.push(rate);
        if converged(config.epsilon, prev, rate) {
            return Ok(finish(state, system.sigma_d2, trace, iter, OptStatus::Converged));
        }
    }
    let iters = config.max_outer_iters;
    Ok(finish(state, system.sigma_d2, trace, iters, OptStatus::MaxIters))
}

/// Interference minimization under a rate floor. Same loop shape as
/// [`maximize_rate`] with the roles of the two metrics swapped.
pub fn minimize_si(
    system: &SystemConfig,
    config: &OptConfig,
    channels: &ChannelSet,
) -> Result<OptResult> {
    let Objective::MinimizeSi { rate_floor } = config.objective else {
        return Err(Error::Config(
            "minimize_si requires an interference objective".into(),
        ));
    };
    let floor = (2f64.powf(rate_floor) - 1.0) * system.sigma_d2;
    let init = default_init(system, config, channels)?;
    let mut state = LoopState {
        eff: effective_channels(channels, &init.coeffs)?,
        w: init.w,
        coeffs: init.coeffs,
        max_gap: 0.0,
    };
    let mut trace = vec![si_power(&state.eff, &state.w)];
    if !init.feasible {
        return Ok(finish(state, system.sigma_d2, trace, 0, OptStatus::Infeasible));
    }

    for iter in 1..=config.max_outer_iters {
        match beamforming_step_si(&state.eff, &state.w, system.p_max, rate_floor, system.sigma_d2)
        {
            Ok(step) => {
                state.track_gap(step.expansion_gap);
                if si_power(&state.eff, &step.updated)
                    <= si_power(&state.eff, &state.w) * (1.0 + ACCEPT_SLACK)
                {
                    state.w = step.updated;
                }
            }
            Err(Error::Infeasible(_)) => {
                return Ok(finish(
                    state,
                    system.sigma_d2,
                    trace,
                    iter,
                    OptStatus::Infeasible,
                ))
            }
            Err(e) => return Err(e),
        }

        match (&config.surface, &state.coeffs) {
            (SurfaceMode::Wo, _) => {}
            (_, Coefficients::Es(es)) => {
                match es_phase_step_si(channels, &state.w, es, rate_floor, system.sigma_d2) {
                    Ok(step) => {
                        state.track_gap(step.expansion_gap);
                        let prev_si = si_power(&state.eff, &state.w);
                        let cand = Coefficients::Es(step.updated);
                        let cand_eff = effective_channels(channels, &cand)?;
                        let cand_si = si_power(&cand_eff, &state.w);
                        let cand_rate = dest_gain(&cand_eff, &state.w);
                        if cand_si <= prev_si * (1.0 + ACCEPT_SLACK)
                            && (floor <= 0.0 || cand_rate >= floor * (1.0 - 1e-9))
                        {
                            state.coeffs = cand;
                            state.eff = cand_eff;
                        }
                    }
                    Err(Error::Infeasible(_)) => {
                        return Ok(finish(
                            state,
                            system.sigma_d2,
                            trace,
                            iter,
                            OptStatus::Infeasible,
                        ))
                    }
                    Err(e) => return Err(e),
                }
            }
            (_, Coefficients::Ms(ms)) => {
                match ms_phase_step_si(channels, &state.w, ms, rate_floor, system.sigma_d2) {
                    Ok(step) => {
                        state.track_gap(step.expansion_gap);
                        let prev_si = si_power(&state.eff, &state.w);
                        let cand = Coefficients::Ms(step.updated);
                        let cand_eff = effective_channels(channels, &cand)?;
                        let cand_si = si_power(&cand_eff, &state.w);
                        let cand_rate = dest_gain(&cand_eff, &state.w);
                        if cand_si <= prev_si * (1.0 + ACCEPT_SLACK)
                            && (floor <= 0.0 || cand_rate >= floor * (1.0 - 1e-9))
                        {
                            state.coeffs = cand;
                            state.eff = cand_eff;
                        }
                    }
                    Err(Error::Infeasible(_)) => {
                        return Ok(finish(
                            state,
                            system.sigma_d2,
                            trace,
                            iter,
                            OptStatus::Infeasible,
                        ))
                    }
                    Err(e) => return Err(e),
                }

                let Coefficients::Ms(ms) = &state.coeffs else {
                    unreachable!()
                };
                let sdr = build_sdr_data(channels, &state.w, ms)?;
                match mode_selection_si(&sdr, floor, config.randomizations, mix_seed(config.seed, iter)) {
                    Ok(selection) => {
                        let prev_si = si_power(&state.eff, &state.w);
                        if selection.feasible
                            && selection.si_value <= prev_si * (1.0 + ACCEPT_SLACK)
                        {
                            let mut ms = ms.clone();
                            ms.mode = selection.mode;
                            state.coeffs = Coefficients::Ms(ms);
                            state.refresh(channels)?;
                        }
                    }
                    Err(Error::Infeasible(_)) => {
                        return Ok(finish(
                            state,
                            system.sigma_d2,
                            trace,
                            iter,
                            OptStatus::Infeasible,
                        ))
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let si = si_power(&state.eff, &state.w);
        let prev = *trace.last().expect("trace starts nonempty");
        trace.push(si);
        if converged(config.epsilon, prev, si) {
            return Ok(finish(state, system.sigma_d2, trace, iter, OptStatus::Converged));
        }
    }
    let iters = config.max_outer_iters;
    Ok(finish(state, system.sigma_d2, trace, iters, OptStatus::MaxIters))
}

/// Helper exposing the interference quantities of a coefficient state; used
/// by callers that need consistency checks against the step-level forms.
pub fn surface_forms(channels: &ChannelSet, w: &DVector<C64>) -> SurfaceForms {
    SurfaceForms::new(channels, w)
}
