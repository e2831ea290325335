//! Convex conic backend.
//!
//! Every convexified subproblem in this crate reduces to one of two shapes:
//! a linear objective over convex quadratic and linear constraints (a QCQP,
//! second-order-cone representable), or a small semidefinite program with one
//! PSD matrix variable, diagonal equalities and trace inequalities. Both are
//! assembled here into a standard-form cone program and handed to an
//! interior-point solver.
//!
//! Problem data arrives pre-embedded as real (`[Re; Im]` stacking, see
//! [`crate::linalg`]). Rows are normalized by their coefficient scale before
//! the solve, so feasibility tolerances are scale-invariant; reported
//! violations refer to the normalized rows.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, psd_factor};

/// Feasibility tolerance on normalized constraints required of an `Optimal`
/// solution.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Relative eigenvalue tolerance for accepting a quadratic form as PSD.
pub const CONVEXITY_TOL: f64 = 1e-8;
/// Interior-point iteration cap.
pub const MAX_IP_ITERS: u32 = 200;

/// `x'Qx + 2 g'x + offset ≤ 0` with `Q` symmetric PSD; `Q = None` is a plain
/// linear inequality.
#[derive(Debug, Clone, Serialize)]
pub struct QuadConstraint {
    pub quad: Option<DMatrix<f64>>,
    pub linear: DVector<f64>,
    pub offset: f64,
}

/// `coeffs · x = rhs`.
#[derive(Debug, Clone, Serialize)]
pub struct LinearEquality {
    pub coeffs: DVector<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TraceSense {
    LessEq,
    GreaterEq,
}

/// `Tr(matrix · X) {≤, ≥} bound` on the PSD variable.
#[derive(Debug, Clone, Serialize)]
pub struct TraceConstraint {
    pub matrix: DMatrix<f64>,
    pub sense: TraceSense,
    pub bound: f64,
}

/// One symmetric PSD matrix variable with a linear objective,
/// per-entry diagonal equalities, and trace inequalities.
#[derive(Debug, Clone, Serialize)]
pub struct PsdBlock {
    pub dim: usize,
    /// Minimize `Tr(objective · X)`.
    pub objective: DMatrix<f64>,
    /// `diag(X) = diag_target`.
    pub diag_target: DVector<f64>,
    pub trace_constraints: Vec<TraceConstraint>,
}

/// A convex cone program over a real decision vector, or over one PSD matrix
/// variable. The objective is always minimized.
#[derive(Debug, Clone, Serialize)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub objective: DVector<f64>,
    pub quad_constraints: Vec<QuadConstraint>,
    pub eq_constraints: Vec<LinearEquality>,
    pub psd: Option<PsdBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIters,
    NumericalFailure,
}

/// Primal solution of a [`ConicProblem`]. For SDP problems `x` holds the
/// scaled upper-triangle vectorization of the matrix variable.
#[derive(Debug, Clone, Serialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    /// Raw interior-point status string, for diagnostics.
    pub solver_status: String,
}

impl ConicProblem {
    /// Starts a vector-variable problem minimizing `objective · x`.
    pub fn minimize(objective: DVector<f64>) -> Self {
        Self {
            num_vars: objective.len(),
            objective,
            quad_constraints: Vec::new(),
            eq_constraints: Vec::new(),
            psd: None,
        }
    }

    /// Wraps a PSD block as a problem of its own.
    pub fn semidefinite(block: PsdBlock) -> Self {
        Self {
            num_vars: 0,
            objective: DVector::zeros(0),
            quad_constraints: Vec::new(),
            eq_constraints: Vec::new(),
            psd: Some(block),
        }
    }

    /// Adds `x'Qx + 2 g'x + offset ≤ 0`, rejecting non-PSD `Q`.
    pub fn add_quad(&mut self, quad: DMatrix<f64>, linear: DVector<f64>, offset: f64) -> Result<()> {
        if quad.nrows() != self.num_vars || linear.len() != self.num_vars {
            return Err(Error::Dimension("constraint size mismatch".into()));
        }
        let scale = quad.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        if scale > 0.0 && min_eigenvalue(&quad) < -CONVEXITY_TOL * scale {
            return Err(Error::Solver(
                "quadratic constraint is not positive semidefinite".into(),
            ));
        }
        self.quad_constraints.push(QuadConstraint {
            quad: Some(quad),
            linear,
            offset,
        });
        Ok(())
    }

    /// Adds the linear inequality `2 g'x + offset ≤ 0`.
    pub fn add_linear(&mut self, linear: DVector<f64>, offset: f64) {
        self.quad_constraints.push(QuadConstraint {
            quad: None,
            linear,
            offset,
        });
    }

    /// Adds `coeffs · x = rhs`.
    pub fn add_equality(&mut self, coeffs: DVector<f64>, rhs: f64) {
        self.eq_constraints.push(LinearEquality { coeffs, rhs });
    }

    /// Plain-text interchange dump for cross-checking against other solvers.
    pub fn to_interchange_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        if let Some(psd) = &self.psd {
            writeln!(out, "sdp dim {}", psd.dim).unwrap();
            writeln!(out, "minimize trace-objective").unwrap();
            for row in psd.objective.row_iter() {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(out, "  {}", vals.join(" ")).unwrap();
            }
            writeln!(out, "diag-target {:?}", psd.diag_target.as_slice()).unwrap();
            for tc in &psd.trace_constraints {
                let sense = match tc.sense {
                    TraceSense::LessEq => "<=",
                    TraceSense::GreaterEq => ">=",
                };
                writeln!(out, "trace {} {:.17e}", sense, tc.bound).unwrap();
                for row in tc.matrix.row_iter() {
                    let vals: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                    writeln!(out, "  {}", vals.join(" ")).unwrap();
                }
            }
            return out;
        }
        writeln!(out, "qcqp vars {}", self.num_vars).unwrap();
        let obj: Vec<String> = self.objective.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "minimize {}", obj.join(" ")).unwrap();
        for eq in &self.eq_constraints {
            let c: Vec<String> = eq.coeffs.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "eq {} = {:.17e}", c.join(" "), eq.rhs).unwrap();
        }
        for qc in &self.quad_constraints {
            let g: Vec<String> = qc.linear.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "quad offset {:.17e} linear {}", qc.offset, g.join(" ")).unwrap();
            if let Some(q) = &qc.quad {
                for row in q.row_iter() {
                    let vals: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                    writeln!(out, "  {}", vals.join(" ")).unwrap();
                }
            }
        }
        out
    }

    /// JSON dump of the full problem data.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

impl ConicSolution {
    /// Reconstructs the PSD matrix variable of an SDP solution.
    pub fn psd_matrix(&self, dim: usize) -> DMatrix<f64> {
        smat(&self.x, dim)
    }
}

/// Scaled upper-triangle vectorization: column-major upper triangle with
/// off-diagonal entries multiplied by √2, so `Tr(AB) = svec(A)·svec(B)`.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                let e = v[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = e;
                m[(j, i)] = e;
            }
            k += 1;
        }
    }
    m
}

/// Column-compressed triplet accumulator.
struct CscBuilder {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CscBuilder {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    fn push(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.entries.push((col, row, value));
        }
    }

    fn build(mut self) -> CscMatrix<f64> {
        self.entries.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut colptr = vec![0usize; self.cols + 1];
        let mut rowval = Vec::with_capacity(self.entries.len());
        let mut nzval = Vec::with_capacity(self.entries.len());
        for &(col, row, value) in &self.entries {
            colptr[col + 1] += 1;
            rowval.push(row);
            nzval.push(value);
        }
        for c in 0..self.cols {
            colptr[c + 1] += colptr[c];
        }
        CscMatrix::new(self.rows, self.cols, colptr, rowval, nzval)
    }
}

fn solver_settings() -> clarabel::solver::DefaultSettings<f64> {
    DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(MAX_IP_ITERS)
        .tol_gap_abs(1e-11)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-9)
        .build()
        .expect("static solver settings")
}

fn map_status(status: SolverStatus, max_violation: f64) -> SolveStatus {
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            if max_violation <= FEASIBILITY_TOL {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalFailure
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIters,
        _ => SolveStatus::NumericalFailure,
    }
}

fn constraint_scale(values: impl Iterator<Item = f64>) -> f64 {
    let s = values.fold(0.0f64, |acc, v| acc.max(v.abs()));
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Solves a vector-variable problem: linear objective, convex quadratic and
/// linear inequality constraints, linear equalities.
pub fn solve_qcqp(problem: &ConicProblem) -> Result<ConicSolution> {
    if problem.psd.is_some() {
        return Err(Error::Solver(
            "problem carries a PSD variable; use solve_sdp".into(),
        ));
    }
    let n = problem.num_vars;

    // Pre-factor the quadratic rows and work out per-constraint scales.
    struct ScaledQuad {
        factor: Option<DMatrix<f64>>, // R with R'R = Q / scale
        linear: DVector<f64>,
        offset: f64,
        scale: f64,
    }
    let mut quads = Vec::with_capacity(problem.quad_constraints.len());
    for qc in &problem.quad_constraints {
        let scale = constraint_scale(
            qc.quad
                .iter()
                .flat_map(|q| q.iter().cloned())
                .chain(qc.linear.iter().map(|g| 2.0 * g))
                .chain(std::iter::once(qc.offset)),
        );
        let factor = match &qc.quad {
            None => None,
            Some(q) => {
                let scaled = q / scale;
                let diagonal = scaled
                    .iter()
                    .enumerate()
                    .all(|(k, &v)| v == 0.0 || k % (n + 1) == 0);
                let r = if diagonal {
                    // common case: per-element selector constraints
                    let kept: Vec<usize> =
                        (0..n).filter(|&i| scaled[(i, i)] > 0.0).collect();
                    let mut r = DMatrix::zeros(kept.len(), n);
                    for (row, &i) in kept.iter().enumerate() {
                        r[(row, i)] = scaled[(i, i)].sqrt();
                    }
                    r
                } else {
                    psd_factor(&scaled)
                };
                if r.nrows() == 0 {
                    None
                } else {
                    Some(r)
                }
            }
        };
        quads.push(ScaledQuad {
            factor,
            linear: &qc.linear / scale,
            offset: qc.offset / scale,
            scale,
        });
    }

    let n_eq = problem.eq_constraints.len();
    let n_lin = quads.iter().filter(|q| q.factor.is_none()).count();
    let soc_rows: usize = quads
        .iter()
        .filter_map(|q| q.factor.as_ref().map(|r| r.nrows() + 2))
        .sum();
    let total_rows = n_eq + n_lin + soc_rows;

    let mut a = CscBuilder::new(total_rows, n);
    let mut b = vec![0.0; total_rows];
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut row = 0;

    let mut eq_scales = Vec::with_capacity(n_eq);
    for eq in &problem.eq_constraints {
        let scale = constraint_scale(eq.coeffs.iter().cloned().chain(std::iter::once(eq.rhs)));
        for (j, &c) in eq.coeffs.iter().enumerate() {
            a.push(row, j, c / scale);
        }
        b[row] = eq.rhs / scale;
        eq_scales.push(scale);
        row += 1;
    }
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }

    // linear inequalities: s = -offset - 2 g'x >= 0
    for q in quads.iter().filter(|q| q.factor.is_none()) {
        for (j, &g) in q.linear.iter().enumerate() {
            a.push(row, j, 2.0 * g);
        }
        b[row] = -q.offset;
        row += 1;
    }
    if n_lin > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_lin));
    }

    // quadratics: ||u||^2 <= s  <=>  ||[2u; s-1]|| <= s+1 with
    // u = Rx, s = -offset - 2 g'x
    for q in &quads {
        let Some(r) = &q.factor else { continue };
        for (j, &g) in q.linear.iter().enumerate() {
            a.push(row, j, 2.0 * g);
        }
        b[row] = 1.0 - q.offset;
        row += 1;
        for i in 0..r.nrows() {
            for j in 0..n {
                a.push(row, j, -2.0 * r[(i, j)]);
            }
            row += 1;
        }
        for (j, &g) in q.linear.iter().enumerate() {
            a.push(row, j, 2.0 * g);
        }
        b[row] = -q.offset - 1.0;
        row += 1;
        cones.push(SupportedConeT::SecondOrderConeT(r.nrows() + 2));
    }

    let obj_scale = constraint_scale(problem.objective.iter().cloned());
    let q_vec: Vec<f64> = problem.objective.iter().map(|v| v / obj_scale).collect();
    let p = CscMatrix::zeros((n, n));
    let a = a.build();

    let mut solver = DefaultSolver::new(&p, &q_vec, &a, &b, &cones, solver_settings())
        .map_err(|e| Error::Solver(format!("solver setup failed: {e:?}")))?;
    solver.solve();

    let x: Vec<f64> = solver.solution.x.clone();
    let xv = DVector::from_column_slice(&x);

    // violations on the normalized rows
    let mut max_violation = 0.0f64;
    for (eq, scale) in problem.eq_constraints.iter().zip(&eq_scales) {
        max_violation = max_violation.max((eq.coeffs.dot(&xv) - eq.rhs).abs() / scale);
    }
    for q in &quads {
        let quad_term = match &q.factor {
            Some(r) => (r * &xv).norm_squared(),
            None => 0.0,
        };
        let v = quad_term + 2.0 * q.linear.dot(&xv) + q.offset;
        max_violation = max_violation.max(v.max(0.0));
    }
    let _ = &quads.iter().map(|q| q.scale).collect::<Vec<_>>(); // scales retained for diagnostics

    let status = map_status(solver.solution.status, max_violation);
    let objective = problem.objective.dot(&xv);
    Ok(ConicSolution {
        status,
        x,
        objective,
        max_violation,
        solver_status: format!("{:?}", solver.solution.status),
    })
}

/// Solves the one-PSD-variable shape: minimize `Tr(CX)` subject to
/// `diag(X) = d`, trace inequalities, `X ⪰ 0`.
pub fn solve_sdp(problem: &ConicProblem) -> Result<ConicSolution> {
    let Some(psd) = &problem.psd else {
        return Err(Error::Solver("problem has no PSD variable".into()));
    };
    let d = psd.dim;
    if psd.objective.nrows() != d || psd.diag_target.len() != d {
        return Err(Error::Dimension("PSD block size mismatch".into()));
    }
    let k = d * (d + 1) / 2;
    let n_tr = psd.trace_constraints.len();
    let total_rows = d + n_tr + k;

    let mut a = CscBuilder::new(total_rows, k);
    let mut b = vec![0.0; total_rows];
    let mut row = 0;

    // diag(X) = target; the svec index of (i, i) is i(i+1)/2 + i
    for i in 0..d {
        a.push(row, i * (i + 1) / 2 + i, 1.0);
        b[row] = psd.diag_target[i];
        row += 1;
    }

    let mut tr_scales = Vec::with_capacity(n_tr);
    for tc in &psd.trace_constraints {
        let scale = constraint_scale(
            tc.matrix
                .iter()
                .cloned()
                .chain(std::iter::once(tc.bound)),
        );
        let sign = match tc.sense {
            TraceSense::LessEq => 1.0,
            TraceSense::GreaterEq => -1.0,
        };
        for (j, v) in svec(&tc.matrix).iter().enumerate() {
            a.push(row, j, sign * v / scale);
        }
        b[row] = sign * tc.bound / scale;
        tr_scales.push(scale);
        row += 1;
    }

    // X psd: s = x
    for j in 0..k {
        a.push(row + j, j, -1.0);
    }

    let mut cones: Vec<SupportedConeT<f64>> = vec![SupportedConeT::ZeroConeT(d)];
    if n_tr > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_tr));
    }
    cones.push(SupportedConeT::PSDTriangleConeT(d));

    let obj_scale = constraint_scale(psd.objective.iter().cloned());
    let q_vec: Vec<f64> = svec(&psd.objective).iter().map(|v| v / obj_scale).collect();
    let p = CscMatrix::zeros((k, k));
    let a = a.build();

    let mut solver = DefaultSolver::new(&p, &q_vec, &a, &b, &cones, solver_settings())
        .map_err(|e| Error::Solver(format!("solver setup failed: {e:?}")))?;
    solver.solve();

    let x: Vec<f64> = solver.solution.x.clone();
    let matrix = smat(&x, d);

    let mut max_violation = 0.0f64;
    for i in 0..d {
        max_violation = max_violation.max((matrix[(i, i)] - psd.diag_target[i]).abs());
    }
    for (tc, scale) in psd.trace_constraints.iter().zip(&tr_scales) {
        let tr = (&tc.matrix * &matrix).trace();
        let v = match tc.sense {
            TraceSense::LessEq => tr - tc.bound,
            TraceSense::GreaterEq => tc.bound - tr,
        };
        max_violation = max_violation.max(v.max(0.0) / scale);
    }
    let lambda_min = min_eigenvalue(&matrix);
    let psd_scale = matrix.iter().map(|v| v.abs()).fold(1.0f64, f64::max);
    max_violation = max_violation.max((-lambda_min).max(0.0) / psd_scale);

    let status = map_status(solver.solution.status, max_violation);
    let objective = (&psd.objective * &matrix).trace();
    Ok(ConicSolution {
        status,
        x,
        objective,
        max_violation,
        solver_status: format!("{:?}", solver.solution.status),
    })
}
