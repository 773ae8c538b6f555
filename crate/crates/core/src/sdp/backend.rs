//! Solver backends. The shipped backend lowers a [`ConicProgram`] onto the
//! Clarabel interior-point solver (`min qᵀx  s.t.  Ax + s = b,  s ∈ K`).

use std::collections::BTreeMap;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::program::{
    BlockValue, ConicProgram, Equality, ScalarExpr, ScalarTerm, SymExpr, SymTerm, VarKind,
};
use super::SolveStatus;

// Keep the system BLAS/LAPACK linked for the PSD cone kernels.
use openblas_src as _;

/// Solver tolerances. The defaults are 1e-10 on feasibility and duality gap;
/// at 1e-8 the Schur-complement slack of reweighted iterates can exceed the
/// lossless tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feasibility: f64,
    pub gap_rel: f64,
    pub gap_abs: f64,
    pub max_iter: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { feasibility: 1e-10, gap_rel: 1e-10, gap_abs: 1e-10, max_iter: 500 }
    }
}

impl Tolerances {
    /// Reads `COVSTEER_TOL_FEAS`, `COVSTEER_TOL_GAP_REL`, `COVSTEER_TOL_GAP_ABS`
    /// and `COVSTEER_MAX_ITER`, keeping defaults for unset or malformed values.
    pub fn from_env() -> Self {
        fn read<T: std::str::FromStr>(key: &str) -> Option<T> {
            std::env::var(key).ok()?.trim().parse().ok()
        }
        let d = Tolerances::default();
        Tolerances {
            feasibility: read("COVSTEER_TOL_FEAS").unwrap_or(d.feasibility),
            gap_rel: read("COVSTEER_TOL_GAP_REL").unwrap_or(d.gap_rel),
            gap_abs: read("COVSTEER_TOL_GAP_ABS").unwrap_or(d.gap_abs),
            max_iter: read("COVSTEER_MAX_ITER").unwrap_or(d.max_iter),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicResult {
    pub status: SolveStatus,
    pub objective: f64,
    /// Block values in declaration order; `None` unless a primal point exists.
    pub values: Option<Vec<BlockValue>>,
    pub iterations: u32,
    pub solve_time: f64,
}

/// Anything that can solve a [`ConicProgram`] with PSD, SOC and equality
/// constraints. A backend instance is owned by one worker at a time.
pub trait SolverBackend {
    fn name(&self) -> &str;
    fn tolerances(&self) -> Tolerances;
    fn solve_conic(&mut self, program: &ConicProgram) -> ConicResult;
}

#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub tol: Tolerances,
}

impl ClarabelBackend {
    pub fn new(tol: Tolerances) -> Self {
        ClarabelBackend { tol }
    }
}

/// Sparse linear row over the flattened unknowns.
type Row = BTreeMap<usize, f64>;

fn add(row: &mut Row, col: usize, v: f64) {
    if v != 0.0 {
        *row.entry(col).or_insert(0.0) += v;
    }
}

/// Column-major upper-triangle position of `(i, j)`, `i ≤ j`.
fn tri_index(i: usize, j: usize) -> usize {
    j * (j + 1) / 2 + i
}

struct Lowering<'a> {
    program: &'a ConicProgram,
    offsets: Vec<usize>,
}

impl<'a> Lowering<'a> {
    fn new(program: &'a ConicProgram) -> Self {
        let mut offsets = Vec::with_capacity(program.variables.len());
        let mut acc = 0;
        for v in &program.variables {
            offsets.push(acc);
            acc += v.kind.len();
        }
        Lowering { program, offsets }
    }

    fn scalar_row(&self, e: &ScalarExpr) -> Row {
        let mut row = Row::new();
        for t in &e.terms {
            match t {
                ScalarTerm::Inner { var, coeff } => {
                    let off = self.offsets[var.index()];
                    let d = coeff.nrows();
                    for j in 0..d {
                        for i in 0..=j {
                            let c = if i == j { coeff[(i, i)] } else { coeff[(i, j)] + coeff[(j, i)] };
                            add(&mut row, off + tri_index(i, j), c);
                        }
                    }
                }
                ScalarTerm::Linear { var, coeff } => add(&mut row, self.offsets[var.index()], *coeff),
            }
        }
        row
    }

    /// Linear part of entry `(a, b)` of a symmetric expression.
    fn sym_entry_row(&self, e: &SymExpr, a: usize, b: usize) -> Row {
        let mut row = Row::new();
        for t in &e.terms {
            match t {
                SymTerm::Congruence { var, left, scale } => {
                    let off = self.offsets[var.index()];
                    let d = left.ncols();
                    for j in 0..d {
                        for i in 0..=j {
                            let c = if i == j {
                                left[(a, i)] * left[(b, i)]
                            } else {
                                left[(a, i)] * left[(b, j)] + left[(a, j)] * left[(b, i)]
                            };
                            add(&mut row, off + tri_index(i, j), scale * c);
                        }
                    }
                }
                SymTerm::Scaled { var, coeff } => {
                    add(&mut row, self.offsets[var.index()], coeff[(a, b)]);
                }
            }
        }
        row
    }

    fn unpack(&self, x: &[f64]) -> Vec<BlockValue> {
        self.program
            .variables
            .iter()
            .zip(&self.offsets)
            .map(|(v, &off)| match v.kind {
                VarKind::Scalar => BlockValue::Scalar(x[off]),
                VarKind::Symmetric(d) => {
                    let mut m = DMatrix::zeros(d, d);
                    for j in 0..d {
                        for i in 0..=j {
                            let val = x[off + tri_index(i, j)];
                            m[(i, j)] = val;
                            m[(j, i)] = val;
                        }
                    }
                    BlockValue::Matrix(m)
                }
            })
            .collect()
    }
}

struct StandardForm {
    q: Vec<f64>,
    a_rows: Vec<Row>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

fn lower(l: &Lowering<'_>) -> StandardForm {
    let p = l.program;
    let nx = p.num_entries();
    let mut q = vec![0.0; nx];
    for (c, v) in l.scalar_row(&p.objective) {
        q[c] += v;
    }

    let mut a_rows = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();

    // Equalities: lin(x) + const = 0  →  lin(x) + s = −const, s ∈ {0}.
    let mut zero_rows = 0;
    for eq in &p.equalities {
        match eq {
            Equality::Matrix(e) => {
                for bcol in 0..e.dim {
                    for a in 0..=bcol {
                        a_rows.push(l.sym_entry_row(e, a, bcol));
                        b.push(-e.constant[(a, bcol)]);
                        zero_rows += 1;
                    }
                }
            }
            Equality::Scalar(e) => {
                a_rows.push(l.scalar_row(e));
                b.push(-e.constant);
                zero_rows += 1;
            }
        }
    }
    if zero_rows > 0 {
        cones.push(SupportedConeT::ZeroConeT(zero_rows));
    }

    // PSD: s = svec(expr) = svec(const) + svec(lin x)  →  A = −svec(lin), b = svec(const).
    for e in &p.psd {
        for bcol in 0..e.dim {
            for a in 0..=bcol {
                let scale = if a == bcol { 1.0 } else { std::f64::consts::SQRT_2 };
                let row: Row =
                    l.sym_entry_row(e, a, bcol).into_iter().map(|(c, v)| (c, -scale * v)).collect();
                a_rows.push(row);
                b.push(scale * e.constant[(a, bcol)]);
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(e.dim));
    }

    // SOC: s = [bound; v].
    for c in &p.soc {
        for e in std::iter::once(&c.bound).chain(&c.vector) {
            a_rows.push(l.scalar_row(e).into_iter().map(|(c, v)| (c, -v)).collect());
            b.push(e.constant);
        }
        cones.push(SupportedConeT::SecondOrderConeT(1 + c.vector.len()));
    }

    StandardForm { q, a_rows, b, cones }
}

/// Slack on equality residuals and cone margins, relative to the largest
/// unknown, under which a reduced-accuracy termination is accepted as optimal.
const ALMOST_ACCEPT: f64 = 1e-6;

fn map_status(status: SolverStatus) -> SolveStatus {
    match status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved | SolverStatus::InsufficientProgress => {
            SolveStatus::NumericalFailure
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
        _ => SolveStatus::NumericalFailure,
    }
}

/// Programs without unknowns are decided by evaluating their constants.
fn solve_constant(program: &ConicProgram) -> ConicResult {
    let values: Vec<BlockValue> = Vec::new();
    let f = program.feasibility(&values);
    let ok = f.max_equality_residual <= 1e-12
        && (program.psd.is_empty() || f.min_psd_eigenvalue >= 0.0)
        && (program.soc.is_empty() || f.min_soc_margin >= 0.0);
    ConicResult {
        status: if ok { SolveStatus::Optimal } else { SolveStatus::Infeasible },
        objective: program.objective.constant,
        values: ok.then_some(values),
        iterations: 0,
        solve_time: 0.0,
    }
}

impl SolverBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn tolerances(&self) -> Tolerances {
        self.tol
    }

    fn solve_conic(&mut self, program: &ConicProgram) -> ConicResult {
        if program.num_entries() == 0 {
            return solve_constant(program);
        }
        let start = Instant::now();
        let lowering = Lowering::new(program);
        let sf = lower(&lowering);
        let nx = sf.q.len();
        let (mut ri, mut ci, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        for (r, row) in sf.a_rows.iter().enumerate() {
            for (&c, &v) in row {
                ri.push(r);
                ci.push(c);
                vv.push(v);
            }
        }
        let a = CscMatrix::new_from_triplets(sf.a_rows.len(), nx, ri, ci, vv);
        let p = CscMatrix::zeros((nx, nx));
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_feas(self.tol.feasibility)
            .tol_gap_rel(self.tol.gap_rel)
            .tol_gap_abs(self.tol.gap_abs)
            .max_iter(self.tol.max_iter)
            .build()
            .expect("valid clarabel settings");
        // Penalized objectives reach 1e6 and beyond; the cost is normalized
        // here and the true objective re-evaluated from the primal point.
        let qscale = sf.q.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let q: Vec<f64> = sf.q.iter().map(|v| v / qscale).collect();
        let mut solver = match DefaultSolver::new(&p, &q, &a, &sf.b, &sf.cones, settings) {
            Ok(s) => s,
            Err(_) => {
                return ConicResult {
                    status: SolveStatus::NumericalFailure,
                    objective: f64::NAN,
                    values: None,
                    iterations: 0,
                    solve_time: start.elapsed().as_secs_f64(),
                }
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let mut status = map_status(sol.status);
        let mut values = (status == SolveStatus::Optimal).then(|| lowering.unpack(&sol.x));
        if matches!(sol.status, SolverStatus::AlmostSolved | SolverStatus::InsufficientProgress)
            && sol.x.iter().all(|v| v.is_finite())
        {
            let v = lowering.unpack(&sol.x);
            let f = program.feasibility(&v);
            let scale = sol.x.iter().fold(1.0f64, |a, x| a.max(x.abs()));
            let tol = ALMOST_ACCEPT * scale;
            if f.max_equality_residual <= tol
                && f.min_psd_eigenvalue >= -tol
                && f.min_soc_margin >= -tol
            {
                status = SolveStatus::Optimal;
                values = Some(v);
            }
        }
        let objective = values
            .as_ref()
            .map_or(f64::NAN, |v| program.evaluate_objective(v));
        ConicResult {
            status,
            objective,
            values,
            iterations: sol.iterations,
            solve_time: start.elapsed().as_secs_f64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::program::SocConstraint;

    #[test]
    fn tiny_sdp_matches_analytic_optimum() {
        // min tr(X)  s.t. X ⪰ [[2, 1], [1, 2]]  → X = C, objective 4.
        let mut p = ConicProgram::new();
        let x = p.add_symmetric("X", 2);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        p.objective = ScalarExpr::default().inner(x, DMatrix::identity(2, 2));
        p.psd.push(SymExpr::var(x, 2));
        p.psd.push(SymExpr::constant(-c.clone()).congruence(x, DMatrix::identity(2, 2), 1.0));
        let r = ClarabelBackend::default().solve_conic(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 4.0).abs() < 1e-6);
        let xv = r.values.unwrap()[0].as_matrix().unwrap().clone();
        assert!((xv - c).amax() < 1e-5);
    }

    #[test]
    fn soc_epigraph() {
        // min t  s.t. t ≥ ‖(3, 4)‖.
        let mut p = ConicProgram::new();
        let t = p.add_scalar("t");
        p.objective = ScalarExpr::default().linear(t, 1.0);
        p.soc.push(SocConstraint {
            bound: ScalarExpr::default().linear(t, 1.0),
            vector: vec![ScalarExpr::constant(3.0), ScalarExpr::constant(4.0)],
        });
        let r = ClarabelBackend::default().solve_conic(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 5.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_equalities() {
        let mut p = ConicProgram::new();
        let t = p.add_scalar("t");
        p.equalities.push(Equality::Scalar(ScalarExpr::constant(-1.0).linear(t, 1.0)));
        p.equalities.push(Equality::Scalar(ScalarExpr::constant(-2.0).linear(t, 1.0)));
        p.objective = ScalarExpr::default().linear(t, 1.0);
        let r = ClarabelBackend::default().solve_conic(&p);
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn empty_program() {
        let r = ClarabelBackend::default().solve_conic(&ConicProgram::new());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.objective, 0.0);
    }
}
