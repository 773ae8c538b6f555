//! Covariance-steering semidefinite programs: construction, solution and
//! numerical certification of the lossless relaxation `Y ⪰ U Σ⁻¹ Uᵀ`.

mod backend;
mod build;
mod program;

pub use backend::{ClarabelBackend, ConicResult, SolverBackend, Tolerances};
pub use build::{build_masked, build_standard, build_weighted};
pub use program::{
    BlockValue, ConicProgram, Equality, Feasibility, ProgramError, ScalarExpr, ScalarTerm,
    SocConstraint, SymExpr, SymTerm, VarId, VarKind, Variable,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Default tolerance on the lossless residual.
pub const LOSSLESS_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
    IterationLimit,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "Optimal",
            SolveStatus::Infeasible => "Infeasible",
            SolveStatus::NumericalFailure => "NumericalFailure",
            SolveStatus::IterationLimit => "IterationLimit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("weight {0} is not positive")]
    NonPositiveWeight(usize),
    #[error("expected {expected} weights, got {got}")]
    WeightCountMismatch { expected: usize, got: usize },
    #[error("expected mask of length {expected}, got {got}")]
    MaskLengthMismatch { expected: usize, got: usize },
    #[error("covariance at stage {0} is not positive definite")]
    SingularCovariance(usize),
    #[error("solution status is {0}, not Optimal")]
    NotOptimal(SolveStatus),
}

/// Where the steering quantities live inside a built program.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLayout {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    /// `M_k = [[Σ_k, U_kᵀ], [U_k, Y_k]]` for `k < N`.
    pub stage_blocks: Vec<VarId>,
    /// `Σ_N`.
    pub terminal: VarId,
    /// `t_k ≥ ‖Y_k‖_F`, present for regularized programs.
    pub epigraph: Option<Vec<VarId>>,
    /// `blockdiag(Q_k, R_k)`, so that `J_Σ = Σ ⟨C_k, M_k⟩`.
    pub stage_costs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// `N + 1` covariances; empty unless Optimal.
    pub sigma: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    pub t: Option<Vec<f64>>,
    /// Full program objective, including any penalty.
    pub objective: f64,
    /// `Σ tr(Q Σ_k) + tr(R Y_k)`.
    pub transient_cost: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

impl SdpSolution {
    fn unsolved(status: SolveStatus, iterations: u32, solve_time: f64) -> Self {
        SdpSolution {
            status,
            sigma: Vec::new(),
            u: Vec::new(),
            y: Vec::new(),
            t: None,
            objective: f64::NAN,
            transient_cost: f64::NAN,
            iterations,
            solve_time,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn horizon(&self) -> usize {
        self.y.len()
    }

    pub fn y_norms(&self) -> Vec<f64> {
        self.y.iter().map(linalg::frobenius).collect()
    }

    pub fn y_max_eigenvalues(&self) -> Vec<f64> {
        self.y.iter().map(linalg::max_eigenvalue).collect()
    }

    pub fn terminal_cov(&self) -> Option<&DMatrix<f64>> {
        self.sigma.last()
    }
}

fn split_block(m: &DMatrix<f64>, n: usize, mi: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let sigma = m.view((0, 0), (n, n)).into_owned();
    let u = m.view((n, 0), (mi, n)).into_owned();
    let y = m.view((n, n), (mi, mi)).into_owned();
    (sigma, u, y)
}

/// Solves `program` and unpacks the stage quantities when the program carries
/// a [`StageLayout`]. Solver failures are reported through the status.
pub fn solve(program: &ConicProgram, backend: &mut impl SolverBackend) -> SdpSolution {
    let r = backend.solve_conic(program);
    let values = match (r.status, r.values) {
        (SolveStatus::Optimal, Some(v)) => v,
        (status, _) => {
            let status =
                if status == SolveStatus::Optimal { SolveStatus::NumericalFailure } else { status };
            return SdpSolution::unsolved(status, r.iterations, r.solve_time);
        }
    };
    let mut sol = SdpSolution::unsolved(SolveStatus::Optimal, r.iterations, r.solve_time);
    sol.objective = r.objective;
    let Some(layout) = &program.layout else {
        sol.transient_cost = r.objective;
        return sol;
    };
    let (n, m) = (layout.state_dim, layout.input_dim);
    let mut j = 0.0;
    for (k, id) in layout.stage_blocks.iter().enumerate() {
        let block = values[id.index()].as_matrix().expect("stage block is a matrix");
        j += layout.stage_costs[k].dot(block);
        let (s, u, y) = split_block(block, n, m);
        sol.sigma.push(s);
        sol.u.push(u);
        sol.y.push(y);
    }
    sol.sigma.push(values[layout.terminal.index()].as_matrix().expect("terminal block").clone());
    sol.t = layout
        .epigraph
        .as_ref()
        .map(|ts| ts.iter().map(|id| values[id.index()].as_scalar().expect("scalar")).collect());
    sol.transient_cost = j;
    sol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosslessReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Per-stage residual `‖Y_k − U_k Σ_k⁻¹ U_kᵀ‖_F / (1 + ‖Y_k‖_F)`.
pub fn verify_lossless(solution: &SdpSolution, tol: f64) -> Result<LosslessReport, SdpError> {
    if !solution.is_optimal() {
        return Err(SdpError::NotOptimal(solution.status));
    }
    let mut residuals = Vec::with_capacity(solution.horizon());
    for k in 0..solution.horizon() {
        let (s, u, y) = (&solution.sigma[k], &solution.u[k], &solution.y[k]);
        let kgain = linalg::right_solve_spd(u, s).ok_or(SdpError::SingularCovariance(k))?;
        let implied = &kgain * u.transpose();
        residuals.push(linalg::frobenius(&(y - implied)) / (1.0 + linalg::frobenius(y)));
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(LosslessReport { residuals, max_residual, tol, pass: max_residual <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_stage(y0: DMatrix<f64>) -> SdpSolution {
        let mut s = SdpSolution::unsolved(SolveStatus::Optimal, 0, 0.0);
        s.sigma = vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)];
        s.u = vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.5])];
        s.y = vec![y0];
        s
    }

    #[test]
    fn lossless_exact_and_inflated() {
        let exact = DMatrix::from_element(1, 1, 1.25);
        let r = verify_lossless(&one_stage(exact.clone()), LOSSLESS_TOL).unwrap();
        assert!(r.pass && r.max_residual < 1e-14);

        let inflated = exact + DMatrix::identity(1, 1);
        let r = verify_lossless(&one_stage(inflated), LOSSLESS_TOL).unwrap();
        assert!(!r.pass);
        assert!((r.residuals[0] - 1.0 / (1.0 + 2.25)).abs() < 1e-12);
    }

    #[test]
    fn lossless_errors() {
        let mut s = one_stage(DMatrix::zeros(1, 1));
        s.sigma[0] = DMatrix::zeros(2, 2);
        assert_eq!(verify_lossless(&s, 1e-5), Err(SdpError::SingularCovariance(0)));
        s.status = SolveStatus::Infeasible;
        assert!(matches!(verify_lossless(&s, 1e-5), Err(SdpError::NotOptimal(_))));
    }
}
