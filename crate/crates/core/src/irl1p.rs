//! Iteratively reweighted group-norm minimization over the regularized
//! steering SDP.
//!
//! Each iteration solves the weighted program, recovers `K_k = U_k Σ_k⁻¹`,
//! tests the relative change of `Σ ‖K_k‖_F` (from the second iteration on),
//! and then sets `w_k = 1 / (‖Y_k‖_F + ε)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, FeedbackPolicy};
use crate::linalg;
use crate::model::ValidatedProblem;
use crate::sdp::{self, SdpError, SdpSolution, SolveStatus, SolverBackend};
use crate::sparsity::{count_active, SparsityThreshold};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Irl1pConfig {
    pub lambda: f64,
    /// Weight floor `ε`.
    pub epsilon: f64,
    pub eps_conv: f64,
    pub l_max: usize,
    pub threshold: SparsityThreshold,
    pub lossless_tol: f64,
}

impl Default for Irl1pConfig {
    fn default() -> Self {
        Irl1pConfig {
            lambda: 0.0,
            epsilon: 1e-3,
            eps_conv: 1e-6,
            l_max: 50,
            threshold: SparsityThreshold::default(),
            lossless_tol: sdp::LOSSLESS_TOL,
        }
    }
}

impl Irl1pConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Irl1pConfig { lambda, ..Default::default() }
    }

    pub fn check(&self) -> Result<(), Irl1pError> {
        let bad = |what: &str, v: f64| Err(Irl1pError::InvalidConfig(format!("{what} = {v}")));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda", self.lambda);
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", self.epsilon);
        }
        if !(self.eps_conv > 0.0) {
            return bad("eps_conv", self.eps_conv);
        }
        if self.l_max == 0 {
            return bad("l_max", 0.0);
        }
        if !(self.lossless_tol > 0.0) {
            return bad("lossless_tol", self.lossless_tol);
        }
        self.threshold.check().map_err(Irl1pError::InvalidConfig)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Irl1pError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("previous gains are all zero")]
    ZeroPreviousNorm,
    #[error("gain list lengths differ")]
    LengthMismatch,
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// `w_k = 1 / (‖Y_k‖_F + ε)`.
pub fn update_weights(y: &[DMatrix<f64>], epsilon: f64) -> Vec<f64> {
    y.iter().map(|yk| 1.0 / (linalg::frobenius(yk) + epsilon)).collect()
}

/// True when `|Σ‖K_curr‖_F − Σ‖K_prev‖_F| / Σ‖K_prev‖_F < eps_conv`.
///
/// All-zero previous gains give [`Irl1pError::ZeroPreviousNorm`] unless the
/// current gains are all zero as well, which counts as converged.
pub fn check_convergence(
    k_prev: &[DMatrix<f64>],
    k_curr: &[DMatrix<f64>],
    eps_conv: f64,
) -> Result<bool, Irl1pError> {
    if k_prev.len() != k_curr.len() {
        return Err(Irl1pError::LengthMismatch);
    }
    let prev: f64 = k_prev.iter().map(linalg::frobenius).sum();
    let curr: f64 = k_curr.iter().map(linalg::frobenius).sum();
    if prev == 0.0 {
        return if curr == 0.0 { Ok(true) } else { Err(Irl1pError::ZeroPreviousNorm) };
    }
    Ok(((curr - prev) / prev).abs() < eps_conv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    IterationLimit,
    /// Subproblem at this (1-based) iteration did not return Optimal.
    SolverFailure(usize),
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::Converged => f.write_str("Converged"),
            Termination::IterationLimit => f.write_str("IterationLimit"),
            Termination::SolverFailure(l) => write!(f, "SolverFailure({l})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Weights the subproblem was solved with.
    pub weights: Vec<f64>,
    pub status: SolveStatus,
    pub j_sigma: f64,
    pub j_tau: usize,
    pub y_norms: Vec<f64>,
    pub y_max_eigenvalues: Vec<f64>,
    pub k_norms: Vec<f64>,
    /// Largest lossless residual; NaN when it could not be evaluated.
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Irl1pResult {
    /// Gains of the last Optimal iterate, zeroed on inactive stages.
    pub policy: Option<FeedbackPolicy>,
    /// Last Optimal iterate.
    pub solution: Option<SdpSolution>,
    pub trace: IterationTrace,
    pub termination: Termination,
}

impl Irl1pResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn j_tau(&self) -> Option<usize> {
        self.solution.as_ref()?;
        self.trace.records.iter().rev().find(|r| r.status == SolveStatus::Optimal).map(|r| r.j_tau)
    }

    pub fn j_sigma(&self) -> Option<f64> {
        self.solution.as_ref().map(|s| s.transient_cost)
    }
}

/// Runs the reweighting loop for at most `l_max` subproblem solves.
pub fn run(
    problem: &ValidatedProblem,
    config: &Irl1pConfig,
    backend: &mut impl SolverBackend,
) -> Result<Irl1pResult, Irl1pError> {
    config.check()?;
    let horizon = problem.horizon;
    let mut weights = vec![1.0; horizon];
    let mut trace = IterationTrace::default();
    let mut last: Option<(SdpSolution, FeedbackPolicy)> = None;
    let mut termination = Termination::IterationLimit;

    for l in 1..=config.l_max {
        let program = sdp::build_weighted(problem, config.lambda, &weights)?;
        let sol = sdp::solve(&program, backend);
        let policy = if sol.is_optimal() { dynamics::recover_gains(&sol).ok() } else { None };
        let Some(policy) = policy else {
            trace.records.push(IterationRecord {
                iteration: l,
                weights: weights.clone(),
                status: if sol.is_optimal() { SolveStatus::NumericalFailure } else { sol.status },
                j_sigma: f64::NAN,
                j_tau: 0,
                y_norms: Vec::new(),
                y_max_eigenvalues: Vec::new(),
                k_norms: Vec::new(),
                max_residual: f64::NAN,
            });
            termination = Termination::SolverFailure(l);
            break;
        };
        let y_norms = sol.y_norms();
        let max_residual = sdp::verify_lossless(&sol, config.lossless_tol)
            .map(|r| r.max_residual)
            .unwrap_or(f64::NAN);
        trace.records.push(IterationRecord {
            iteration: l,
            weights: weights.clone(),
            status: sol.status,
            j_sigma: sol.transient_cost,
            j_tau: count_active(&sol.y, config.threshold),
            y_norms: y_norms.clone(),
            y_max_eigenvalues: sol.y_max_eigenvalues(),
            k_norms: policy.gain_norms(),
            max_residual,
        });

        let converged = match &last {
            Some((_, prev)) if l > 1 => {
                match check_convergence(&prev.gains, &policy.gains, config.eps_conv) {
                    Ok(c) => c,
                    Err(Irl1pError::ZeroPreviousNorm) => false,
                    Err(e) => return Err(e),
                }
            }
            _ => false,
        };
        weights = update_weights(&sol.y, config.epsilon);
        last = Some((sol, policy));
        if converged {
            termination = Termination::Converged;
            break;
        }
    }

    let (solution, policy) = match last {
        Some((sol, mut pol)) => {
            let active = config.threshold.active_flags(&sol.y);
            pol.zero_inactive(&active);
            (Some(sol), Some(pol))
        }
        None => (None, None),
    };
    Ok(Irl1pResult { policy, solution, trace, termination })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        let w = update_weights(
            &[
                DMatrix::zeros(1, 1),
                DMatrix::from_element(1, 1, 0.999),
                DMatrix::from_element(1, 1, 21.234),
            ],
            1e-3,
        );
        assert!((w[0] - 1000.0).abs() < 1e-9);
        assert!((w[1] - 1.0).abs() < 1e-12);
        assert!((w[2] - 0.047_093).abs() < 1e-6);
    }

    #[test]
    fn convergence_examples() {
        let k = |v: f64| vec![DMatrix::from_element(1, 1, v)];
        assert!(check_convergence(&k(3.0), &k(3.0), 1e-3).unwrap());
        assert!(!check_convergence(&k(10.0), &k(9.0), 1e-3).unwrap());
        assert!(check_convergence(&k(10.0), &k(10.0099), 1e-3).unwrap());
        // a decrease is a change too
        assert!(!check_convergence(&k(10.0), &k(5.0), 1e-3).unwrap());
        assert!(check_convergence(&k(0.0), &k(0.0), 1e-3).unwrap());
        assert_eq!(check_convergence(&k(0.0), &k(1.0), 1e-3), Err(Irl1pError::ZeroPreviousNorm));
        assert_eq!(check_convergence(&k(1.0), &[], 1e-3), Err(Irl1pError::LengthMismatch));
    }

    #[test]
    fn config_checks() {
        assert!(Irl1pConfig::default().check().is_ok());
        assert!(Irl1pConfig::with_lambda(-1.0).check().is_err());
        assert!(Irl1pConfig { l_max: 0, ..Default::default() }.check().is_err());
        assert!(Irl1pConfig { epsilon: 0.0, ..Default::default() }.check().is_err());
    }
}
