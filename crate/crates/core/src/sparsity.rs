//! Support counting, the exhaustive mask oracle and Pareto bookkeeping.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irl1p::{self, Irl1pConfig, Termination};
use crate::linalg;
use crate::model::ValidatedProblem;
use crate::sdp::{self, SolveStatus, SolverBackend};

/// Default horizon cap for [`brute_force_pareto`].
pub const BRUTE_FORCE_CAP: usize = 16;

/// A stage is active when `‖Y_k‖_F` exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SparsityThreshold {
    Absolute(f64),
    /// Fraction of `max_k ‖Y_k‖_F`.
    Relative(f64),
}

impl Default for SparsityThreshold {
    fn default() -> Self {
        SparsityThreshold::Absolute(1e-6)
    }
}

impl SparsityThreshold {
    pub fn check(&self) -> Result<(), String> {
        let v = match self {
            SparsityThreshold::Absolute(v) | SparsityThreshold::Relative(v) => *v,
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(format!("threshold must be positive, got {v}"))
        }
    }

    fn floor(&self, norms: &[f64]) -> f64 {
        match self {
            SparsityThreshold::Absolute(v) => *v,
            SparsityThreshold::Relative(v) => v * norms.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn active_flags(&self, y: &[DMatrix<f64>]) -> Vec<bool> {
        let norms: Vec<f64> = y.iter().map(linalg::frobenius).collect();
        let floor = self.floor(&norms);
        norms.iter().map(|&v| v > floor).collect()
    }
}

impl std::fmt::Display for SparsityThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SparsityThreshold::Absolute(v) => write!(f, "abs:{v:e}"),
            SparsityThreshold::Relative(v) => write!(f, "rel:{v:e}"),
        }
    }
}

/// Number of stages with `‖Y_k‖_F` above the threshold.
pub fn count_active(y: &[DMatrix<f64>], threshold: SparsityThreshold) -> usize {
    threshold.active_flags(y).into_iter().filter(|&a| a).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    /// `true` marks a stage forced to zero.
    BruteForce { mask: Vec<bool> },
    Irl1p { lambda: f64, iterations: usize, termination: Termination },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub j_sigma: f64,
    pub j_tau: usize,
    pub provenance: Provenance,
}

impl ParetoPoint {
    /// Whether the point came from a successful solve.
    pub fn is_ok(&self) -> bool {
        self.j_sigma.is_finite()
            && !matches!(
                self.provenance,
                Provenance::Irl1p { termination: Termination::SolverFailure(_), .. }
            )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParetoFront {
    /// Nondominated points, ascending in `J_τ`.
    pub points: Vec<ParetoPoint>,
    /// Cheapest point per `J_τ` level, indexed by level.
    pub level_best: Vec<Option<ParetoPoint>>,
    /// Levels where every mask was reported infeasible.
    pub infeasible_levels: Vec<usize>,
    /// Levels without an optimal solve where at least one mask failed for
    /// another reason.
    pub failed_levels: Vec<usize>,
    pub solves: usize,
}

impl ParetoFront {
    pub fn best_at(&self, j_tau: usize) -> Option<&ParetoPoint> {
        self.level_best.get(j_tau).and_then(|p| p.as_ref())
    }
}

fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.j_sigma <= b.j_sigma && a.j_tau <= b.j_tau && (a.j_sigma < b.j_sigma || a.j_tau < b.j_tau)
}

/// Keeps the nondominated points (both coordinates minimized); among exact
/// duplicates the first in input order survives. Non-finite costs are dropped.
pub fn pareto_filter(points: &[ParetoPoint]) -> ParetoFront {
    let finite: Vec<&ParetoPoint> = points.iter().filter(|p| p.j_sigma.is_finite()).collect();
    let mut kept: Vec<ParetoPoint> = Vec::new();
    for (i, p) in finite.iter().enumerate() {
        let beaten = finite.iter().any(|q| dominates(q, p));
        let duplicate = finite[..i].iter().any(|q| q.j_sigma == p.j_sigma && q.j_tau == p.j_tau);
        if !beaten && !duplicate {
            kept.push((*p).clone());
        }
    }
    kept.sort_by_key(|p| p.j_tau);
    let max_level = kept.iter().map(|p| p.j_tau).max().map_or(0, |m| m + 1);
    let mut level_best = vec![None; max_level];
    for p in &kept {
        level_best[p.j_tau] = Some(p.clone());
    }
    ParetoFront { points: kept, level_best, ..Default::default() }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SparsityError {
    #[error("horizon {0} exceeds the brute-force cap {1}")]
    HorizonTooLarge(usize, usize),
    #[error("lambda list is empty")]
    EmptySweep,
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
}

/// Mask for the `i`-th reflected Gray code over `horizon` stages.
pub fn gray_mask(i: u64, horizon: usize) -> Vec<bool> {
    let g = i ^ (i >> 1);
    (0..horizon).map(|k| (g >> k) & 1 == 1).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutcome {
    pub mask: Vec<bool>,
    pub status: SolveStatus,
    pub j_sigma: f64,
    /// Stages active in the solution; 0 unless Optimal.
    pub active: usize,
}

impl MaskOutcome {
    pub fn free_stages(&self) -> usize {
        self.mask.iter().filter(|&&off| !off).count()
    }
}

/// Solves the masked program for one mask.
pub fn solve_mask(
    problem: &ValidatedProblem,
    mask: &[bool],
    threshold: SparsityThreshold,
    backend: &mut impl SolverBackend,
) -> MaskOutcome {
    let program = sdp::build_masked(problem, mask).expect("mask length matches horizon");
    let sol = sdp::solve(&program, backend);
    let active = if sol.is_optimal() { count_active(&sol.y, threshold) } else { 0 };
    MaskOutcome { mask: mask.to_vec(), status: sol.status, j_sigma: sol.transient_cost, active }
}

/// Solves all `2^N` masked programs and records the cheapest optimal solve
/// per `J_τ`, counted on the solution at `threshold`. Work is spread over the
/// current rayon pool with one backend clone per task; aggregation runs in
/// mask order.
pub fn brute_force_pareto<B>(
    problem: &ValidatedProblem,
    backend: &B,
    threshold: SparsityThreshold,
    cap: usize,
) -> Result<ParetoFront, SparsityError>
where
    B: SolverBackend + Clone + Send + Sync,
{
    let horizon = problem.horizon;
    if horizon > cap || horizon >= 63 {
        return Err(SparsityError::HorizonTooLarge(horizon, cap));
    }
    let outcomes: Vec<MaskOutcome> = (0..1u64 << horizon)
        .into_par_iter()
        .map_init(|| backend.clone(), |b, i| solve_mask(problem, &gray_mask(i, horizon), threshold, b))
        .collect();
    Ok(aggregate(horizon, &outcomes))
}

/// Folds per-mask outcomes into a front. A level is infeasible when every
/// mask with that many free stages was reported infeasible and no optimal
/// solution landed on it.
pub fn aggregate(horizon: usize, outcomes: &[MaskOutcome]) -> ParetoFront {
    let mut level_best: Vec<Option<ParetoPoint>> = vec![None; horizon + 1];
    let mut all_infeasible = vec![true; horizon + 1];
    let mut seen = vec![false; horizon + 1];
    for o in outcomes {
        let free = o.free_stages();
        seen[free] = true;
        if o.status != SolveStatus::Infeasible {
            all_infeasible[free] = false;
        }
        if o.status != SolveStatus::Optimal || !o.j_sigma.is_finite() {
            continue;
        }
        let level = o.active;
        let better = match &level_best[level] {
            None => true,
            Some(p) => o.j_sigma < p.j_sigma,
        };
        if better {
            level_best[level] = Some(ParetoPoint {
                j_sigma: o.j_sigma,
                j_tau: level,
                provenance: Provenance::BruteForce { mask: o.mask.clone() },
            });
        }
    }
    let mut infeasible_levels = Vec::new();
    let mut failed_levels = Vec::new();
    for level in 0..=horizon {
        if level_best[level].is_some() || !seen[level] {
            continue;
        }
        if all_infeasible[level] {
            infeasible_levels.push(level);
        } else {
            failed_levels.push(level);
        }
    }
    let candidates: Vec<ParetoPoint> = level_best.iter().flatten().cloned().collect();
    let points = pareto_filter(&candidates).points;
    ParetoFront { points, level_best, infeasible_levels, failed_levels, solves: outcomes.len() }
}

/// Runs the reweighting loop once per `λ`, in parallel, preserving order.
pub fn lambda_sweep<B>(
    problem: &ValidatedProblem,
    lambdas: &[f64],
    config: &Irl1pConfig,
    backend: &B,
) -> Result<Vec<ParetoPoint>, SparsityError>
where
    B: SolverBackend + Clone + Send + Sync,
{
    if lambdas.is_empty() {
        return Err(SparsityError::EmptySweep);
    }
    if let Some(&l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(SparsityError::NegativeLambda(l));
    }
    Ok(lambdas
        .par_iter()
        .map_init(
            || backend.clone(),
            |b, &lambda| {
                let cfg = Irl1pConfig { lambda, ..*config };
                match irl1p::run(problem, &cfg, b) {
                    Ok(r) => ParetoPoint {
                        j_sigma: r.j_sigma().unwrap_or(f64::NAN),
                        j_tau: r.j_tau().unwrap_or(0),
                        provenance: Provenance::Irl1p {
                            lambda,
                            iterations: r.iterations(),
                            termination: r.termination,
                        },
                    },
                    Err(_) => ParetoPoint {
                        j_sigma: f64::NAN,
                        j_tau: 0,
                        provenance: Provenance::Irl1p {
                            lambda,
                            iterations: 0,
                            termination: Termination::SolverFailure(0),
                        },
                    },
                }
            },
        )
        .collect())
}
