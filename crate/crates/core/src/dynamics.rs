//! Closed-loop covariance propagation, cost evaluation, gain recovery and
//! Monte Carlo simulation for linear state feedback `u_k = K_k x_k`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::model::{StageCost, StageDynamics, ValidatedProblem};
use crate::sdp::SdpSolution;

/// Samples per independently seeded Monte Carlo block.
pub const MC_BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance at stage {0} is not positive definite")]
    SingularCovariance(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPolicy {
    pub gains: Vec<DMatrix<f64>>,
}

impl FeedbackPolicy {
    pub fn zero(horizon: usize, input_dim: usize, state_dim: usize) -> Self {
        FeedbackPolicy { gains: vec![DMatrix::zeros(input_dim, state_dim); horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn gain_norms(&self) -> Vec<f64> {
        self.gains.iter().map(linalg::frobenius).collect()
    }

    /// Replaces gains on stages flagged inactive with exact zeros.
    pub fn zero_inactive(&mut self, active: &[bool]) {
        for (g, &on) in self.gains.iter_mut().zip(active) {
            if !on {
                g.fill(0.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceTrajectory {
    pub covs: Vec<DMatrix<f64>>,
}

/// `Σ' = (A + B K) Σ (A + B K)ᵀ + D Dᵀ`, symmetrized.
pub fn propagate_covariance(
    sigma: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    stage: &StageDynamics,
) -> Result<DMatrix<f64>, DynamicsError> {
    if !linalg::is_finite(sigma) || !linalg::is_finite(gain) {
        return Err(DynamicsError::NonFiniteInput);
    }
    let (n, m) = (stage.state_dim(), stage.input_dim());
    if sigma.shape() != (n, n) || gain.shape() != (m, n) {
        return Err(DynamicsError::DimensionMismatch(format!(
            "Sigma {:?}, K {:?} for n={n}, m={m}",
            sigma.shape(),
            gain.shape()
        )));
    }
    let closed = &stage.transition + &stage.input * gain;
    let mut next = &closed * sigma * closed.transpose() + stage.noise_covariance();
    linalg::symmetrize_in_place(&mut next);
    Ok(next)
}

/// `Σ_k tr(Q_k Σ_k) + tr(R_k K_k Σ_k K_kᵀ)` over the first `N` covariances.
pub fn transient_cost(
    trajectory: &CovarianceTrajectory,
    policy: &FeedbackPolicy,
    costs: &[StageCost],
) -> Result<f64, DynamicsError> {
    let n = policy.horizon();
    if costs.len() != n || trajectory.covs.len() < n {
        return Err(DynamicsError::DimensionMismatch(format!(
            "{} gains, {} costs, {} covariances",
            n,
            costs.len(),
            trajectory.covs.len()
        )));
    }
    let mut j = 0.0;
    for k in 0..n {
        let (s, kg, c) = (&trajectory.covs[k], &policy.gains[k], &costs[k]);
        if c.state_weight.shape() != s.shape() || kg.nrows() != c.input_weight.nrows() {
            return Err(DynamicsError::DimensionMismatch(format!("stage {k}")));
        }
        let y = kg * s * kg.transpose();
        j += c.state_weight.dot(s) + c.input_weight.dot(&y);
    }
    Ok(j)
}

/// `K_k = U_k Σ_k⁻¹`.
pub fn recover_gains(solution: &SdpSolution) -> Result<FeedbackPolicy, DynamicsError> {
    let gains = solution
        .u
        .iter()
        .zip(&solution.sigma)
        .enumerate()
        .map(|(k, (u, s))| linalg::right_solve_spd(u, s).ok_or(DynamicsError::SingularCovariance(k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeedbackPolicy { gains })
}

pub fn rollout_covariance(
    policy: &FeedbackPolicy,
    problem: &ValidatedProblem,
) -> Result<CovarianceTrajectory, DynamicsError> {
    if policy.horizon() != problem.horizon {
        return Err(DynamicsError::DimensionMismatch(format!(
            "policy has {} gains, horizon is {}",
            policy.horizon(),
            problem.horizon
        )));
    }
    let mut covs = Vec::with_capacity(problem.horizon + 1);
    covs.push(problem.boundary.initial_cov.clone());
    for (k, stage) in problem.stages.iter().enumerate() {
        let next = propagate_covariance(&covs[k], &policy.gains[k], stage)?;
        covs.push(next);
    }
    Ok(CovarianceTrajectory { covs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub samples: usize,
    pub seed: u64,
    pub u_max: f64,
    /// Fraction of samples with `‖u_k‖₂ > u_max`, per stage.
    pub violation_rates: Vec<f64>,
    /// Sample covariances of `x_0 … x_N`.
    pub covariances: Vec<DMatrix<f64>>,
}

impl MonteCarloReport {
    pub fn terminal_covariance(&self) -> &DMatrix<f64> {
        self.covariances.last().expect("at least the initial covariance")
    }

    pub fn max_violation_rate(&self) -> f64 {
        self.violation_rates.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-block sufficient statistics.
struct Moments {
    count: usize,
    violations: Vec<usize>,
    sums: Vec<DVector<f64>>,
    outer: Vec<DMatrix<f64>>,
}

impl Moments {
    fn new(horizon: usize, n: usize) -> Self {
        Moments {
            count: 0,
            violations: vec![0; horizon],
            sums: vec![DVector::zeros(n); horizon + 1],
            outer: vec![DMatrix::zeros(n, n); horizon + 1],
        }
    }

    fn absorb(&mut self, other: Moments) {
        self.count += other.count;
        for (a, b) in self.violations.iter_mut().zip(other.violations) {
            *a += b;
        }
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            *a += b;
        }
        for (a, b) in self.outer.iter_mut().zip(other.outer) {
            *a += b;
        }
    }
}

/// Simulates `x_{k+1} = (A_k + B_k K_k) x_k + D_k w_k` from `x_0 ~ N(0, Σ̄₀)`.
///
/// Samples are generated in blocks of [`MC_BLOCK`]; block `b` draws from a
/// ChaCha stream keyed by `(seed, b)`, and block statistics are summed in block
/// order, so the report does not depend on the number of worker threads.
pub fn simulate_monte_carlo(
    policy: &FeedbackPolicy,
    problem: &ValidatedProblem,
    n_samples: usize,
    seed: u64,
    u_max: f64,
) -> Result<MonteCarloReport, DynamicsError> {
    if n_samples == 0 {
        return Err(DynamicsError::DimensionMismatch("n_samples must be at least 1".into()));
    }
    let horizon = problem.horizon;
    let n = problem.state_dim();
    let m = problem.input_dim();
    if policy.horizon() != horizon || policy.gains.iter().any(|g| g.shape() != (m, n)) {
        return Err(DynamicsError::DimensionMismatch(format!(
            "policy incompatible with n={n}, m={m}, N={horizon}"
        )));
    }
    if policy.gains.iter().any(|g| !linalg::is_finite(g)) {
        return Err(DynamicsError::NonFiniteInput);
    }
    let l0 = linalg::psd_factor(&problem.boundary.initial_cov);
    let closed: Vec<DMatrix<f64>> = problem
        .stages
        .iter()
        .zip(&policy.gains)
        .map(|(s, k)| &s.transition + &s.input * k)
        .collect();

    let blocks = n_samples.div_ceil(MC_BLOCK);
    let partials: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = MC_BLOCK.min(n_samples - b * MC_BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut acc = Moments::new(horizon, n);
            acc.count = count;
            let draw = |len: usize, rng: &mut ChaCha8Rng| {
                DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
            };
            for _ in 0..count {
                let mut x = &l0 * draw(n, &mut rng);
                for k in 0..horizon {
                    acc.sums[k] += &x;
                    acc.outer[k] += &x * x.transpose();
                    let u = &policy.gains[k] * &x;
                    if u.norm() > u_max {
                        acc.violations[k] += 1;
                    }
                    let stage = &problem.stages[k];
                    let w = draw(stage.noise_dim(), &mut rng);
                    x = &closed[k] * &x + &stage.noise * w;
                }
                acc.sums[horizon] += &x;
                acc.outer[horizon] += &x * x.transpose();
            }
            acc
        })
        .collect();

    let mut total = Moments::new(horizon, n);
    for p in partials {
        total.absorb(p);
    }
    let cnt = total.count as f64;
    let covariances = total
        .sums
        .iter()
        .zip(&total.outer)
        .map(|(s, o)| {
            let mean = s / cnt;
            let denom = (cnt - 1.0).max(1.0);
            let mut c = (o - &mean * mean.transpose() * cnt) / denom;
            linalg::symmetrize_in_place(&mut c);
            c
        })
        .collect();
    Ok(MonteCarloReport {
        samples: n_samples,
        seed,
        u_max,
        violation_rates: total.violations.iter().map(|&v| v as f64 / cnt).collect(),
        covariances,
    })
}
