#![allow(dead_code)]

pub mod props;

use covsteer::dynamics::{rollout_covariance, FeedbackPolicy};
use covsteer::model::{
    validate, BoundaryConditions, ChanceConstraintSpec, ProblemInstance, StageCost, StageDynamics,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

pub fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

/// `L Lᵀ + floor I`, well conditioned for moderate `floor`.
pub fn spd(n: usize, floor: f64) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n, -1.0, 1.0).prop_map(move |l| &l * l.transpose() + DMatrix::identity(n, n) * floor)
}

pub fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=4, 1usize..=2, 1usize..=10)
}

/// Random time-varying instance whose terminal bound is loose enough that
/// the zero-gain policy is strictly feasible.
pub fn feasible_instance(n: usize, m: usize, horizon: usize) -> impl Strategy<Value = ProblemInstance> {
    let stage = (matrix(n, n, -0.8, 0.8), matrix(n, m, -1.0, 1.0), matrix(n, n, -0.5, 0.5), spd(n, 0.2), spd(m, 0.5));
    (prop::collection::vec(stage, horizon), spd(n, 0.5), 1.5f64..3.0).prop_map(
        move |(stages, sigma0, slack)| {
            let (dynamics, costs): (Vec<_>, Vec<_>) = stages
                .into_iter()
                .map(|(a, b, d, q, r)| {
                    (
                        StageDynamics { transition: a, input: b, noise: d },
                        StageCost { state_weight: q, input_weight: r },
                    )
                })
                .unzip();
            let mut inst = ProblemInstance {
                label: None,
                horizon,
                stages: dynamics,
                costs,
                boundary: BoundaryConditions {
                    initial_cov: sigma0.clone(),
                    terminal_cov: DMatrix::identity(n, n) * 1e9,
                },
                chance: None,
            };
            let open = rollout_covariance(
                &FeedbackPolicy::zero(horizon, m, n),
                &validate(&inst).expect("valid before tightening"),
            )
            .expect("open loop rollout");
            inst.boundary.terminal_cov = open.covs[horizon].clone() * slack + DMatrix::identity(n, n);
            inst
        },
    )
}

pub fn any_feasible_instance() -> impl Strategy<Value = ProblemInstance> {
    dims().prop_flat_map(|(n, m, h)| feasible_instance(n, m, h))
}

pub fn with_loose_chance(inst: ProblemInstance) -> ProblemInstance {
    inst.with_chance(Some(ChanceConstraintSpec { u_max: 1e3, gamma: 0.05 }))
}
