//! Property checks shared by the proptest suites and the acceptance run.

use super::*;
use covsteer::dynamics::{propagate_covariance, recover_gains, transient_cost};
use covsteer::irl1p::{self, Irl1pConfig};
use covsteer::linalg;
use covsteer::sdp::{self, ClarabelBackend, SdpSolution, SolveStatus};
use covsteer::sparsity::{self, pareto_filter, ParetoPoint, Provenance, SparsityThreshold};
use proptest::test_runner::TestCaseError;

pub type Check = Result<(), TestCaseError>;

pub fn propagation_case() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, StageDynamics)> {
    (1usize..=4, 1usize..=2).prop_flat_map(|(n, m)| {
        (
            // Includes rank-deficient covariances.
            matrix(n, n, -2.0, 2.0).prop_map(|l| &l * l.transpose()),
            matrix(m, n, -3.0, 3.0),
            (matrix(n, n, -1.5, 1.5), matrix(n, m, -1.0, 1.0), matrix(n, n, -1.0, 1.0))
                .prop_map(|(a, b, d)| StageDynamics { transition: a, input: b, noise: d }),
        )
    })
}

pub fn noise_floor((sigma, gain, stage): (DMatrix<f64>, DMatrix<f64>, StageDynamics)) -> Check {
    let next = propagate_covariance(&sigma, &gain, &stage).unwrap();
    prop_assert_eq!(linalg::asymmetry(&next), 0.0);
    let excess = &next - stage.noise_covariance();
    let scale = linalg::frobenius(&next).max(1.0);
    prop_assert!(linalg::min_eigenvalue(&excess) >= -1e-12 * scale);
    Ok(())
}

pub fn gain_case() -> impl Strategy<Value = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    (1usize..=4, 1usize..=2, 1usize..=10).prop_flat_map(|(n, m, h)| {
        (prop::collection::vec(spd(n, 0.5), h), prop::collection::vec(matrix(m, n, -5.0, 5.0), h))
    })
}

pub fn gain_round_trip((sigmas, gains): (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)) -> Check {
    let u: Vec<_> = gains.iter().zip(&sigmas).map(|(k, s)| k * s).collect();
    let y: Vec<_> = gains.iter().zip(&sigmas).map(|(k, s)| k * s * k.transpose()).collect();
    let sol = SdpSolution {
        status: SolveStatus::Optimal,
        sigma: sigmas,
        u,
        y,
        t: None,
        objective: 0.0,
        transient_cost: 0.0,
        iterations: 0,
        solve_time: 0.0,
    };
    let policy = recover_gains(&sol).unwrap();
    for (got, want) in policy.gains.iter().zip(&gains) {
        let err = linalg::frobenius(&(got - want));
        prop_assert!(err <= 1e-10 * linalg::frobenius(want).max(1.0), "error {}", err);
    }
    Ok(())
}

pub fn pareto_case() -> impl Strategy<Value = Vec<ParetoPoint>> {
    let cost = prop_oneof![0.0f64..100.0, Just(f64::INFINITY), Just(5.0)];
    prop::collection::vec((0usize..12, cost), 0..40).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (j_tau, j_sigma))| ParetoPoint {
                j_sigma,
                j_tau,
                provenance: Provenance::BruteForce { mask: vec![i % 2 == 0] },
            })
            .collect()
    })
}

pub fn pareto_idempotent(points: Vec<ParetoPoint>) -> Check {
    let once = pareto_filter(&points);
    let twice = pareto_filter(&once.points);
    prop_assert_eq!(&once.points, &twice.points);
    for w in once.points.windows(2) {
        prop_assert!(w[0].j_tau < w[1].j_tau && w[0].j_sigma > w[1].j_sigma);
    }
    for p in points.iter().filter(|p| p.j_sigma.is_finite()) {
        prop_assert!(once.points.iter().any(|q| q.j_tau <= p.j_tau && q.j_sigma <= p.j_sigma));
    }
    Ok(())
}

pub fn cost_equivalence(inst: ProblemInstance) -> Check {
    let v = validate(&inst).unwrap();
    let sol = sdp::solve(&sdp::build_standard(&v), &mut ClarabelBackend::default());
    prop_assert_eq!(sol.status, SolveStatus::Optimal);
    let report = sdp::verify_lossless(&sol, sdp::LOSSLESS_TOL).unwrap();
    // Unconstrained inputs: the relaxation is always tight at the optimum.
    prop_assert!(report.pass, "lossless residual {}", report.max_residual);
    let policy = recover_gains(&sol).unwrap();
    let traj = rollout_covariance(&policy, &v).unwrap();
    let j = transient_cost(&traj, &policy, &v.costs).unwrap();
    let rel = (j - sol.transient_cost).abs() / sol.transient_cost.abs().max(1.0);
    prop_assert!(rel <= 1e-6, "rollout {} vs program {}", j, sol.transient_cost);
    Ok(())
}

pub fn determinism_case() -> impl Strategy<Value = (ProblemInstance, f64)> {
    (
        (1usize..=3, 1usize..=2, 1usize..=4).prop_flat_map(|(n, m, h)| feasible_instance(n, m, h)),
        1.0f64..200.0,
    )
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

/// IRL1P and brute force give identical results on 1 and 4 workers.
pub fn worker_independence((inst, lambda): (ProblemInstance, f64)) -> Check {
    let v = validate(&inst).unwrap();
    let backend = ClarabelBackend::default();
    let config = Irl1pConfig { l_max: 8, ..Irl1pConfig::with_lambda(lambda) };
    let threshold = SparsityThreshold::default();
    let go = || {
        let run = irl1p::run(&v, &config, &mut backend.clone()).unwrap();
        let front = sparsity::brute_force_pareto(&v, &backend, threshold, sparsity::BRUTE_FORCE_CAP).unwrap();
        (serde_json::to_string(&run.trace).unwrap(), run.termination, front)
    };
    let one = pool(1).install(go);
    let four = pool(4).install(go);
    prop_assert_eq!(one, four);
    Ok(())
}
