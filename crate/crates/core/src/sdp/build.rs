use nalgebra::DMatrix;

use super::program::{ConicProgram, Equality, ScalarExpr, SocConstraint, SymExpr, VarId};
use super::{SdpError, StageLayout};
use crate::model::ValidatedProblem;
use crate::stats;

/// Rows selecting the state part `[I 0]` and input part `[0 I]` of a stage block.
fn selectors(n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut ex = DMatrix::zeros(n, n + m);
    let mut eu = DMatrix::zeros(m, n + m);
    for i in 0..n {
        ex[(i, i)] = 1.0;
    }
    for i in 0..m {
        eu[(i, n + i)] = 1.0;
    }
    (ex, eu)
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

/// Equations shared by every variant: boundary values, the covariance
/// recursion, the per-stage LMI, terminal dominance and optional chance caps.
fn base_program(problem: &ValidatedProblem) -> ConicProgram {
    let p = problem.instance();
    let (n, m, horizon) = (p.state_dim(), p.input_dim(), p.horizon);
    let (ex, eu) = selectors(n, m);
    let mut prog = ConicProgram::new();

    let blocks: Vec<VarId> =
        (0..horizon).map(|k| prog.add_symmetric(format!("M{k}"), n + m)).collect();
    let terminal = prog.add_symmetric(format!("Sigma{horizon}"), n);

    prog.equalities.push(Equality::Matrix(
        SymExpr::constant(-&p.boundary.initial_cov).congruence(blocks[0], ex.clone(), 1.0),
    ));
    for k in 0..horizon {
        let st = &p.stages[k];
        let mut ab = DMatrix::zeros(n, n + m);
        ab.view_mut((0, 0), (n, n)).copy_from(&st.transition);
        ab.view_mut((0, n), (n, m)).copy_from(&st.input);
        // Σ_{k+1} − [A B] M_k [A B]ᵀ − D Dᵀ = 0
        let next = if k + 1 < horizon {
            SymExpr::constant(-st.noise_covariance()).congruence(blocks[k + 1], ex.clone(), 1.0)
        } else {
            SymExpr::constant(-st.noise_covariance()).congruence(terminal, DMatrix::identity(n, n), 1.0)
        };
        prog.equalities.push(Equality::Matrix(next.congruence(blocks[k], ab, -1.0)));
    }

    for &b in &blocks {
        prog.psd.push(SymExpr::var(b, n + m));
    }
    prog.psd.push(
        SymExpr::constant(p.boundary.terminal_cov.clone())
            .congruence(terminal, DMatrix::identity(n, n), -1.0),
    );

    if let Some(ch) = &p.chance {
        let rho = stats::chance_bound_rho(ch.u_max, ch.gamma, m as u32)
            .expect("chance parameters checked by validation");
        for &b in &blocks {
            prog.psd.push(
                SymExpr::constant(DMatrix::identity(m, m) * rho).congruence(b, eu.clone(), -1.0),
            );
        }
    }

    let stage_costs: Vec<DMatrix<f64>> = p
        .costs
        .iter()
        .map(|c| block_diag(&c.state_weight, &c.input_weight))
        .collect();
    let mut objective = ScalarExpr::default();
    for (k, &b) in blocks.iter().enumerate() {
        objective = objective.inner(b, stage_costs[k].clone());
    }
    prog.objective = objective;
    prog.layout = Some(StageLayout {
        horizon,
        state_dim: n,
        input_dim: m,
        stage_blocks: blocks,
        terminal,
        epigraph: None,
        stage_costs,
    });
    prog
}

/// Minimum transient cost subject to the steering constraints.
pub fn build_standard(problem: &ValidatedProblem) -> ConicProgram {
    base_program(problem)
}

/// Adds `λ Σ w_k ‖Y_k‖_F` through epigraph scalars. With `λ = 0` the penalty
/// vanishes and the standard program is returned unchanged.
pub fn build_weighted(
    problem: &ValidatedProblem,
    lambda: f64,
    weights: &[f64],
) -> Result<ConicProgram, SdpError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SdpError::NegativeLambda(lambda));
    }
    let horizon = problem.horizon;
    if weights.len() != horizon {
        return Err(SdpError::WeightCountMismatch { expected: horizon, got: weights.len() });
    }
    if let Some(k) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(SdpError::NonPositiveWeight(k));
    }
    let mut prog = base_program(problem);
    if lambda == 0.0 {
        return Ok(prog);
    }
    let (n, m) = (problem.state_dim(), problem.input_dim());
    let blocks = prog.layout.as_ref().expect("layout").stage_blocks.clone();
    let mut ts = Vec::with_capacity(horizon);
    for (k, &b) in blocks.iter().enumerate() {
        let t = prog.add_scalar(format!("t{k}"));
        ts.push(t);
        let mut vector = Vec::with_capacity(m * (m + 1) / 2);
        for j in 0..m {
            for i in 0..=j {
                let mut e = ScalarExpr::entry(b, n + m, n + i, n + j);
                if i != j {
                    e = scale_terms(e, std::f64::consts::SQRT_2);
                }
                vector.push(e);
            }
        }
        prog.soc.push(SocConstraint { bound: ScalarExpr::default().linear(t, 1.0), vector });
        prog.objective = std::mem::take(&mut prog.objective).linear(t, lambda * weights[k]);
    }
    prog.layout.as_mut().expect("layout").epigraph = Some(ts);
    Ok(prog)
}

fn scale_terms(e: ScalarExpr, s: f64) -> ScalarExpr {
    use super::program::ScalarTerm;
    ScalarExpr {
        constant: e.constant * s,
        terms: e
            .terms
            .into_iter()
            .map(|t| match t {
                ScalarTerm::Inner { var, coeff } => ScalarTerm::Inner { var, coeff: coeff * s },
                ScalarTerm::Linear { var, coeff } => ScalarTerm::Linear { var, coeff: coeff * s },
            })
            .collect(),
    }
}

/// Standard program with `Y_k = 0` and `U_k = 0` imposed on every stage whose
/// mask entry is `true`.
pub fn build_masked(problem: &ValidatedProblem, mask: &[bool]) -> Result<ConicProgram, SdpError> {
    let horizon = problem.horizon;
    if mask.len() != horizon {
        return Err(SdpError::MaskLengthMismatch { expected: horizon, got: mask.len() });
    }
    let (n, m) = (problem.state_dim(), problem.input_dim());
    let (_, eu) = selectors(n, m);
    let mut prog = base_program(problem);
    let blocks = prog.layout.as_ref().expect("layout").stage_blocks.clone();
    for (k, _) in mask.iter().enumerate().filter(|(_, &off)| off) {
        let b = blocks[k];
        prog.equalities.push(Equality::Matrix(SymExpr::zero(m).congruence(b, eu.clone(), 1.0)));
        for i in 0..m {
            for j in 0..n {
                prog.equalities.push(Equality::Scalar(ScalarExpr::entry(b, n + m, n + i, j)));
            }
        }
    }
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{double_integrator, validate};
    use crate::sdp::{solve, ClarabelBackend, SolveStatus};

    fn example(n: usize, chance: bool) -> ValidatedProblem {
        validate(&double_integrator(n, chance)).unwrap()
    }

    #[test]
    fn standard_program_shape() {
        let p = build_standard(&example(3, true));
        p.check().unwrap();
        assert_eq!(p.variables.len(), 4);
        // initial + 3 recursions
        assert_eq!(p.equalities.len(), 4);
        // 3 LMIs + terminal + 3 chance caps
        assert_eq!(p.psd.len(), 7);
        assert!(p.soc.is_empty());
    }

    #[test]
    fn weighted_validation() {
        let v = example(3, false);
        assert_eq!(build_weighted(&v, -1.0, &[1.0; 3]), Err(SdpError::NegativeLambda(-1.0)));
        assert_eq!(build_weighted(&v, 1.0, &[1.0, 0.0, 1.0]), Err(SdpError::NonPositiveWeight(1)));
        assert!(matches!(
            build_weighted(&v, 1.0, &[1.0; 2]),
            Err(SdpError::WeightCountMismatch { .. })
        ));
        let w = build_weighted(&v, 2.0, &[1.0; 3]).unwrap();
        w.check().unwrap();
        assert_eq!(w.soc.len(), 3);
        assert_eq!(build_weighted(&v, 0.0, &[1.0; 3]).unwrap(), build_standard(&v));
    }

    #[test]
    fn masked_validation() {
        let v = example(3, false);
        assert!(matches!(build_masked(&v, &[true]), Err(SdpError::MaskLengthMismatch { .. })));
        assert_eq!(build_masked(&v, &[false; 3]).unwrap(), build_standard(&v));
    }

    #[test]
    fn loose_terminal_needs_no_control() {
        let mut inst = double_integrator(1, false);
        inst.boundary.terminal_cov = DMatrix::identity(2, 2) * 1e6;
        let v = validate(&inst).unwrap();
        let sol = solve(&build_standard(&v), &mut ClarabelBackend::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.y[0][(0, 0)].abs() < 1e-6);
        // tr(0.5 I · Σ̄₀) = 3
        assert!((sol.transient_cost - 3.0).abs() < 1e-5, "{}", sol.transient_cost);
    }

    #[test]
    fn uncontrollable_is_infeasible() {
        let mut inst = double_integrator(1, false);
        inst.stages[0].input = DMatrix::zeros(2, 1);
        let dd = inst.stages[0].noise_covariance();
        inst.boundary.terminal_cov = dd + DMatrix::identity(2, 2) * 1e-3;
        let v = validate(&inst).unwrap();
        let sol = solve(&build_standard(&v), &mut ClarabelBackend::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }
}
