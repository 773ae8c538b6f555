//! Problem data for discrete-time covariance steering.
//!
//! A [`ProblemInstance`] holds per-stage dynamics `x_{k+1} = A_k x_k + B_k u_k + D_k w_k`,
//! quadratic stage costs, the boundary covariances and an optional input-norm
//! chance constraint. Means are zero throughout; there is no way to express a
//! nonzero mean. [`validate`] checks every structural and definiteness
//! requirement and returns a [`ValidatedProblem`] that the solver stages accept.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Relative singular-value floor for invertibility of the transition matrix.
pub const TOL_RANK: f64 = 1e-10;
/// Symmetry tolerance (relative Frobenius) for matrices required to be symmetric.
pub const TOL_SYMMETRY: f64 = 1e-10;
/// Eigenvalue slack for positive semidefiniteness of the state cost.
pub const TOL_PSD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct StageDynamics {
    /// State transition `A_k` (n×n).
    pub transition: DMatrix<f64>,
    /// Input map `B_k` (n×m).
    pub input: DMatrix<f64>,
    /// Noise map `D_k` (n×p).
    pub noise: DMatrix<f64>,
}

impl StageDynamics {
    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise.ncols()
    }

    /// `D Dᵀ`, the per-step noise covariance injected into the state.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.noise * self.noise.transpose()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    /// State weight `Q_k` (symmetric PSD).
    pub state_weight: DMatrix<f64>,
    /// Input weight `R_k` (symmetric PD).
    pub input_weight: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConditions {
    /// Initial covariance, imposed exactly.
    pub initial_cov: DMatrix<f64>,
    /// Terminal covariance upper bound.
    pub terminal_cov: DMatrix<f64>,
}

/// `P(‖u_k‖₂ ≤ u_max) ≥ 1 − γ` at every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceConstraintSpec {
    pub u_max: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub label: Option<String>,
    pub horizon: usize,
    pub stages: Vec<StageDynamics>,
    pub costs: Vec<StageCost>,
    pub boundary: BoundaryConditions,
    pub chance: Option<ChanceConstraintSpec>,
}

impl ProblemInstance {
    pub fn state_dim(&self) -> usize {
        self.boundary.initial_cov.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.stages.first().map_or(0, StageDynamics::input_dim)
    }

    pub fn noise_dim(&self) -> usize {
        self.stages.first().map_or(0, StageDynamics::noise_dim)
    }

    pub fn with_chance(mut self, chance: Option<ChanceConstraintSpec>) -> Self {
        self.chance = chance;
        self
    }

    /// Replicates one stage `horizon` times.
    pub fn time_invariant(
        horizon: usize,
        dynamics: StageDynamics,
        cost: StageCost,
        boundary: BoundaryConditions,
        chance: Option<ChanceConstraintSpec>,
    ) -> Self {
        ProblemInstance {
            label: None,
            horizon,
            stages: vec![dynamics; horizon],
            costs: vec![cost; horizon],
            boundary,
            chance,
        }
    }
}

/// Which matrix of the instance a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixRole {
    Transition,
    Input,
    Noise,
    StateCost,
    InputCost,
    InitialCovariance,
    TerminalCovariance,
}

impl fmt::Display for MatrixRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MatrixRole::Transition => "A",
            MatrixRole::Input => "B",
            MatrixRole::Noise => "D",
            MatrixRole::StateCost => "Q",
            MatrixRole::InputCost => "R",
            MatrixRole::InitialCovariance => "Sigma0",
            MatrixRole::TerminalCovariance => "SigmaN",
        };
        f.write_str(s)
    }
}

fn stage_suffix(stage: &Option<usize>) -> String {
    stage.map(|k| format!(" at stage {k}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("transition matrix A is singular at stage {0}")]
    SingularTransition(usize),
    #[error("{which} is not positive definite{}", stage_suffix(.stage))]
    NotPositiveDefinite { which: MatrixRole, stage: Option<usize> },
    #[error("{which} is not positive semidefinite{}", stage_suffix(.stage))]
    NotPositiveSemidefinite { which: MatrixRole, stage: Option<usize> },
    #[error("{which} is not symmetric{}", stage_suffix(.stage))]
    NotSymmetric { which: MatrixRole, stage: Option<usize> },
    #[error("{which} has non-finite entries{}", stage_suffix(.stage))]
    NonFinite { which: MatrixRole, stage: Option<usize> },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("SigmaN - D_(N-1) D_(N-1)^T is not positive definite")]
    TerminalNoiseDominance,
    #[error("invalid chance constraint: {0}")]
    InvalidChance(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation error(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

/// A problem that passed [`validate`]. Cheap to clone and share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProblem(Arc<ProblemInstance>);

impl ValidatedProblem {
    pub fn instance(&self) -> &ProblemInstance {
        &self.0
    }
}

impl std::ops::Deref for ValidatedProblem {
    type Target = ProblemInstance;

    fn deref(&self) -> &ProblemInstance {
        &self.0
    }
}

/// Checks every invariant of the instance; all violations are reported together.
pub fn validate(instance: &ProblemInstance) -> Result<ValidatedProblem, ValidationError> {
    let mut out = Vec::new();
    let n = instance.state_dim();
    let big_n = instance.horizon;

    if big_n == 0 {
        out.push(Violation::DimensionMismatch("horizon must be at least 1".into()));
    }
    if instance.stages.len() != big_n {
        out.push(Violation::DimensionMismatch(format!(
            "{} stages for horizon {big_n}",
            instance.stages.len()
        )));
    }
    if instance.costs.len() != big_n {
        out.push(Violation::DimensionMismatch(format!(
            "{} cost entries for horizon {big_n}",
            instance.costs.len()
        )));
    }

    let m = instance.input_dim();
    let p = instance.noise_dim();
    for (k, st) in instance.stages.iter().enumerate() {
        let stage = Some(k);
        for (mat, which) in [
            (&st.transition, MatrixRole::Transition),
            (&st.input, MatrixRole::Input),
            (&st.noise, MatrixRole::Noise),
        ] {
            if !linalg::is_finite(mat) {
                out.push(Violation::NonFinite { which, stage });
            }
        }
        if st.transition.shape() != (n, n) {
            out.push(Violation::DimensionMismatch(format!(
                "A at stage {k} is {:?}, expected ({n}, {n})",
                st.transition.shape()
            )));
        } else if linalg::is_finite(&st.transition)
            && linalg::relative_min_singular_value(&st.transition) <= TOL_RANK
        {
            out.push(Violation::SingularTransition(k));
        }
        if st.input.shape() != (n, m) {
            out.push(Violation::DimensionMismatch(format!(
                "B at stage {k} is {:?}, expected ({n}, {m})",
                st.input.shape()
            )));
        }
        if st.noise.shape() != (n, p) {
            out.push(Violation::DimensionMismatch(format!(
                "D at stage {k} is {:?}, expected ({n}, {p})",
                st.noise.shape()
            )));
        }
    }
    if m == 0 {
        out.push(Violation::DimensionMismatch("input dimension is zero".into()));
    }

    for (k, c) in instance.costs.iter().enumerate() {
        let stage = Some(k);
        if check_symmetric(&c.state_weight, MatrixRole::StateCost, stage, (n, n), &mut out)
            && linalg::min_eigenvalue(&c.state_weight)
                < -TOL_PSD * linalg::frobenius(&c.state_weight).max(1.0)
        {
            out.push(Violation::NotPositiveSemidefinite { which: MatrixRole::StateCost, stage });
        }
        if check_symmetric(&c.input_weight, MatrixRole::InputCost, stage, (m, m), &mut out)
            && !linalg::is_positive_definite(&c.input_weight)
        {
            out.push(Violation::NotPositiveDefinite { which: MatrixRole::InputCost, stage });
        }
    }

    let b = &instance.boundary;
    for (mat, which) in [
        (&b.initial_cov, MatrixRole::InitialCovariance),
        (&b.terminal_cov, MatrixRole::TerminalCovariance),
    ] {
        if check_symmetric(mat, which, None, (n, n), &mut out)
            && !linalg::is_positive_definite(mat)
        {
            out.push(Violation::NotPositiveDefinite { which, stage: None });
        }
    }
    if let Some(last) = instance.stages.last() {
        if last.noise.nrows() == n
            && b.terminal_cov.shape() == (n, n)
            && linalg::is_finite(&b.terminal_cov)
            && linalg::is_finite(&last.noise)
        {
            let margin = &b.terminal_cov - last.noise_covariance();
            if !linalg::is_positive_definite(&margin) {
                out.push(Violation::TerminalNoiseDominance);
            }
        }
    }

    if let Some(cc) = &instance.chance {
        if !(cc.u_max > 0.0 && cc.u_max.is_finite()) {
            out.push(Violation::InvalidChance(format!("u_max = {} must be positive", cc.u_max)));
        }
        if !(cc.gamma > 0.0 && cc.gamma < 1.0) {
            out.push(Violation::InvalidChance(format!("gamma = {} must lie in (0, 1)", cc.gamma)));
        }
    }

    if out.is_empty() {
        Ok(ValidatedProblem(Arc::new(instance.clone())))
    } else {
        Err(ValidationError { violations: out })
    }
}

/// Returns true when the matrix has the expected shape, is finite and symmetric.
fn check_symmetric(
    mat: &DMatrix<f64>,
    which: MatrixRole,
    stage: Option<usize>,
    shape: (usize, usize),
    out: &mut Vec<Violation>,
) -> bool {
    if mat.shape() != shape {
        out.push(Violation::DimensionMismatch(format!(
            "{which}{} is {:?}, expected {shape:?}",
            stage_suffix(&stage),
            mat.shape()
        )));
        return false;
    }
    if !linalg::is_finite(mat) {
        out.push(Violation::NonFinite { which, stage });
        return false;
    }
    if linalg::asymmetry(mat) > TOL_SYMMETRY {
        out.push(Violation::NotSymmetric { which, stage });
        return false;
    }
    true
}

/// The double-integrator example: `A = [[1, 0.2], [0, 1]]`, `B = [0.02, 0.2]ᵀ`,
/// `D = [[0.4, 0], [0.4, 0.6]]`, `Q = 0.5 I`, `R = 1`, replicated over `horizon`
/// stages, with optional chance constraint `u_max = 10`, `γ = 0.03`.
///
/// Panics if `horizon` is zero.
pub fn double_integrator(horizon: usize, with_chance: bool) -> ProblemInstance {
    assert!(horizon >= 1, "horizon must be at least 1");
    let dynamics = StageDynamics {
        transition: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]),
        input: DMatrix::from_row_slice(2, 1, &[0.02, 0.2]),
        noise: DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.4, 0.6]),
    };
    let cost = StageCost {
        state_weight: DMatrix::identity(2, 2) * 0.5,
        input_weight: DMatrix::identity(1, 1),
    };
    let boundary = BoundaryConditions {
        initial_cov: DMatrix::from_row_slice(2, 2, &[5.0, -1.0, -1.0, 1.0]),
        terminal_cov: DMatrix::from_row_slice(2, 2, &[0.5, -0.4, -0.4, 2.0]),
    };
    let chance = with_chance.then_some(ChanceConstraintSpec { u_max: 10.0, gamma: 0.03 });
    let mut p = ProblemInstance::time_invariant(horizon, dynamics, cost, boundary, chance);
    p.label = Some(format!("example-N{horizon}{}", if with_chance { "-cc" } else { "" }));
    p
}

/// Named built-in instances: `di8` (N = 8, no chance constraint) and
/// `di29-cc` (N = 29, chance constrained). `di29` drops the chance
/// constraint from the latter.
pub fn builtin(label: &str) -> Option<ProblemInstance> {
    let (n, chance) = match label {
        "di8" => (8, false),
        "di8-cc" => (8, true),
        "di29-cc" => (29, true),
        "di29" => (29, false),
        _ => return None,
    };
    let mut p = double_integrator(n, chance);
    p.label = Some(label.to_string());
    Some(p)
}

pub const BUILTIN_LABELS: &[&str] = &["di8", "di8-cc", "di29-cc", "di29"];

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
}

/// Matrices are written as arrays of rows; a bare number is accepted for 1×1.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixField {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixField {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixField::Rows(rows_of(m))
    }

    fn into_matrix(self, field: &str) -> Result<DMatrix<f64>, LoadError> {
        match self {
            MatrixField::Scalar(v) => Ok(DMatrix::from_element(1, 1, v)),
            MatrixField::Rows(rows) => matrix_from_rows(&rows)
                .ok_or_else(|| LoadError::Schema(format!("{field}: rows have unequal length"))),
        }
    }
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return None;
    }
    Some(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageFile {
    #[serde(rename = "A")]
    a: MatrixField,
    #[serde(rename = "B")]
    b: MatrixField,
    #[serde(rename = "D")]
    d: MatrixField,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    #[serde(rename = "Q")]
    q: MatrixField,
    #[serde(rename = "R")]
    r: MatrixField,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvariantStageFile {
    #[serde(rename = "A")]
    a: MatrixField,
    #[serde(rename = "B")]
    b: MatrixField,
    #[serde(rename = "D")]
    d: MatrixField,
    #[serde(rename = "Q")]
    q: MatrixField,
    #[serde(rename = "R")]
    r: MatrixField,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum StagesField {
    PerStage(Vec<StageFile>),
    Invariant(InvariantStageFile),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundaryFile {
    #[serde(rename = "Sigma0")]
    sigma0: MatrixField,
    #[serde(rename = "SigmaN")]
    sigma_n: MatrixField,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    horizon: usize,
    stages: StagesField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    costs: Option<Vec<CostFile>>,
    boundary: BoundaryFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chance: Option<ChanceConstraintSpec>,
    // Accepted only when identically zero.
    #[serde(default, skip_serializing)]
    mu0: Option<Vec<f64>>,
    #[serde(default, rename = "muN", skip_serializing)]
    mu_n: Option<Vec<f64>>,
}

/// Parses a problem document. The result is not validated.
pub fn parse_problem(text: &str) -> Result<ProblemInstance, LoadError> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => LoadError::Schema(e.to_string()),
            _ => LoadError::Parse { line: e.line(), column: e.column(), message: e.to_string() },
        }
    })?;
    if file.horizon == 0 {
        return Err(LoadError::Schema("horizon must be at least 1".into()));
    }
    for (name, mu) in [("mu0", &file.mu0), ("muN", &file.mu_n)] {
        if mu.as_ref().is_some_and(|v| v.iter().any(|x| *x != 0.0)) {
            return Err(LoadError::Schema(format!("{name}: nonzero means are not supported")));
        }
    }
    let horizon = file.horizon;
    let (stages, costs) = match file.stages {
        StagesField::Invariant(s) => {
            if file.costs.is_some() {
                return Err(LoadError::Schema(
                    "costs must be omitted when stages is a single time-invariant object".into(),
                ));
            }
            let dynamics = StageDynamics {
                transition: s.a.into_matrix("A")?,
                input: s.b.into_matrix("B")?,
                noise: s.d.into_matrix("D")?,
            };
            let cost = StageCost {
                state_weight: s.q.into_matrix("Q")?,
                input_weight: s.r.into_matrix("R")?,
            };
            (vec![dynamics; horizon], vec![cost; horizon])
        }
        StagesField::PerStage(list) => {
            let costs = file
                .costs
                .ok_or_else(|| LoadError::Schema("missing field `costs`".into()))?;
            if list.len() != horizon || costs.len() != horizon {
                return Err(LoadError::Schema(format!(
                    "horizon {horizon} but {} stages and {} costs",
                    list.len(),
                    costs.len()
                )));
            }
            let stages = list
                .into_iter()
                .enumerate()
                .map(|(k, s)| {
                    Ok(StageDynamics {
                        transition: s.a.into_matrix(&format!("stages[{k}].A"))?,
                        input: s.b.into_matrix(&format!("stages[{k}].B"))?,
                        noise: s.d.into_matrix(&format!("stages[{k}].D"))?,
                    })
                })
                .collect::<Result<Vec<_>, LoadError>>()?;
            let costs = costs
                .into_iter()
                .enumerate()
                .map(|(k, c)| {
                    Ok(StageCost {
                        state_weight: c.q.into_matrix(&format!("costs[{k}].Q"))?,
                        input_weight: c.r.into_matrix(&format!("costs[{k}].R"))?,
                    })
                })
                .collect::<Result<Vec<_>, LoadError>>()?;
            (stages, costs)
        }
    };
    Ok(ProblemInstance {
        label: file.label,
        horizon,
        stages,
        costs,
        boundary: BoundaryConditions {
            initial_cov: file.boundary.sigma0.into_matrix("Sigma0")?,
            terminal_cov: file.boundary.sigma_n.into_matrix("SigmaN")?,
        },
        chance: file.chance,
    })
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemInstance, LoadError> {
    parse_problem(&fs::read_to_string(path)?)
}

/// Serializes with explicit per-stage arrays.
pub fn problem_to_json(instance: &ProblemInstance) -> String {
    let file = ProblemFile {
        label: instance.label.clone(),
        horizon: instance.horizon,
        stages: StagesField::PerStage(
            instance
                .stages
                .iter()
                .map(|s| StageFile {
                    a: MatrixField::from_matrix(&s.transition),
                    b: MatrixField::from_matrix(&s.input),
                    d: MatrixField::from_matrix(&s.noise),
                })
                .collect(),
        ),
        costs: Some(
            instance
                .costs
                .iter()
                .map(|c| CostFile {
                    q: MatrixField::from_matrix(&c.state_weight),
                    r: MatrixField::from_matrix(&c.input_weight),
                })
                .collect(),
        ),
        boundary: BoundaryFile {
            sigma0: MatrixField::from_matrix(&instance.boundary.initial_cov),
            sigma_n: MatrixField::from_matrix(&instance.boundary.terminal_cov),
        },
        chance: instance.chance,
        mu0: None,
        mu_n: None,
    };
    serde_json::to_string_pretty(&file).expect("problem serialization cannot fail")
}

pub fn save_problem(instance: &ProblemInstance, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, problem_to_json(instance))
}
