//! Solver-agnostic conic programs over symmetric-matrix and scalar blocks.
//!
//! Affine symmetric expressions are sums of congruences `s · L X Lᵀ` of matrix
//! blocks, scalar-times-matrix terms and a constant. That is enough to express
//! sub-block extraction, the covariance recursion and the LMIs of the steering
//! problem without any reshaping machinery.

use nalgebra::DMatrix;
use thiserror::Error;

use super::StageLayout;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// `d×d` symmetric matrix block.
    Symmetric(usize),
    Scalar,
}

impl VarKind {
    /// Number of free scalar entries.
    pub fn len(self) -> usize {
        match self {
            VarKind::Symmetric(d) => d * (d + 1) / 2,
            VarKind::Scalar => 1,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Matrix(DMatrix<f64>),
    Scalar(f64),
}

impl BlockValue {
    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            BlockValue::Matrix(m) => Some(m),
            BlockValue::Scalar(_) => None,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            BlockValue::Scalar(v) => Some(*v),
            BlockValue::Matrix(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymTerm {
    /// `scale · L X Lᵀ` for a symmetric block `X`; `L` is `dim × block_dim`.
    Congruence { var: VarId, left: DMatrix<f64>, scale: f64 },
    /// `t · C` for a scalar block `t` and symmetric `C`.
    Scaled { var: VarId, coeff: DMatrix<f64> },
}

/// Affine expression with symmetric `dim × dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct SymExpr {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub terms: Vec<SymTerm>,
}

impl SymExpr {
    pub fn constant(c: DMatrix<f64>) -> Self {
        SymExpr { dim: c.nrows(), constant: linalg::symmetrize(&c), terms: Vec::new() }
    }

    pub fn zero(dim: usize) -> Self {
        SymExpr::constant(DMatrix::zeros(dim, dim))
    }

    /// The block itself.
    pub fn var(var: VarId, dim: usize) -> Self {
        SymExpr::zero(dim).congruence(var, DMatrix::identity(dim, dim), 1.0)
    }

    pub fn congruence(mut self, var: VarId, left: DMatrix<f64>, scale: f64) -> Self {
        self.terms.push(SymTerm::Congruence { var, left, scale });
        self
    }

    pub fn scaled(mut self, var: VarId, coeff: DMatrix<f64>) -> Self {
        self.terms.push(SymTerm::Scaled { var, coeff: linalg::symmetrize(&coeff) });
        self
    }

    pub fn evaluate(&self, values: &[BlockValue]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            match t {
                SymTerm::Congruence { var, left, scale } => {
                    let x = values[var.0].as_matrix().expect("matrix block");
                    out += (left * x * left.transpose()) * *scale;
                }
                SymTerm::Scaled { var, coeff } => {
                    out += coeff * values[var.0].as_scalar().expect("scalar block");
                }
            }
        }
        linalg::symmetrize(&out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarTerm {
    /// `⟨C, X⟩ = tr(C X)` for a symmetric block `X`.
    Inner { var: VarId, coeff: DMatrix<f64> },
    /// `c · t` for a scalar block `t`.
    Linear { var: VarId, coeff: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarExpr {
    pub constant: f64,
    pub terms: Vec<ScalarTerm>,
}

impl ScalarExpr {
    pub fn constant(c: f64) -> Self {
        ScalarExpr { constant: c, terms: Vec::new() }
    }

    pub fn inner(mut self, var: VarId, coeff: DMatrix<f64>) -> Self {
        self.terms.push(ScalarTerm::Inner { var, coeff: linalg::symmetrize(&coeff) });
        self
    }

    pub fn linear(mut self, var: VarId, coeff: f64) -> Self {
        self.terms.push(ScalarTerm::Linear { var, coeff });
        self
    }

    /// Single entry `X[i, j]` of a symmetric block.
    pub fn entry(var: VarId, dim: usize, i: usize, j: usize) -> Self {
        let mut c = DMatrix::zeros(dim, dim);
        if i == j {
            c[(i, i)] = 1.0;
        } else {
            c[(i, j)] = 0.5;
            c[(j, i)] = 0.5;
        }
        ScalarExpr::default().inner(var, c)
    }

    pub fn evaluate(&self, values: &[BlockValue]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|t| match t {
                    ScalarTerm::Inner { var, coeff } => {
                        let x = values[var.0].as_matrix().expect("matrix block");
                        coeff.dot(x)
                    }
                    ScalarTerm::Linear { var, coeff } => {
                        coeff * values[var.0].as_scalar().expect("scalar block")
                    }
                })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Equality {
    /// Symmetric expression equal to zero.
    Matrix(SymExpr),
    /// Scalar expression equal to zero.
    Scalar(ScalarExpr),
}

/// `bound ≥ ‖vector‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub bound: ScalarExpr,
    pub vector: Vec<ScalarExpr>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProgramError {
    #[error("constraint references undeclared variable {0}")]
    UnknownVariable(usize),
    #[error("term on variable {var} has incompatible shape: {detail}")]
    ShapeMismatch { var: usize, detail: String },
}

/// Minimize a linear objective subject to affine equalities, PSD memberships
/// and second-order cone memberships.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProgram {
    pub variables: Vec<Variable>,
    pub objective: ScalarExpr,
    pub equalities: Vec<Equality>,
    pub psd: Vec<SymExpr>,
    pub soc: Vec<SocConstraint>,
    /// Present for programs built from a steering problem.
    pub layout: Option<StageLayout>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_symmetric(&mut self, name: impl Into<String>, dim: usize) -> VarId {
        self.variables.push(Variable { name: name.into(), kind: VarKind::Symmetric(dim) });
        VarId(self.variables.len() - 1)
    }

    pub fn add_scalar(&mut self, name: impl Into<String>) -> VarId {
        self.variables.push(Variable { name: name.into(), kind: VarKind::Scalar });
        VarId(self.variables.len() - 1)
    }

    pub fn kind(&self, var: VarId) -> VarKind {
        self.variables[var.0].kind
    }

    /// Total number of scalar unknowns.
    pub fn num_entries(&self) -> usize {
        self.variables.iter().map(|v| v.kind.len()).sum()
    }

    pub fn evaluate_objective(&self, values: &[BlockValue]) -> f64 {
        self.objective.evaluate(values)
    }

    /// Checks that every term refers to a declared block of matching shape.
    pub fn check(&self) -> Result<(), ProgramError> {
        let nvars = self.variables.len();
        let kind_of = |v: VarId| {
            self.variables.get(v.0).map(|x| x.kind).ok_or(ProgramError::UnknownVariable(v.0))
        };
        let check_scalar = |e: &ScalarExpr| -> Result<(), ProgramError> {
            for t in &e.terms {
                match t {
                    ScalarTerm::Inner { var, coeff } => match kind_of(*var)? {
                        VarKind::Symmetric(d) if coeff.shape() == (d, d) => {}
                        k => {
                            return Err(ProgramError::ShapeMismatch {
                                var: var.0,
                                detail: format!("inner product {:?} with {k:?}", coeff.shape()),
                            })
                        }
                    },
                    ScalarTerm::Linear { var, .. } => {
                        if kind_of(*var)? != VarKind::Scalar {
                            return Err(ProgramError::ShapeMismatch {
                                var: var.0,
                                detail: "linear coefficient on a matrix block".into(),
                            });
                        }
                    }
                }
            }
            Ok(())
        };
        let check_sym = |e: &SymExpr| -> Result<(), ProgramError> {
            if e.constant.shape() != (e.dim, e.dim) {
                return Err(ProgramError::ShapeMismatch {
                    var: nvars,
                    detail: format!("constant {:?} for dimension {}", e.constant.shape(), e.dim),
                });
            }
            for t in &e.terms {
                match t {
                    SymTerm::Congruence { var, left, .. } => match kind_of(*var)? {
                        VarKind::Symmetric(d) if left.shape() == (e.dim, d) => {}
                        k => {
                            return Err(ProgramError::ShapeMismatch {
                                var: var.0,
                                detail: format!("congruence {:?} with {k:?}", left.shape()),
                            })
                        }
                    },
                    SymTerm::Scaled { var, coeff } => {
                        if kind_of(*var)? != VarKind::Scalar || coeff.shape() != (e.dim, e.dim) {
                            return Err(ProgramError::ShapeMismatch {
                                var: var.0,
                                detail: "scaled term needs a scalar block".into(),
                            });
                        }
                    }
                }
            }
            Ok(())
        };
        check_scalar(&self.objective)?;
        for eq in &self.equalities {
            match eq {
                Equality::Matrix(e) => check_sym(e)?,
                Equality::Scalar(e) => check_scalar(e)?,
            }
        }
        for e in &self.psd {
            check_sym(e)?;
        }
        for c in &self.soc {
            check_scalar(&c.bound)?;
            for e in &c.vector {
                check_scalar(e)?;
            }
        }
        Ok(())
    }

    /// Worst equality residual, smallest PSD eigenvalue and smallest SOC
    /// margin `bound − ‖vector‖` at the given point.
    pub fn feasibility(&self, values: &[BlockValue]) -> Feasibility {
        let mut eq = 0.0f64;
        for e in &self.equalities {
            let r = match e {
                Equality::Matrix(m) => m.evaluate(values).amax(),
                Equality::Scalar(s) => s.evaluate(values).abs(),
            };
            eq = eq.max(r);
        }
        let psd = self
            .psd
            .iter()
            .map(|e| linalg::min_eigenvalue(&e.evaluate(values)))
            .fold(f64::INFINITY, f64::min);
        let soc = self
            .soc
            .iter()
            .map(|c| {
                let norm =
                    c.vector.iter().map(|v| v.evaluate(values).powi(2)).sum::<f64>().sqrt();
                c.bound.evaluate(values) - norm
            })
            .fold(f64::INFINITY, f64::min);
        Feasibility { max_equality_residual: eq, min_psd_eigenvalue: psd, min_soc_margin: soc }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub max_equality_residual: f64,
    pub min_psd_eigenvalue: f64,
    pub min_soc_margin: f64,
}
