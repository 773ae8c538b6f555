//! Machine-readable artifacts: solution and Monte Carlo JSON documents and the
//! trajectory, trace, Pareto and sweep CSV tables.
//!
//! CSV numbers use 17 significant digits (`{:.16e}`); JSON numbers use the
//! shortest representation that parses back to the same `f64`. Non-finite
//! values become empty CSV cells and JSON `null`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dynamics::{FeedbackPolicy, MonteCarloReport};
use crate::irl1p::IterationTrace;
use crate::linalg;
use crate::model::{matrix_from_rows, rows_of};
use crate::sdp::{LosslessReport, SdpSolution, SolveStatus};
use crate::sparsity::{ParetoFront, ParetoPoint, Provenance};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("malformed solution document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// 17 significant digits, empty for non-finite values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

fn opt_num(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn csv_with_comment(comment: Option<&str>, header: &str, rows: Vec<String>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub k: usize,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    pub y: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k_gain: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDoc {
    #[serde(default)]
    pub manifest: Value,
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub j_sigma: Option<f64>,
    pub stages: Vec<StageDoc>,
    #[serde(rename = "Sigma_N")]
    pub sigma_n: Option<Vec<Vec<f64>>>,
    pub lossless: Option<LosslessReport>,
}

impl SolutionDoc {
    pub fn new(
        manifest: Value,
        solution: &SdpSolution,
        policy: Option<&FeedbackPolicy>,
        lossless: Option<&LosslessReport>,
    ) -> Self {
        let stages = (0..solution.horizon())
            .map(|k| StageDoc {
                k,
                sigma: rows_of(&solution.sigma[k]),
                u: rows_of(&solution.u[k]),
                y: rows_of(&solution.y[k]),
                k_gain: policy.and_then(|p| p.gains.get(k)).map(rows_of),
                t: solution.t.as_ref().map(|t| t[k]),
            })
            .collect();
        SolutionDoc {
            manifest,
            status: solution.status,
            objective: opt_num(solution.objective),
            j_sigma: opt_num(solution.transient_cost),
            stages,
            sigma_n: solution.terminal_cov().map(rows_of),
            lossless: lossless.cloned(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution document serializes") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self, ExportError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Gains stored in the document, one per stage.
    pub fn policy(&self) -> Result<FeedbackPolicy, ExportError> {
        let gains = self
            .stages
            .iter()
            .map(|s| {
                let rows = s
                    .k_gain
                    .as_ref()
                    .ok_or_else(|| ExportError::Malformed(format!("stage {} has no K", s.k)))?;
                matrix_from_rows(rows)
                    .ok_or_else(|| ExportError::Malformed(format!("stage {} K is ragged", s.k)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeedbackPolicy { gains })
    }

    pub fn terminal_cov(&self) -> Option<DMatrix<f64>> {
        self.sigma_n.as_ref().and_then(|r| matrix_from_rows(r))
    }
}

fn upper_names(n: usize) -> Vec<String> {
    let mut v = Vec::new();
    for i in 0..n {
        for j in i..n {
            v.push(format!("Sigma_{i}{j}"));
        }
    }
    v
}

/// Columns `k`, upper-triangle `Σ_k` entries (row-major), `y_lambda_max`,
/// `k_fro`; the terminal row leaves the last two empty.
pub fn trajectory_csv(
    covs: &[DMatrix<f64>],
    y: &[DMatrix<f64>],
    policy: Option<&FeedbackPolicy>,
    comment: Option<&str>,
) -> String {
    let n = covs.first().map_or(0, |c| c.nrows());
    let mut header = vec!["k".to_string()];
    header.extend(upper_names(n));
    header.push("y_lambda_max".into());
    header.push("k_fro".into());
    let rows = covs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut cells = vec![k.to_string()];
            for i in 0..n {
                for j in i..n {
                    cells.push(fmt_f64(s[(i, j)]));
                }
            }
            cells.push(y.get(k).map(|yk| fmt_f64(linalg::max_eigenvalue(yk))).unwrap_or_default());
            cells.push(
                policy
                    .and_then(|p| p.gains.get(k))
                    .map(|g| fmt_f64(linalg::frobenius(g)))
                    .unwrap_or_default(),
            );
            cells.join(",")
        })
        .collect();
    csv_with_comment(comment, &header.join(","), rows)
}

/// Columns `iter, J_Sigma, J_tau, max_residual, status`, then `w_k`,
/// `ynorm_k` and `ylmax_k` for every stage.
pub fn trace_csv(trace: &IterationTrace, horizon: usize, comment: Option<&str>) -> String {
    let mut header: Vec<String> =
        ["iter", "J_Sigma", "J_tau", "max_residual", "status"].iter().map(|s| s.to_string()).collect();
    for prefix in ["w", "ynorm", "ylmax"] {
        header.extend((0..horizon).map(|k| format!("{prefix}_{k}")));
    }
    let rows = trace
        .records
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.iteration.to_string(),
                fmt_f64(r.j_sigma),
                if r.status == SolveStatus::Optimal { r.j_tau.to_string() } else { String::new() },
                fmt_f64(r.max_residual),
                r.status.to_string(),
            ];
            for col in [&r.weights, &r.y_norms, &r.y_max_eigenvalues] {
                cells.extend((0..horizon).map(|k| col.get(k).copied().map(fmt_f64).unwrap_or_default()));
            }
            cells.join(",")
        })
        .collect();
    csv_with_comment(comment, &header.join(","), rows)
}

fn mask_bits(mask: &[bool]) -> String {
    mask.iter().map(|&m| if m { '1' } else { '0' }).collect()
}

/// One row per `J_τ` level: `J_tau, J_sigma, provenance, mask, feasible`.
/// Masks are written stage 0 first with `1` for a stage forced to zero.
/// Levels without an optimal solve carry an empty cost.
pub fn pareto_csv(front: &ParetoFront, horizon: usize, comment: Option<&str>) -> String {
    let rows = (0..=horizon)
        .map(|level| match front.best_at(level) {
            Some(p) => {
                let mask = match &p.provenance {
                    Provenance::BruteForce { mask } => mask_bits(mask),
                    Provenance::Irl1p { .. } => String::new(),
                };
                let on_front = front.points.iter().any(|q| q.j_tau == level);
                let tag = if on_front { "brute_force" } else { "brute_force_dominated" };
                format!("{level},{},{tag},{mask},true", fmt_f64(p.j_sigma))
            }
            None if front.failed_levels.contains(&level) => {
                format!("{level},,numerical_failure,,false")
            }
            None => format!("{level},,infeasible,,false"),
        })
        .collect();
    csv_with_comment(comment, "J_tau,J_sigma,provenance,mask,feasible", rows)
}

/// One row per `λ`: `lambda, J_sigma, J_tau, iterations, termination, ok`.
pub fn sweep_csv(points: &[ParetoPoint], comment: Option<&str>) -> String {
    let rows = points
        .iter()
        .map(|p| {
            let (lambda, iterations, termination) = match &p.provenance {
                Provenance::Irl1p { lambda, iterations, termination } => {
                    (*lambda, *iterations, termination.to_string())
                }
                Provenance::BruteForce { .. } => (f64::NAN, 0, String::new()),
            };
            let ok = p.is_ok();
            format!(
                "{},{},{},{iterations},{termination},{ok}",
                fmt_f64(lambda),
                fmt_f64(p.j_sigma),
                if ok { p.j_tau.to_string() } else { String::new() },
            )
        })
        .collect();
    csv_with_comment(comment, "lambda,J_sigma,J_tau,iterations,termination,ok", rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloDoc {
    pub manifest: Value,
    pub samples: usize,
    pub seed: u64,
    pub u_max: f64,
    pub violation_rates: Vec<f64>,
    pub max_violation_rate: f64,
    pub terminal_covariance: Vec<Vec<f64>>,
    pub reference_terminal_covariance: Option<Vec<Vec<f64>>>,
    /// `‖Σ̂_N − Σ_N‖_F / ‖Σ_N‖_F` against the reference.
    pub terminal_relative_error: Option<f64>,
}

impl MonteCarloDoc {
    pub fn new(manifest: Value, report: &MonteCarloReport, reference: Option<&DMatrix<f64>>) -> Self {
        let term = report.terminal_covariance();
        MonteCarloDoc {
            manifest,
            samples: report.samples,
            seed: report.seed,
            u_max: report.u_max,
            violation_rates: report.violation_rates.clone(),
            max_violation_rate: report.max_violation_rate(),
            terminal_covariance: rows_of(term),
            reference_terminal_covariance: reference.map(rows_of),
            terminal_relative_error: reference
                .map(|r| linalg::frobenius(&(term - r)) / linalg::frobenius(r))
                .and_then(opt_num),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
