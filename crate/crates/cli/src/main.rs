//! `covsteer` command-line tool.
//!
//! Exit codes: 0 success, 1 failure, 2 infeasible, 3 iteration limit,
//! 4 brute-force size cap, 5 input mismatch.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use covsteer::dynamics::{self, DynamicsError};
use covsteer::export::{self, MonteCarloDoc, SolutionDoc};
use covsteer::irl1p::{self, Irl1pConfig, Termination};
use covsteer::model::{self, ProblemInstance, ValidatedProblem};
use covsteer::sdp::{self, ClarabelBackend, SolveStatus, Tolerances};
use covsteer::sparsity::{self, SparsityError, SparsityThreshold};

use manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Success = 0,
    Failure = 1,
    Infeasible = 2,
    IterationLimit = 3,
    SizeCap = 4,
    Mismatch = 5,
}

struct Fail(Exit, String);

impl Fail {
    fn new(code: Exit, msg: impl Into<String>) -> Self {
        Fail(code, msg.into())
    }
}

type CmdResult = Result<Exit, Fail>;

#[derive(Parser)]
#[command(name = "covsteer", version, about = "Hands-off covariance steering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the standard covariance steering SDP.
    Solve(SolveArgs),
    /// Run the iteratively reweighted sparse feedback design.
    Irl1p(Irl1pArgs),
    /// Enumerate every support mask and report the per-J_tau optimum.
    Bruteforce(BruteArgs),
    /// Run the reweighted design for a list of penalty weights.
    Sweep(SweepArgs),
    /// Monte Carlo closed-loop simulation of a stored solution.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct ProblemArgs {
    /// Problem file (JSON).
    #[arg(conflicts_with = "builtin", required_unless_present = "builtin")]
    problem: Option<PathBuf>,
    /// Built-in problem label.
    #[arg(long)]
    builtin: Option<String>,
    /// Keep or drop the input chance constraint.
    #[arg(long, value_enum)]
    chance: Option<OnOff>,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct LoopArgs {
    /// Weight floor epsilon.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Relative gain-change tolerance for termination.
    #[arg(long = "eps-conv", default_value_t = 1e-6)]
    eps_conv: f64,
    /// Maximum number of reweighting iterations.
    #[arg(long, default_value_t = 50)]
    lmax: usize,
    /// Activity threshold on ||Y_k||_F; `rel:<x>` for a fraction of the largest.
    #[arg(long, default_value = "1e-6", value_parser = parse_threshold)]
    threshold: SparsityThreshold,
    /// Largest accepted lossless residual.
    #[arg(long = "lossless-tol", default_value_t = sdp::LOSSLESS_TOL)]
    lossless_tol: f64,
}

impl LoopArgs {
    fn config(&self, lambda: f64) -> Irl1pConfig {
        Irl1pConfig {
            lambda,
            epsilon: self.eps,
            eps_conv: self.eps_conv,
            l_max: self.lmax,
            threshold: self.threshold,
            lossless_tol: self.lossless_tol,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Largest accepted lossless residual.
    #[arg(long = "lossless-tol", default_value_t = sdp::LOSSLESS_TOL)]
    lossless_tol: f64,
}

#[derive(Args)]
struct Irl1pArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Penalty weight on the reweighted group norm.
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    loop_args: LoopArgs,
}

#[derive(Args)]
struct BruteArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Activity threshold on ||Y_k||_F; `rel:<x>` for a fraction of the largest.
    #[arg(long, default_value = "1e-6", value_parser = parse_threshold)]
    threshold: SparsityThreshold,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Largest horizon accepted.
    #[arg(long, default_value_t = sparsity::BRUTE_FORCE_CAP)]
    cap: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    out: OutArgs,
    /// `log:<lo>:<hi>:<count>` or a comma-separated list.
    #[arg(long, value_parser = parse_lambdas)]
    lambdas: LambdaList,
    #[command(flatten)]
    loop_args: LoopArgs,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Solution document written by `solve` or `irl1p`.
    #[arg(long)]
    solution: PathBuf,
    /// Number of closed-loop rollouts.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Base seed; results do not depend on the worker count.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Input-norm bound; defaults to the problem's chance constraint.
    #[arg(long = "u-max")]
    u_max: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_threshold(s: &str) -> Result<SparsityThreshold, String> {
    let (rel, num) = match s.strip_prefix("rel:") {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix("abs:").unwrap_or(s)),
    };
    let v: f64 = num.parse().map_err(|e| format!("{e}"))?;
    let t = if rel { SparsityThreshold::Relative(v) } else { SparsityThreshold::Absolute(v) };
    t.check()?;
    Ok(t)
}

#[derive(Debug, Clone)]
struct LambdaList(Vec<f64>);

fn parse_lambdas(s: &str) -> Result<LambdaList, String> {
    let bad = |what: &str| format!("invalid --lambdas value '{s}': {what}");
    let values = if let Some(rest) = s.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected log:<lo>:<hi>:<count>"));
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad("lo"))?;
        let hi: f64 = parts[1].parse().map_err(|_| bad("hi"))?;
        let count: usize = parts[2].parse().map_err(|_| bad("count"))?;
        if !(lo > 0.0 && hi >= lo) || count == 0 {
            return Err(bad("need 0 < lo <= hi and count >= 1"));
        }
        if count == 1 {
            vec![lo]
        } else {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count).map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)).collect()
        }
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad(t)))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(bad("values must be finite and nonnegative"));
    }
    Ok(LambdaList(values))
}

fn load(args: &ProblemArgs) -> Result<(ValidatedProblem, String), Fail> {
    let (mut inst, source): (ProblemInstance, String) = match (&args.builtin, &args.problem) {
        (Some(label), _) => {
            let inst = model::builtin(label).ok_or_else(|| {
                Fail::new(
                    Exit::Failure,
                    format!("unknown builtin '{label}'; known: {}", model::BUILTIN_LABELS.join(", ")),
                )
            })?;
            (inst, format!("builtin:{label}"))
        }
        (None, Some(path)) => {
            let inst = model::load_problem(path).map_err(|e| Fail::new(Exit::Failure, e.to_string()))?;
            (inst, path.display().to_string())
        }
        (None, None) => return Err(Fail::new(Exit::Failure, "no problem given")),
    };
    let source = match args.chance {
        Some(OnOff::Off) => {
            inst.chance = None;
            format!("{source} chance=off")
        }
        Some(OnOff::On) => {
            if inst.chance.is_none() {
                return Err(Fail::new(Exit::Failure, "problem has no chance constraint to enable"));
            }
            format!("{source} chance=on")
        }
        None => source,
    };
    let v = model::validate(&inst).map_err(|e| Fail::new(Exit::Failure, e.to_string()))?;
    Ok((v, source))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Fail> {
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(dir.join(name), contents))
        .map_err(|e| Fail::new(Exit::Failure, format!("writing {}: {e}", dir.join(name).display())))
}

fn write_manifest(dir: &Path, m: &RunManifest, jobs: Option<usize>) -> Result<(), Fail> {
    let text = serde_json::to_string_pretty(&m.full(dir, jobs)).expect("manifest serializes");
    write(dir, "manifest.json", &(text + "\n"))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Fail> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Fail::new(Exit::Failure, "--jobs must be at least 1"));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Fail::new(Exit::Failure, e.to_string()))?;
    Ok(pool.install(f))
}

fn status_exit(status: SolveStatus) -> Exit {
    match status {
        SolveStatus::Optimal => Exit::Success,
        SolveStatus::Infeasible => Exit::Infeasible,
        SolveStatus::IterationLimit => Exit::IterationLimit,
        SolveStatus::NumericalFailure => Exit::Failure,
    }
}

fn loop_config_json(c: &Irl1pConfig) -> Value {
    json!({
        "lambda": c.lambda,
        "epsilon": c.epsilon,
        "eps_conv": c.eps_conv,
        "l_max": c.l_max,
        "threshold": c.threshold.to_string(),
        "lossless_tol": c.lossless_tol,
    })
}

fn cmd_solve(a: &SolveArgs) -> CmdResult {
    let (problem, source) = load(&a.problem)?;
    let tol = Tolerances::from_env();
    let m = RunManifest::new("solve", source, json!({ "lossless_tol": a.lossless_tol }), tol);
    let sol = sdp::solve(&sdp::build_standard(&problem), &mut ClarabelBackend::new(tol));
    println!("status={}", sol.status);
    let dir = &a.out.out;
    write_manifest(dir, &m, None)?;
    if !sol.is_optimal() {
        let doc = SolutionDoc::new(m.embedded(), &sol, None, None);
        write(dir, "solution.json", &doc.to_json())?;
        return Ok(status_exit(sol.status));
    }
    let lossless = sdp::verify_lossless(&sol, a.lossless_tol).ok();
    let policy = dynamics::recover_gains(&sol).ok();
    let doc = SolutionDoc::new(m.embedded(), &sol, policy.as_ref(), lossless.as_ref());
    write(dir, "solution.json", &doc.to_json())?;
    let csv = export::trajectory_csv(&sol.sigma, &sol.y, policy.as_ref(), Some(&m.comment()));
    write(dir, "trajectory.csv", &csv)?;

    println!("objective={}", export::fmt_f64(sol.objective));
    if let Some(sn) = sol.terminal_cov() {
        let target = &problem.boundary.terminal_cov;
        let rel = covsteer::linalg::frobenius(&(sn - target)) / covsteer::linalg::frobenius(target);
        println!("terminal_relative_gap={}", export::fmt_f64(rel));
    }
    match &lossless {
        Some(r) => println!("lossless_max_residual={} pass={}", export::fmt_f64(r.max_residual), r.pass),
        None => eprintln!("lossless check could not be evaluated (singular covariance)"),
    }
    Ok(Exit::Success)
}

fn cmd_irl1p(a: &Irl1pArgs) -> CmdResult {
    let (problem, source) = load(&a.problem)?;
    let tol = Tolerances::from_env();
    let cfg = a.loop_args.config(a.lambda);
    let m = RunManifest::new("irl1p", source, loop_config_json(&cfg), tol);
    let res = irl1p::run(&problem, &cfg, &mut ClarabelBackend::new(tol))
        .map_err(|e| Fail::new(Exit::Failure, e.to_string()))?;
    let dir = &a.out.out;
    write_manifest(dir, &m, None)?;
    let trace = export::trace_csv(&res.trace, problem.horizon, Some(&m.comment()));
    write(dir, "trace.csv", &trace)?;
    if let Some(sol) = &res.solution {
        let lossless = sdp::verify_lossless(sol, cfg.lossless_tol).ok();
        let doc = SolutionDoc::new(m.embedded(), sol, res.policy.as_ref(), lossless.as_ref());
        write(dir, "solution.json", &doc.to_json())?;
        let csv = export::trajectory_csv(&sol.sigma, &sol.y, res.policy.as_ref(), Some(&m.comment()));
        write(dir, "trajectory.csv", &csv)?;
    }
    println!("termination={} iterations={}", res.termination, res.iterations());
    if let (Some(js), Some(jt)) = (res.j_sigma(), res.j_tau()) {
        println!("J_sigma={} J_tau={jt}", export::fmt_f64(js));
    }
    Ok(match res.termination {
        Termination::Converged => Exit::Success,
        Termination::IterationLimit => Exit::IterationLimit,
        Termination::SolverFailure(_) => match res.trace.last().map(|r| r.status) {
            Some(SolveStatus::Infeasible) => Exit::Infeasible,
            _ => Exit::Failure,
        },
    })
}

fn cmd_bruteforce(a: &BruteArgs) -> CmdResult {
    let (problem, source) = load(&a.problem)?;
    let tol = Tolerances::from_env();
    let cfg = json!({ "threshold": a.threshold.to_string(), "cap": a.cap });
    let m = RunManifest::new("bruteforce", source, cfg, tol);
    let backend = ClarabelBackend::new(tol);
    let front = with_pool(a.jobs, || sparsity::brute_force_pareto(&problem, &backend, a.threshold, a.cap))?
        .map_err(|e| match e {
            SparsityError::HorizonTooLarge(..) => Fail::new(Exit::SizeCap, e.to_string()),
            other => Fail::new(Exit::Failure, other.to_string()),
        })?;
    let dir = &a.out.out;
    write_manifest(dir, &m, a.jobs)?;
    write(dir, "pareto.csv", &export::pareto_csv(&front, problem.horizon, Some(&m.comment())))?;
    println!("solves={} infeasible_levels={:?} failed_levels={:?}", front.solves, front.infeasible_levels, front.failed_levels);
    for p in &front.points {
        println!("J_tau={} J_sigma={}", p.j_tau, export::fmt_f64(p.j_sigma));
    }
    Ok(Exit::Success)
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let (problem, source) = load(&a.problem)?;
    let tol = Tolerances::from_env();
    let cfg = a.loop_args.config(0.0);
    let mut cfg_json = loop_config_json(&cfg);
    cfg_json["lambda"] = json!(a.lambdas.0);
    let m = RunManifest::new("sweep", source, cfg_json, tol);
    let backend = ClarabelBackend::new(tol);
    let points = with_pool(a.jobs, || sparsity::lambda_sweep(&problem, &a.lambdas.0, &cfg, &backend))?
        .map_err(|e| Fail::new(Exit::Failure, e.to_string()))?;
    let dir = &a.out.out;
    write_manifest(dir, &m, a.jobs)?;
    write(dir, "sweep.csv", &export::sweep_csv(&points, Some(&m.comment())))?;
    let ok = points.iter().filter(|p| p.is_ok()).count();
    println!("lambdas={} ok={ok}", points.len());
    Ok(if ok > 0 { Exit::Success } else { Exit::Failure })
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let (problem, source) = load(&a.problem)?;
    let text = fs::read_to_string(&a.solution)
        .map_err(|e| Fail::new(Exit::Failure, format!("{}: {e}", a.solution.display())))?;
    let doc = SolutionDoc::parse(&text).map_err(|e| Fail::new(Exit::Failure, e.to_string()))?;
    let policy = doc.policy().map_err(|e| Fail::new(Exit::Mismatch, e.to_string()))?;
    let u_max = a.u_max.or(problem.chance.map(|c| c.u_max)).unwrap_or(f64::INFINITY);
    let tol = Tolerances::from_env();
    let cfg = json!({
        "solution": a.solution.display().to_string(),
        "samples": a.samples,
        "u_max": if u_max.is_finite() { json!(u_max) } else { Value::Null },
    });
    let mut m = RunManifest::new("simulate", source, cfg, tol);
    m.seed = Some(a.seed);
    let report = with_pool(a.jobs, || {
        dynamics::simulate_monte_carlo(&policy, &problem, a.samples, a.seed, u_max)
    })?
    .map_err(|e| match e {
        DynamicsError::DimensionMismatch(_) => Fail::new(Exit::Mismatch, e.to_string()),
        other => Fail::new(Exit::Failure, other.to_string()),
    })?;
    let reference = doc.terminal_cov().filter(|r| r.shape() == report.terminal_covariance().shape());
    let out = MonteCarloDoc::new(m.embedded(), &report, reference.as_ref());
    let dir = &a.out.out;
    write_manifest(dir, &m, a.jobs)?;
    write(dir, "mc_report.json", &out.to_json())?;
    println!("samples={} max_violation_rate={}", report.samples, export::fmt_f64(out.max_violation_rate));
    if let Some(e) = out.terminal_relative_error {
        println!("terminal_relative_error={}", export::fmt_f64(e));
    }
    Ok(Exit::Success)
}

fn main() -> ExitCode {
    // Usage errors map to 1; clap's own code 2 is reserved for infeasibility.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Failure as u8 } else { Exit::Success as u8 });
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Irl1p(a) => cmd_irl1p(a),
        Command::Bruteforce(a) => cmd_bruteforce(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    let code = match result {
        Ok(code) => code,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    };
    ExitCode::from(code as u8)
}
