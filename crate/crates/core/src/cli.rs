//! Command line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::assembly::AssembledNlp;
use crate::benchmarks::{benchmark, register_builtin_benchmarks, Benchmark};
use crate::error::{Error, Result};
use crate::fespace::FeSpace;
use crate::lifted::export_lifted_nlp;
use crate::mesh::Mesh;
use crate::ocp::{check_derivatives, DerivativeSample, MethodParams};
use crate::polybasis::verify_norm_constants;
use crate::solver::{initial_guess, solve, strict_positivity_check, SolveStatus, SolverOptions};
use crate::sparse::SparseOperator;
use crate::study::{run_study, write_study};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "ocp-fem", version, about = "Finite element penalty-barrier solver for optimal control problems")]
pub struct Cli {
    /// TOML file supplying defaults for any flag; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one benchmark at a single mesh size.
    Solve(SolveArgs),
    /// Run an h-refinement study and fit convergence orders.
    Study(StudyArgs),
    /// Check the norm constants of the unit-value minimizers for degrees 0..=d-max.
    NormCheck(NormCheckArgs),
    /// Write the lifted constrained problem in text form.
    ExportNlp(SolveArgs),
    /// Write sparsity patterns of the assembled operators as coordinate triplets.
    Sparsity(SolveArgs),
    /// Compare coded callback derivatives with finite differences.
    CheckDerivatives(CheckArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Comma separated, strictly decreasing mesh sizes.
    #[arg(long, value_delimiter = ',')]
    pub h_list: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NormCheckArgs {
    #[arg(long)]
    pub d_max: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
}

/// Config file schema. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: Option<String>,
    pub h: Option<f64>,
    pub d: Option<usize>,
    pub sigma: Option<f64>,
    pub h_list: Option<Vec<f64>>,
    pub d_max: Option<usize>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    /// Mesh breakpoints shared by all components; replaces the uniform mesh of width `h`.
    pub breakpoints: Option<Vec<f64>>,
    pub solver: Option<SolverConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub grad_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub boundary_fraction: Option<f64>,
    pub regularization_floor: Option<f64>,
    /// `[[omega, tau], ...]`, ending at the method's values.
    pub continuation: Option<Vec<[f64; 2]>>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("invalid config: {e}")))
    }

    pub fn solver_options(&self) -> SolverOptions<f64> {
        let mut o = SolverOptions::default();
        if let Some(s) = &self.solver {
            o.grad_tol = s.grad_tol.or(o.grad_tol);
            o.max_iters = s.max_iters.unwrap_or(o.max_iters);
            o.boundary_fraction = s.boundary_fraction.unwrap_or(o.boundary_fraction);
            o.regularization_floor = s.regularization_floor.unwrap_or(o.regularization_floor);
            o.continuation = s.continuation.as_ref().map(|c| c.iter().map(|p| (p[0], p[1])).collect());
        }
        o
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_)
            | Error::InvalidDomain { .. }
            | Error::InvalidCount(_)
            | Error::InvalidBreakpoints(_)
            | Error::UnsupportedDegree(_)
            | Error::UnsupportedOrder(_)
            | Error::DegreeContinuityConflict { .. }
            | Error::InsufficientData(_) => Failure::Usage(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` and runs the selected subcommand.
pub fn cli_main<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let config = match cli.config.as_deref().map(Config::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(&a, &config),
        Command::Study(a) => cmd_study(&a, &config),
        Command::NormCheck(a) => cmd_norm_check(&a, &config),
        Command::ExportNlp(a) => cmd_export(&a, &config),
        Command::Sparsity(a) => cmd_sparsity(&a, &config),
        Command::CheckDerivatives(a) => cmd_check(&a, &config),
    };
    match outcome {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("failure: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

struct Resolved {
    bench: Benchmark,
    h: f64,
    d: usize,
    sigma: f64,
    out: PathBuf,
}

fn resolve(a: &SolveArgs, c: &Config) -> std::result::Result<Resolved, Failure> {
    let name = a.problem.clone().or_else(|| c.problem.clone()).ok_or_else(|| {
        Failure::Usage(format!(
            "--problem is required (one of: {})",
            register_builtin_benchmarks().join(", ")
        ))
    })?;
    let h = a.h.or(c.h).unwrap_or(0.125);
    let d = a.d.or(c.d).unwrap_or(4);
    let sigma = a.sigma.or(c.sigma).unwrap_or(1.0);
    let out = a.out.clone().or_else(|| c.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok(Resolved {
        bench: benchmark(&name)?,
        h,
        d,
        sigma,
        out,
    })
}

fn build_space(r: &Resolved, c: &Config) -> Result<FeSpace<f64>> {
    match &c.breakpoints {
        Some(bp) => {
            let mesh = Mesh::from_breakpoints(bp)?;
            let dims = r.bench.problem.dims();
            FeSpace::shared(&mesh, r.d, dims.n_y, dims.n_z)
        }
        None => r.bench.space(r.h, r.d),
    }
}

fn build_nlp<'a>(r: &'a Resolved, c: &Config) -> Result<AssembledNlp<'a, f64, dyn crate::ocp::OcpProblem<f64>>> {
    let space = build_space(r, c)?;
    let mesh_ok = space.meshes().iter().all(|m| m.validate_quasi_uniform(r.sigma));
    if !mesh_ok {
        return Err(Error::InvalidParameter(format!(
            "mesh violates the quasi-uniformity ratio sigma = {}",
            r.sigma
        )));
    }
    let h = match &c.breakpoints {
        Some(_) => space.meshes().iter().map(Mesh::mesh_size).fold(0.0, f64::max),
        None => r.h,
    };
    let params = MethodParams::default_rule(h, r.sigma, r.d)?;
    AssembledNlp::new(r.bench.problem.as_ref(), space, params)
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::Solver(e.to_string())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> std::result::Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(io_err)?;
    Ok(path)
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    problem: &'a str,
    params: MethodParams<f64>,
    n_dofs: usize,
    n_points: usize,
    report: &'a crate::solver::SolveReport<f64>,
    min_z: f64,
}

fn cmd_solve(a: &SolveArgs, c: &Config) -> CmdResult {
    let r = resolve(a, c)?;
    let nlp = build_nlp(&r, c)?;
    let opts = c.solver_options();
    let report = solve(&nlp, &initial_guess(&nlp), &opts)?;
    let pos = strict_positivity_check(&report, &nlp, None)?;
    println!("problem    = {}", r.bench.name);
    println!("h = {}, d = {}, omega = {:e}, tau = {:e}", r.h, r.d, nlp.params().omega, nlp.params().tau);
    println!("N = {}, M = {}", nlp.n_dofs(), nlp.n_points());
    println!("status     = {}", report.status.as_str());
    println!("iterations = {}", report.iterations);
    println!("grad_norm  = {:e}", report.grad_norm);
    println!("objective  = {}", report.terms.f);
    println!("total      = {}", report.terms.total);
    println!("residual   = {:e}", report.residual);
    if let Some(a) = r.bench.analytic {
        println!("gap        = {:e}", report.terms.f - a.optimal_cost);
    }
    if nlp.dims().n_z > 0 {
        println!("min_z      = {:e}", pos.min_z);
    }
    let summary = SolveSummary {
        problem: r.bench.name,
        params: nlp.params(),
        n_dofs: nlp.n_dofs(),
        n_points: nlp.n_points(),
        report: &report,
        min_z: pos.min_z,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Solver(e.to_string()))?;
    let path = write_file(&r.out, &format!("solve_{}.json", r.bench.name), &(json + "\n"))?;
    println!("wrote {}", path.display());
    if report.status != SolveStatus::Converged {
        return Err(Failure::Solver(format!("solver stopped with status {}", report.status.as_str())));
    }
    Ok(())
}

fn cmd_study(a: &StudyArgs, c: &Config) -> CmdResult {
    let name = a
        .problem
        .clone()
        .or_else(|| c.problem.clone())
        .ok_or_else(|| Failure::Usage("--problem is required".into()))?;
    let d = a.d.or(c.d).unwrap_or(4);
    let h_list = a
        .h_list
        .clone()
        .or_else(|| c.h_list.clone())
        .unwrap_or_else(|| vec![0.25, 0.125, 0.0625, 0.03125]);
    let out = a.out.clone().or_else(|| c.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let result = run_study(&name, d, &h_list, Some(c.solver_options()))?;
    println!("{:>10} {:>6} {:>6} {:>5} {:>20} {:>12} {:>12} {:>12}", "h", "N", "M", "iter", "status", "gap", "residual", "x_error");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
    for row in &result.rows {
        println!(
            "{:>10} {:>6} {:>6} {:>5} {:>20} {:>12} {:>12} {:>12}",
            row.h,
            row.n_dofs,
            row.n_points,
            row.iterations,
            row.status.as_str(),
            fmt(row.objective_gap),
            format!("{:.3e}", row.residual),
            fmt(row.x_error)
        );
    }
    println!("reference order (d-3)/4 = {}", result.reference_order);
    for f in &result.fits {
        match (f.order, &f.skipped) {
            (Some(o), _) => println!("fitted order {:<14} = {o:.4}", f.metric),
            (None, Some(why)) => println!("fitted order {:<14} skipped: {why}", f.metric),
            (None, None) => {}
        }
    }
    let (csv, json) = write_study(&out, &result)?;
    println!("wrote {}", csv.display());
    println!("wrote {}", json.display());
    if !result.all_converged() {
        return Err(Failure::Solver("at least one study row did not converge".into()));
    }
    Ok(())
}

fn cmd_norm_check(a: &NormCheckArgs, c: &Config) -> CmdResult {
    let d_max = a.d_max.or(c.d_max).unwrap_or(30);
    let out = a.out.clone().or_else(|| c.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let rows = verify_norm_constants(d_max)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::Solver(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Solver(e.to_string()))?;
    let path = write_file(&out, "norm_check.csv", &String::from_utf8_lossy(&bytes))?;
    let worst = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    println!("degrees 0..={d_max}: max |computed - 1/(d+1)| = {worst:e}");
    println!("wrote {}", path.display());
    if worst > 1e-9 {
        return Err(Failure::Solver(format!("norm constant error {worst:e} exceeds 1e-9")));
    }
    Ok(())
}

fn cmd_export(a: &SolveArgs, c: &Config) -> CmdResult {
    let r = resolve(a, c)?;
    let nlp = build_nlp(&r, c)?;
    let export = export_lifted_nlp(&nlp, &initial_guess(&nlp))?;
    let path = write_file(&r.out, &format!("lifted_{}.txt", r.bench.name), &export.to_text())?;
    println!("variables   = {}", export.n_variables());
    println!("constraints = {}", export.n_constraints());
    println!("theta       = {:e}", export.theta);
    println!("wrote {}", path.display());
    Ok(())
}

fn triplet_text(op: &SparseOperator<f64>) -> String {
    let mut s = format!("{} {} {}\n", op.rows(), op.cols(), op.nnz());
    for (r, c, v) in op.triplets() {
        s.push_str(&format!("{r} {c} {v}\n"));
    }
    s
}

fn cmd_sparsity(a: &SolveArgs, c: &Config) -> CmdResult {
    let r = resolve(a, c)?;
    let nlp = build_nlp(&r, c)?;
    let x = initial_guess(&nlp);
    let hessian = nlp.eval_full_hessian(&x)?;
    let (jc, jb, jg) = nlp.eval_constraint_jacobians(&x)?;
    let name = r.bench.name;
    for (label, op) in [
        ("hessian", &hessian),
        ("eval", nlp.eval_operator()),
        ("point_eval", nlp.point_operator()),
        ("regularizer", nlp.regularizer()),
        ("jac_hc", &jc),
        ("jac_hb", &jb),
        ("jac_g", &jg),
    ] {
        let path = write_file(&r.out, &format!("sparsity_{name}_{label}.txt"), &triplet_text(op))?;
        println!("{label:<12} {}x{} nnz {:<8} -> {}", op.rows(), op.cols(), op.nnz(), path.display());
    }
    let mut position = vec![0; nlp.n_dofs()];
    for (new, &old) in nlp.ordering().iter().enumerate() {
        position[old] = new;
    }
    println!("hessian bandwidth (time ordering) = {}", hessian.bandwidth_under(&position));
    Ok(())
}

fn cmd_check(a: &CheckArgs, c: &Config) -> CmdResult {
    let name = a
        .problem
        .clone()
        .or_else(|| c.problem.clone())
        .ok_or_else(|| Failure::Usage("--problem is required".into()))?;
    let n = a.samples.or(c.samples).unwrap_or(10);
    let b = benchmark(&name)?;
    let dims = b.problem.dims();
    let (t0, te) = b.problem.domain();
    let n_tp = b.problem.time_points().len();
    // Deterministic, well spread sample points; z entries stay positive.
    let samples: Vec<DerivativeSample<f64>> = (0..n)
        .map(|i| {
            let s = i as f64 + 1.0;
            DerivativeSample {
                args: (0..dims.n_args())
                    .map(|k| {
                        let v = (1.7 * s + 0.9 * k as f64).sin();
                        if k >= 2 * dims.n_y { 1.0 + 0.5 * v } else { 2.0 * v }
                    })
                    .collect(),
                t: t0 + (te - t0) * (0.5 + 0.45 * (2.3 * s).sin()),
                y_points: (0..dims.n_y * n_tp).map(|k| (0.7 * s + 1.3 * k as f64).cos()).collect(),
            }
        })
        .collect();
    let report = check_derivatives(b.problem.as_ref(), &samples)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Failure::Solver(e.to_string()))?);
    let bad = report.mismatches(1e-6, 1e-5);
    if !bad.is_empty() {
        return Err(Failure::Solver(format!("derivative mismatches: {}", bad.join(", "))));
    }
    println!("all derivatives consistent");
    Ok(())
}
