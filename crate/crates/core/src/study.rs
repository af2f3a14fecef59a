//! h-refinement convergence studies on the built-in benchmarks.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::AssembledNlp;
use crate::benchmarks::{benchmark, AnalyticSolution, Benchmark};
use crate::error::{Error, Result};
use crate::polybasis::MAX_DEGREE;
use crate::solver::{initial_guess, solve, SolveReport, SolveStatus, SolverOptions, StageReport};

/// Metrics below this value are treated as exact and excluded from order fits.
pub const METRIC_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub d: usize,
    pub omega: f64,
    pub tau: f64,
    pub n_dofs: usize,
    pub n_points: usize,
    pub iterations: usize,
    pub status: SolveStatus,
    pub objective: f64,
    pub objective_gap: Option<f64>,
    pub residual: f64,
    pub x_error: Option<f64>,
    pub min_z: Option<f64>,
    pub wall_time: f64,
    /// Error message when the solve aborted; metrics are then NaN.
    pub error: Option<String>,
}

impl ConvergenceRow {
    fn failed(h: f64, d: usize, message: String) -> Self {
        Self {
            h,
            d,
            omega: f64::NAN,
            tau: f64::NAN,
            n_dofs: 0,
            n_points: 0,
            iterations: 0,
            status: SolveStatus::Failed,
            objective: f64::NAN,
            objective_gap: None,
            residual: f64::NAN,
            x_error: None,
            min_z: None,
            wall_time: 0.0,
            error: Some(message),
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Fixed CSV layout; wall time is left out so that repeated runs produce identical files.
#[derive(Serialize)]
struct CsvRow {
    h: f64,
    d: usize,
    omega: f64,
    tau: f64,
    n_dofs: usize,
    n_points: usize,
    iterations: usize,
    status: &'static str,
    objective: f64,
    objective_gap: Option<f64>,
    residual: f64,
    x_error: Option<f64>,
    min_z: Option<f64>,
}

impl From<&ConvergenceRow> for CsvRow {
    fn from(r: &ConvergenceRow) -> Self {
        Self {
            h: r.h,
            d: r.d,
            omega: r.omega,
            tau: r.tau,
            n_dofs: r.n_dofs,
            n_points: r.n_points,
            iterations: r.iterations,
            status: r.status.as_str(),
            objective: r.objective,
            objective_gap: r.objective_gap,
            residual: r.residual,
            x_error: r.x_error,
            min_z: r.min_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    pub metric: String,
    /// Least-squares slope of `log(metric)` against `log(h)`.
    pub order: Option<f64>,
    pub points: usize,
    /// Why no slope was fitted.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub benchmark: String,
    pub d: usize,
    pub rows: Vec<ConvergenceRow>,
    pub fits: Vec<OrderFit>,
    /// The rate guaranteed by theory, `(d − 3)/4`.
    pub reference_order: f64,
    pub stages: Vec<Vec<StageReport<f64>>>,
}

impl StudyResult {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(ConvergenceRow::converged)
    }

    pub fn fit(&self, metric: &str) -> Option<&OrderFit> {
        self.fits.iter().find(|f| f.metric == metric)
    }
}

/// Solves one benchmark at mesh width `h` and degree `d`.
pub fn solve_benchmark(b: &Benchmark, h: f64, d: usize, opts: &SolverOptions<f64>) -> Result<(ConvergenceRow, SolveReport<f64>)> {
    let start = Instant::now();
    let space = b.space(h, d)?;
    let params = b.params(h, d)?;
    let nlp = AssembledNlp::new(b.problem.as_ref(), space, params)?;
    let report = solve(&nlp, &initial_guess(&nlp), opts)?;
    let wall_time = start.elapsed().as_secs_f64();
    let z = nlp.z_values(&report.x)?;
    let min_z = z.iter().copied().reduce(f64::min);
    let row = ConvergenceRow {
        h,
        d,
        omega: params.omega,
        tau: params.tau,
        n_dofs: nlp.n_dofs(),
        n_points: nlp.n_points(),
        iterations: report.iterations,
        status: report.status,
        objective: report.terms.f,
        objective_gap: b.analytic.map(|a| report.terms.f - a.optimal_cost),
        residual: report.residual,
        x_error: b.analytic.map(|a| state_error(&nlp, &report.x, &a)).transpose()?,
        min_z,
        wall_time,
        error: None,
    };
    Ok((row, report))
}

/// Quadrature `H¹` distance between the computed and the analytic differential components.
fn state_error<P: crate::ocp::OcpProblem<f64> + ?Sized>(nlp: &AssembledNlp<'_, f64, P>, x: &[f64], a: &AnalyticSolution) -> Result<f64> {
    let values = nlp.eval_operator().apply(x)?;
    let dims = nlp.dims();
    let per = dims.n_args();
    let mut acc = 0.0;
    for (j, (&t, &w)) in nlp.rule().points().iter().zip(nlp.rule().weights()).enumerate() {
        for k in 0..dims.n_y {
            let dy = values[j * per + k] - (a.y_dot)(k, t);
            let ey = values[j * per + dims.n_y + k] - (a.y)(k, t);
            acc += w * (dy * dy + ey * ey);
        }
    }
    Ok(acc.sqrt())
}

/// Least-squares slope of `log(value)` against `log(h)`.
pub fn fit_order(metric: &str, samples: &[(f64, f64)]) -> OrderFit {
    let skip = |reason: String| OrderFit {
        metric: metric.to_string(),
        order: None,
        points: samples.len(),
        skipped: Some(reason),
    };
    if samples.len() < 3 {
        return skip(format!("{} converged points, at least 3 needed", samples.len()));
    }
    if samples.iter().any(|&(_, v)| !(v.abs() > METRIC_FLOOR)) {
        return skip(format!("metric at floor (<= {METRIC_FLOOR:e}), no meaningful slope"));
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(h, v)| (h.ln(), v.abs().ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    OrderFit {
        metric: metric.to_string(),
        order: Some(sxy / sxx),
        points: samples.len(),
        skipped: None,
    }
}

pub fn run_study(name: &str, d: usize, h_list: &[f64], overrides: Option<SolverOptions<f64>>) -> Result<StudyResult> {
    run_benchmark_study(&benchmark(name)?, d, h_list, overrides)
}

/// Solves `b` at every mesh size (concurrently) and fits orders over the converged rows.
/// A size whose solve errors is kept as a [`SolveStatus::Failed`] row.
pub fn run_benchmark_study(b: &Benchmark, d: usize, h_list: &[f64], overrides: Option<SolverOptions<f64>>) -> Result<StudyResult> {
    if d > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(d));
    }
    if h_list.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} mesh sizes given, an order fit needs at least 3",
            h_list.len()
        )));
    }
    if h_list.iter().any(|&h| !(h > 0.0) || !h.is_finite()) || h_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("mesh sizes must be positive and strictly decreasing".into()));
    }
    let opts = overrides.unwrap_or_default();
    let results: Vec<Result<(ConvergenceRow, SolveReport<f64>)>> =
        h_list.par_iter().map(|&h| solve_benchmark(b, h, d, &opts)).collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut stages = Vec::with_capacity(results.len());
    for (r, &h) in results.into_iter().zip(h_list) {
        match r {
            Ok((row, report)) => {
                rows.push(row);
                stages.push(report.stages);
            }
            // the row is kept as failed and the remaining sizes still count
            Err(e) => {
                rows.push(ConvergenceRow::failed(h, d, e.to_string()));
                stages.push(Vec::new());
            }
        }
    }
    let ok: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.converged()).collect();
    let mut fits = Vec::new();
    if b.analytic.is_some() {
        let gap: Vec<(f64, f64)> = ok.iter().filter_map(|r| r.objective_gap.map(|g| (r.h, g))).collect();
        fits.push(fit_order("objective_gap", &gap));
    }
    let res: Vec<(f64, f64)> = ok.iter().map(|r| (r.h, r.residual)).collect();
    fits.push(fit_order("residual", &res));
    if b.analytic.is_some() {
        let xe: Vec<(f64, f64)> = ok.iter().filter_map(|r| r.x_error.map(|e| (r.h, e))).collect();
        fits.push(fit_order("x_error", &xe));
    }
    Ok(StudyResult {
        benchmark: b.name.to_string(),
        d,
        rows,
        fits,
        reference_order: (d as f64 - 3.0) / 4.0,
        stages,
    })
}

pub fn rows_to_csv(rows: &[ConvergenceRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow::from(r)).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Writes `study_<name>_d<d>.csv` and `.json` into `dir`; returns both paths.
pub fn write_study(dir: &Path, result: &StudyResult) -> Result<(PathBuf, PathBuf)> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    let stem = format!("study_{}_d{}", result.benchmark, result.d);
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&csv_path, rows_to_csv(&result.rows)?).map_err(io)?;
    let json = serde_json::to_string_pretty(result).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&json_path, json + "\n").map_err(io)?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{CallbackError, OcpProblem, ProblemDims, ScalarEval, VectorEval};

    #[test]
    fn order_fit_recovers_slope() {
        let s: Vec<(f64, f64)> = [0.5, 0.25, 0.125, 0.0625].iter().map(|&h: &f64| (h, 3.0 * h.powf(1.75))).collect();
        let f = fit_order("x", &s);
        assert!((f.order.unwrap() - 1.75).abs() < 1e-12);
    }

    #[test]
    fn order_fit_skips_floor_and_short_series() {
        let f = fit_order("residual", &[(0.5, 1e-20), (0.25, 1e-21), (0.125, 0.0)]);
        assert!(f.order.is_none());
        assert!(f.skipped.unwrap().contains("floor"));
        assert!(fit_order("r", &[(0.5, 1.0), (0.25, 0.5)]).order.is_none());
    }

    #[test]
    fn study_requires_three_sizes() {
        assert!(matches!(run_study("lq", 4, &[0.25], None), Err(Error::InsufficientData(_))));
        assert!(matches!(run_study("lq", 31, &[0.5, 0.25, 0.125], None), Err(Error::UnsupportedDegree(31))));
        assert!(run_study("lq", 4, &[0.25, 0.5, 0.125], None).is_err());
    }

    struct Broken;

    impl OcpProblem<f64> for Broken {
        fn dims(&self) -> ProblemDims {
            ProblemDims { n_y: 1, n_z: 1, m: 0, p: 0 }
        }

        fn time_points(&self) -> Vec<f64> {
            vec![0.0, 1.0]
        }

        fn eval_f(&self, _: &[f64], _: f64) -> std::result::Result<ScalarEval<f64>, CallbackError> {
            Err(CallbackError("not defined".into()))
        }

        fn eval_c(&self, v: &[f64], _: f64) -> std::result::Result<VectorEval<f64>, CallbackError> {
            Ok(VectorEval::empty(v.len()))
        }

        fn eval_b(&self, y: &[f64]) -> std::result::Result<VectorEval<f64>, CallbackError> {
            Ok(VectorEval::empty(y.len()))
        }
    }

    #[test]
    fn failing_size_becomes_a_failed_row() {
        let b = Benchmark {
            name: "broken",
            problem: Box::new(Broken),
            analytic: None,
            layout: crate::benchmarks::MeshLayout::Shared,
            notes: "",
        };
        let r = run_benchmark_study(&b, 2, &[0.5, 0.25, 0.125], None).unwrap();
        assert!(!r.all_converged());
        assert!(r.rows.iter().all(|row| row.status == SolveStatus::Failed && row.error.is_some()));
        assert!(r.fit("residual").unwrap().order.is_none());
        let csv = rows_to_csv(&r.rows).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().contains(",failed,"));
    }

    #[test]
    fn trivial_study_stays_exact() {
        let r = run_study("trivial", 4, &[0.5, 0.25, 0.125], None).unwrap();
        assert!(r.all_converged());
        for row in &r.rows {
            assert!(row.residual <= 1e-8);
        }
        let fit = r.fit("residual").unwrap();
        assert!(fit.order.is_none() && fit.skipped.is_some());
        let csv = rows_to_csv(&r.rows).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("h,d,omega,tau,n_dofs,n_points,iterations,status,objective,objective_gap,residual,x_error,min_z\n"));
        assert!(!csv.contains('\r'));
    }
}
