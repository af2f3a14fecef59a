//! Damped Newton minimization of the penalty-barrier objective with a
//! continuation in `(ω, τ)`.

use serde::Serialize;

use crate::assembly::{AssembledNlp, MultiplierSet, ObjectiveTerms, PenaltyBarrier};
use crate::error::{Error, Result};
use crate::linalg::EnvelopeCholesky;
use crate::ocp::OcpProblem;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverOptions<T> {
    /// Stationarity tolerance; `None` means `1e-8·max(1, √N)`.
    pub grad_tol: Option<T>,
    pub max_iters: usize,
    pub ls_backtrack: T,
    pub armijo: T,
    pub max_backtracks: usize,
    pub boundary_fraction: T,
    /// Ordered `(ω, τ)` stages; `None` uses the default four-stage schedule.
    pub continuation: Option<Vec<(T, T)>>,
    pub regularization_floor: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            grad_tol: None,
            max_iters: 200,
            ls_backtrack: T::half(),
            armijo: T::lit(1e-4),
            max_backtracks: 60,
            boundary_fraction: T::lit(0.995),
            continuation: None,
            regularization_floor: T::lit(1e-12),
        }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if let Some(tol) = self.grad_tol {
            if !positive(tol) {
                return Err(Error::InvalidParameter("grad_tol must be positive".into()));
            }
        }
        if !(self.ls_backtrack > T::zero() && self.ls_backtrack < T::one()) {
            return Err(Error::InvalidParameter("ls_backtrack must lie in (0, 1)".into()));
        }
        if !(self.armijo > T::zero() && self.armijo < T::one()) {
            return Err(Error::InvalidParameter("armijo must lie in (0, 1)".into()));
        }
        if !(self.boundary_fraction > T::zero() && self.boundary_fraction < T::one()) {
            return Err(Error::InvalidParameter("boundary_fraction must lie in (0, 1)".into()));
        }
        if !positive(self.regularization_floor) {
            return Err(Error::InvalidParameter("regularization_floor must be positive".into()));
        }
        if let Some(stages) = &self.continuation {
            if stages.is_empty() || stages.iter().any(|&(o, t)| !positive(o) || !positive(t)) {
                return Err(Error::InvalidParameter(
                    "continuation stages must be nonempty with positive (omega, tau)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Four geometric stages from `(max(ω, 0.1), max(τ, 0.1))` down to `(ω, τ)`;
/// repeated stages are collapsed.
pub fn default_schedule<T: Real>(omega: T, tau: T) -> Vec<(T, T)> {
    let start = (omega.max(T::lit(0.1)), tau.max(T::lit(0.1)));
    let mut out: Vec<(T, T)> = Vec::with_capacity(4);
    for k in 0..4 {
        let s = T::of_usize(k) / T::lit(3.0);
        let stage = if k == 3 {
            (omega, tau)
        } else {
            (
                start.0.powf(T::one() - s) * omega.powf(s),
                start.1.powf(T::one() - s) * tau.powf(s),
            )
        };
        if out.last() != Some(&stage) {
            out.push(stage);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
    BarrierDomainViolation,
    /// An evaluation or factorization error ended the solve; only study rows carry it.
    Failed,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIters => "max_iters",
            Self::LineSearchFailure => "line_search_failure",
            Self::BarrierDomainViolation => "barrier_domain_violation",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport<T> {
    pub omega: T,
    pub tau: T,
    pub iterations: usize,
    pub grad_norm: T,
    pub objective: T,
    pub residual: T,
    pub status: SolveStatus,
    /// Objective before the first step and after every accepted step.
    pub objective_history: Vec<T>,
    /// Newton steps that needed an inertia-correcting shift.
    pub shifted_steps: usize,
    pub gradient_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport<T> {
    pub x: Vec<T>,
    pub status: SolveStatus,
    pub stages: Vec<StageReport<T>>,
    pub iterations: usize,
    pub grad_norm: T,
    pub grad_tol: T,
    pub terms: ObjectiveTerms<T>,
    pub residual: T,
    pub multipliers: MultiplierSet<T>,
    /// Shift added to the first coefficient vector to make it barrier-feasible, per `z` component.
    pub initial_shift: Vec<T>,
}

/// `y` from the problem's hint (zero otherwise), `z ≡ max(1, τ)`.
pub fn initial_guess<T: Real, P: OcpProblem<T> + ?Sized>(nlp: &AssembledNlp<'_, T, P>) -> Vec<T> {
    let n_y = nlp.dims().n_y;
    let z0 = T::one().max(nlp.params().tau);
    let problem = nlp.problem();
    nlp.space().interpolate(|k, t| {
        if k < n_y {
            problem.initial_y(t).and_then(|y| y.get(k).copied()).unwrap_or(T::zero())
        } else {
            z0
        }
    })
}

/// Shifts every `z` component whose smallest quadrature value is `≤ 0` by
/// `1e-2 − min`. Returns the applied shifts.
pub fn make_interior<T: Real, P: OcpProblem<T> + ?Sized>(nlp: &AssembledNlp<'_, T, P>, x: &mut [T]) -> Result<Vec<T>> {
    let nz = nlp.dims().n_z;
    let n_y = nlp.dims().n_y;
    let z = nlp.z_values(x)?;
    let mut shifts = vec![T::zero(); nz];
    for (k, shift) in shifts.iter_mut().enumerate() {
        let min = z.iter().skip(k).step_by(nz).fold(T::infinity(), |a, &b| a.min(b));
        if !(min > T::zero()) {
            *shift = if min.is_finite() { T::lit(1e-2) - min } else { T::lit(1e-2) };
            let comp = &nlp.space().components()[n_y + k];
            for v in &mut x[comp.offset..comp.offset + comp.n_dofs] {
                // Lagrange bases reproduce constants, so this shifts the function.
                *v += *shift;
            }
        }
    }
    Ok(shifts)
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

enum StepOutcome<T> {
    Accepted(Vec<T>, T),
    Failed,
}

struct Newton<'a, 'p, T: Real, P: OcpProblem<T> + ?Sized> {
    nlp: &'a AssembledNlp<'p, T, P>,
    opts: &'a SolverOptions<T>,
    pb: PenaltyBarrier<T>,
}

impl<T: Real, P: OcpProblem<T> + ?Sized> Newton<'_, '_, T, P> {
    /// `None` outside the barrier domain or on a non-finite value; callback
    /// and shape errors are passed on.
    fn objective(&self, x: &[T]) -> Result<Option<T>> {
        match self.nlp.objective_terms_at(x, self.pb) {
            Ok(t) => Ok(t.total.is_finite().then_some(t.total)),
            Err(Error::BarrierDomain { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Solves `(H + δI) p = −g`, raising `δ` from zero through the
    /// regularization floor by doubling. `None` if no shift up to `1e8·floor` works.
    fn newton_direction(&self, x: &[T], g: &[T]) -> Result<Option<(Vec<T>, bool)>> {
        let h = self.nlp.full_hessian_at(x, self.pb)?;
        let n = self.nlp.n_dofs();
        let mut chol = EnvelopeCholesky::new(n, h.triplets(), self.nlp.ordering().to_vec())?;
        let rhs: Vec<T> = g.iter().map(|&v| -v).collect();
        if chol.factor(T::zero()) {
            return Ok(Some((chol.solve(&rhs)?, false)));
        }
        let floor = self.opts.regularization_floor;
        let cap = floor * T::lit(1e8);
        let mut shift = floor;
        while shift <= cap {
            if chol.factor(shift) {
                return Ok(Some((chol.solve(&rhs)?, true)));
            }
            shift *= T::two();
        }
        Ok(None)
    }

    /// Largest step in `(0, 1]` keeping `z ≥ (1 − fraction)·z_current` at every quadrature point.
    fn boundary_step(&self, x: &[T], p: &[T]) -> Result<T> {
        if self.nlp.dims().n_z == 0 {
            return Ok(T::one());
        }
        let z = self.nlp.z_values(x)?;
        let dz = self.nlp.z_values(p)?;
        let mut alpha = T::one();
        for (&zi, &di) in z.iter().zip(&dz) {
            if di < T::zero() {
                alpha = alpha.min(self.opts.boundary_fraction * zi / -di);
            }
        }
        Ok(alpha)
    }

    fn line_search(&self, x: &[T], f0: T, g: &[T], p: &[T]) -> Result<StepOutcome<T>> {
        let slope = dot(g, p);
        let mut alpha = self.boundary_step(x, p)?;
        for _ in 0..=self.opts.max_backtracks {
            let trial: Vec<T> = x.iter().zip(p).map(|(&xi, &pi)| xi + alpha * pi).collect();
            if let Some(f) = self.objective(&trial)? {
                if f <= f0 + self.opts.armijo * alpha * slope && f < f0 {
                    return Ok(StepOutcome::Accepted(trial, f));
                }
            }
            alpha *= self.opts.ls_backtrack;
        }
        Ok(StepOutcome::Failed)
    }

    fn run(&self, mut x: Vec<T>, tol: T) -> Result<(Vec<T>, StageReport<T>)> {
        let mut history = Vec::new();
        let mut shifted_steps = 0;
        let mut gradient_steps = 0;
        let mut f = match self.objective(&x)? {
            Some(f) => f,
            None => {
                return Ok((x, self.stage_report(0, T::nan(), T::nan(), SolveStatus::BarrierDomainViolation, history, 0, 0)));
            }
        };
        history.push(f);
        let mut iterations = 0;
        let status = loop {
            let g = match self.nlp.gradient_at(&x, self.pb) {
                Ok(g) => g,
                Err(Error::BarrierDomain { .. }) => break SolveStatus::BarrierDomainViolation,
                Err(e) => return Err(e),
            };
            let gn = norm(&g);
            if !gn.is_finite() {
                break SolveStatus::BarrierDomainViolation;
            }
            if gn <= tol {
                break SolveStatus::Converged;
            }
            if iterations >= self.opts.max_iters {
                break SolveStatus::MaxIters;
            }
            iterations += 1;
            let newton = self.newton_direction(&x, &g)?;
            let mut step = None;
            if let Some((p, shifted)) = newton {
                if dot(&g, &p) < T::zero() {
                    if let StepOutcome::Accepted(xn, fnew) = self.line_search(&x, f, &g, &p)? {
                        shifted_steps += shifted as usize;
                        step = Some((xn, fnew));
                    }
                }
            }
            if step.is_none() {
                let p: Vec<T> = g.iter().map(|&v| -v).collect();
                if let StepOutcome::Accepted(xn, fnew) = self.line_search(&x, f, &g, &p)? {
                    gradient_steps += 1;
                    step = Some((xn, fnew));
                }
            }
            match step {
                Some((xn, fnew)) => {
                    x = xn;
                    f = fnew;
                    history.push(f);
                }
                None => break SolveStatus::LineSearchFailure,
            }
        };
        let gn = self
            .nlp
            .gradient_at(&x, self.pb)
            .map(|g| norm(&g))
            .unwrap_or(T::nan());
        let report = self.stage_report(iterations, gn, f, status, history, shifted_steps, gradient_steps);
        let residual = self.nlp.residual(&x).unwrap_or(T::nan());
        Ok((x, StageReport { residual, ..report }))
    }

    #[allow(clippy::too_many_arguments)]
    fn stage_report(
        &self,
        iterations: usize,
        grad_norm: T,
        objective: T,
        status: SolveStatus,
        objective_history: Vec<T>,
        shifted_steps: usize,
        gradient_steps: usize,
    ) -> StageReport<T> {
        StageReport {
            omega: self.pb.omega,
            tau: self.pb.tau,
            iterations,
            grad_norm,
            objective,
            residual: T::nan(),
            status,
            objective_history,
            shifted_steps,
            gradient_steps,
        }
    }
}

/// Minimizes the penalty-barrier objective of `nlp` starting from `x0`.
///
/// Intermediate continuation stages warm-start the next stage whatever their
/// status; the reported status is that of the final stage, whose `(ω, τ)`
/// must equal the parameters of `nlp`.
pub fn solve<T: Real, P: OcpProblem<T> + ?Sized>(
    nlp: &AssembledNlp<'_, T, P>,
    x0: &[T],
    opts: &SolverOptions<T>,
) -> Result<SolveReport<T>> {
    opts.validate()?;
    if x0.len() != nlp.n_dofs() {
        return Err(Error::Dimension(format!(
            "initial vector has {} entries, space has {}",
            x0.len(),
            nlp.n_dofs()
        )));
    }
    let target = nlp.weights();
    let schedule = match &opts.continuation {
        Some(s) => s.clone(),
        None => default_schedule(target.omega, target.tau),
    };
    let last = schedule[schedule.len() - 1];
    if last != (target.omega, target.tau) {
        return Err(Error::InvalidParameter(format!(
            "continuation must end at (omega, tau) = ({}, {})",
            target.omega, target.tau
        )));
    }
    let tol = opts
        .grad_tol
        .unwrap_or_else(|| T::lit(1e-8) * T::one().max(T::of_usize(nlp.n_dofs()).sqrt()));

    let mut x = x0.to_vec();
    let initial_shift = make_interior(nlp, &mut x)?;
    let mut stages = Vec::with_capacity(schedule.len());
    for &(omega, tau) in &schedule {
        let newton = Newton {
            nlp,
            opts,
            pb: PenaltyBarrier { omega, tau },
        };
        let (xn, report) = newton.run(x, tol)?;
        x = xn;
        stages.push(report);
    }
    let final_stage = stages.last().expect("at least one stage");
    let status = final_stage.status;
    let grad_norm = final_stage.grad_norm;
    let iterations = stages.iter().map(|s| s.iterations).sum();
    let (terms, multipliers) = match (nlp.eval_objective_terms(&x), nlp.penalty_multipliers(&x)) {
        (Ok(t), Ok(m)) => (t, m),
        _ => {
            let nan = T::nan();
            (
                ObjectiveTerms {
                    f: nan,
                    quad_norm: nan,
                    penalty: nan,
                    log_barrier: nan,
                    total: nan,
                },
                MultiplierSet::zeros(nlp.dims(), nlp.n_points()),
            )
        }
    };
    let residual = nlp.residual(&x)?;
    Ok(SolveReport {
        x,
        status,
        stages,
        iterations,
        grad_norm,
        grad_tol: tol,
        terms,
        residual,
        multipliers,
        initial_shift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositivityCheck<T> {
    pub min_z: T,
    pub threshold_satisfied: bool,
    /// `τ / L` when an estimate of `L` was supplied.
    pub bound: Option<T>,
    pub bound_satisfied: Option<bool>,
}

/// Smallest `z` value over all quadrature points of the reported solution.
pub fn strict_positivity_check<T: Real, P: OcpProblem<T> + ?Sized>(
    report: &SolveReport<T>,
    nlp: &AssembledNlp<'_, T, P>,
    l_estimate: Option<T>,
) -> Result<PositivityCheck<T>> {
    let z = nlp.z_values(&report.x)?;
    let min_z = z.iter().fold(T::infinity(), |a, &b| a.min(b));
    let bound = l_estimate.map(|l| nlp.params().tau / l);
    Ok(PositivityCheck {
        min_z,
        threshold_satisfied: min_z > T::zero(),
        bound,
        bound_satisfied: bound.map(|b| min_z >= b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{benchmark, BarrierPull};
    use crate::fespace::FeSpace;
    use crate::linalg::DenseMatrix;
    use crate::mesh::Mesh;
    use crate::ocp::{CallbackError, MethodParams, ProblemDims, ScalarEval, VectorEval};

    /// `f = ½ y²` with `n_z = 0` and no constraints.
    struct Quadratic;

    impl OcpProblem<f64> for Quadratic {
        fn dims(&self) -> ProblemDims {
            ProblemDims { n_y: 1, n_z: 0, m: 0, p: 0 }
        }
        fn time_points(&self) -> Vec<f64> {
            vec![0.0, 1.0]
        }
        fn eval_f(&self, v: &[f64], _t: f64) -> Result<ScalarEval<f64>, CallbackError> {
            let mut h = DenseMatrix::zeros(2, 2);
            h[(1, 1)] = 1.0;
            Ok(ScalarEval {
                value: 0.5 * v[1] * v[1],
                gradient: vec![0.0, v[1]],
                hessian: h,
            })
        }
        fn eval_c(&self, v: &[f64], _t: f64) -> Result<VectorEval<f64>, CallbackError> {
            Ok(VectorEval::empty(v.len()))
        }
        fn eval_b(&self, yp: &[f64]) -> Result<VectorEval<f64>, CallbackError> {
            Ok(VectorEval::empty(yp.len()))
        }
    }

    #[test]
    fn schedule_is_geometric_and_ends_at_target() {
        let s = default_schedule(1e-3, 1e-6);
        assert_eq!(s.len(), 4);
        assert_eq!(s[0], (0.1, 0.1));
        assert_eq!(s[3], (1e-3, 1e-6));
        assert!((s[1].0 - 0.1f64.powf(2.0 / 3.0) * 1e-3f64.powf(1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(default_schedule(1.0, 1.0), vec![(1.0, 1.0)]);
    }

    #[test]
    fn newton_on_a_quadratic() {
        let mesh = Mesh::uniform((0.0, 1.0), 4).unwrap();
        let space = FeSpace::shared(&mesh, 3, 1, 0).unwrap();
        let params = MethodParams::default_rule(0.25, 1.0, 3).unwrap();
        let nlp = AssembledNlp::new(&Quadratic, space, params).unwrap();
        let x0: Vec<f64> = (0..nlp.n_dofs()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let opts = SolverOptions {
            grad_tol: Some(1e-10),
            continuation: Some(vec![(params.omega, params.tau)]),
            ..Default::default()
        };
        let r = solve(&nlp, &x0, &opts).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!(r.iterations <= 3, "{}", r.iterations);
        assert!(r.grad_norm <= 1e-10);
        assert!(r.x.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn lq_converges_and_residual_falls_with_continuation() {
        let b = benchmark("lq").unwrap();
        let h = 0.125;
        let nlp = AssembledNlp::new(b.problem.as_ref(), b.space(h, 4).unwrap(), b.params(h, 4).unwrap()).unwrap();
        let r = solve(&nlp, &initial_guess(&nlp), &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged, "{:?}", r.stages);
        for w in r.stages.windows(2) {
            assert!(w[1].residual <= w[0].residual);
        }
        for s in &r.stages {
            for w in s.objective_history.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
        let g = nlp.eval_gradient(&r.x).unwrap();
        assert!((norm(&g) - r.grad_norm).abs() <= 1e-13);
        assert!(strict_positivity_check(&r, &nlp, None).unwrap().threshold_satisfied);
        // the penalty perturbs the optimal cost by O(ω)
        assert!((r.terms.f - 0.5 * 1f64.tanh()).abs() < 2.0 * nlp.params().omega);
    }

    #[test]
    fn infeasible_start_is_shifted() {
        let b = benchmark("lq").unwrap();
        let nlp = AssembledNlp::new(b.problem.as_ref(), b.space(0.25, 2).unwrap(), b.params(0.25, 2).unwrap()).unwrap();
        let x0 = nlp.space().interpolate(|k, _| if k == 0 { 0.0 } else { -1.0 });
        let r = solve(&nlp, &x0, &SolverOptions::default()).unwrap();
        assert_eq!(r.initial_shift, vec![1.01, 1.01]);
        assert_eq!(r.status, SolveStatus::Converged);
    }

    #[test]
    fn barrier_pull_tracks_tau() {
        let mut mins: Vec<f64> = Vec::new();
        for tau in [1e-2f64, 5e-3] {
            let h = tau.sqrt();
            let p = BarrierPull::default();
            let space = FeSpace::shared(&Mesh::with_max_width((0.0, 1.0), h).unwrap(), 2, 0, 1).unwrap();
            let params = MethodParams::default_rule(h, 1.0, 2).unwrap();
            let nlp = AssembledNlp::new(&p, space, params).unwrap();
            let r = solve(&nlp, &initial_guess(&nlp), &SolverOptions::default()).unwrap();
            assert_eq!(r.status, SolveStatus::Converged);
            let check = strict_positivity_check(&r, &nlp, Some(1.0)).unwrap();
            assert!((check.min_z - tau).abs() <= 0.1 * tau);
            mins.push(check.min_z);
        }
        assert!((mins[1] / mins[0] - 0.5).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_options() {
        let b = benchmark("trivial").unwrap();
        let nlp = AssembledNlp::new(b.problem.as_ref(), b.space(0.5, 1).unwrap(), b.params(0.5, 1).unwrap()).unwrap();
        let x0 = initial_guess(&nlp);
        let bad = SolverOptions { boundary_fraction: 1.5, ..Default::default() };
        assert!(solve(&nlp, &x0, &bad).is_err());
        let wrong_end = SolverOptions { continuation: Some(vec![(0.3, 0.3)]), ..Default::default() };
        assert!(solve(&nlp, &x0, &wrong_end).is_err());
    }
}
