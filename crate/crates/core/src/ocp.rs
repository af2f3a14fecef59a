//! Optimal control problem template and method parameters.
//!
//! A problem supplies `f`, `c` and `b` together with their first and second
//! derivatives. Path functions `f` and `c` are evaluated on the stacked
//! argument `v = (ẏ, y, z) ∈ R^{2n_y + n_z}`; `b` is evaluated on the stacked
//! point values `(y(t_0), ..., y(t_E)) ∈ R^{n_y n_T}`.

use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::fespace::{build_eval_operator, build_point_eval_operator, FeSpace};
use crate::linalg::DenseMatrix;
use crate::polybasis::MAX_DEGREE;
use crate::quadrature::GlobalRule;
use crate::scalar::Real;

/// Failure reported by a problem callback.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct CallbackError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProblemDims {
    pub n_y: usize,
    pub n_z: usize,
    /// Number of path constraints `c`.
    pub m: usize,
    /// Number of point constraints `b`.
    pub p: usize,
}

impl ProblemDims {
    pub fn n_x(&self) -> usize {
        self.n_y + self.n_z
    }

    /// Length of the stacked argument `(ẏ, y, z)`.
    pub fn n_args(&self) -> usize {
        2 * self.n_y + self.n_z
    }
}

/// Value, gradient and Hessian of a scalar function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEval<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: DenseMatrix<T>,
}

impl<T: Real> ScalarEval<T> {
    pub fn zero(n: usize) -> Self {
        Self {
            value: T::zero(),
            gradient: vec![T::zero(); n],
            hessian: DenseMatrix::zeros(n, n),
        }
    }
}

/// Values, Jacobian and per-output Hessians of a vector function.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorEval<T> {
    pub values: Vec<T>,
    pub jacobian: DenseMatrix<T>,
    pub hessians: Vec<DenseMatrix<T>>,
}

impl<T: Real> VectorEval<T> {
    /// Zero outputs over `n_args` arguments.
    pub fn empty(n_args: usize) -> Self {
        Self {
            values: Vec::new(),
            jacobian: DenseMatrix::zeros(0, n_args),
            hessians: Vec::new(),
        }
    }

    /// `n_out` outputs, all values and derivatives zero.
    pub fn zeros(n_out: usize, n_args: usize) -> Self {
        Self {
            values: vec![T::zero(); n_out],
            jacobian: DenseMatrix::zeros(n_out, n_args),
            hessians: vec![DenseMatrix::zeros(n_args, n_args); n_out],
        }
    }
}

/// Optimal control problem
///
/// ```text
/// min ∫ f(ẏ, y, z, t) dt   s.t.  b(y(t_0), ..., y(t_E)) = 0,
///                               c(ẏ, y, z, t) = 0,   z ≥ 0.
/// ```
///
/// Callbacks must be pure and continuous in `t` inside every mesh interval.
pub trait OcpProblem<T: Real>: Send + Sync {
    fn dims(&self) -> ProblemDims;

    /// `t_0 < t_1 < ... < t_E`; the domain is `(t_0, t_E)`.
    fn time_points(&self) -> Vec<T>;

    fn eval_f(&self, v: &[T], t: T) -> Result<ScalarEval<T>, CallbackError>;

    fn eval_c(&self, v: &[T], t: T) -> Result<VectorEval<T>, CallbackError>;

    fn eval_b(&self, y_points: &[T]) -> Result<VectorEval<T>, CallbackError>;

    /// Optional initial guess for `y(t)`.
    fn initial_y(&self, _t: T) -> Option<Vec<T>> {
        None
    }

    fn domain(&self) -> (T, T) {
        let tp = self.time_points();
        (tp[0], tp[tp.len() - 1])
    }
}

/// Mesh size, quasi-uniformity ratio and degree, plus the derived penalty
/// parameter `ω` and barrier parameter `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodParams<T> {
    pub h: T,
    pub sigma: T,
    pub d: usize,
    pub omega: T,
    pub tau: T,
}

impl<T: Real> MethodParams<T> {
    /// `ω = h^{d/2}`, `τ = h^d`.
    pub fn default_rule(h: T, sigma: T, d: usize) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("mesh size h must be positive, got {h}")));
        }
        if !(sigma > T::zero() && sigma <= T::one()) {
            return Err(Error::InvalidParameter(format!("sigma must lie in (0, 1], got {sigma}")));
        }
        if d > MAX_DEGREE {
            return Err(Error::UnsupportedDegree(d));
        }
        let dd = T::of_usize(d);
        Ok(Self {
            h,
            sigma,
            d,
            omega: h.powf(dd / T::two()),
            tau: h.powf(dd),
        })
    }

    /// Replaces `ω` and `τ`.
    pub fn with_penalty_barrier(mut self, omega: T, tau: T) -> Result<Self> {
        if !(omega > T::zero()) || !(tau > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "omega and tau must be positive, got {omega}, {tau}"
            )));
        }
        self.omega = omega;
        self.tau = tau;
        Ok(self)
    }
}

fn callback_err(context: String) -> impl FnOnce(CallbackError) -> Error {
    move |e| Error::Callback {
        context,
        message: e.0,
    }
}

/// Checks the shapes of a vector evaluation against the declared dimensions.
pub(crate) fn check_vector_eval<T: Real>(e: &VectorEval<T>, n_out: usize, n_args: usize, what: &str) -> Result<()> {
    if e.values.len() != n_out
        || e.jacobian.rows() != n_out
        || e.jacobian.cols() != n_args
        || e.hessians.len() != n_out
        || e.hessians.iter().any(|h| h.rows() != n_args || h.cols() != n_args)
    {
        return Err(Error::Dimension(format!(
            "{what} returned shapes inconsistent with {n_out} outputs over {n_args} arguments"
        )));
    }
    Ok(())
}

pub(crate) fn check_scalar_eval<T: Real>(e: &ScalarEval<T>, n_args: usize) -> Result<()> {
    if e.gradient.len() != n_args || e.hessian.rows() != n_args || e.hessian.cols() != n_args {
        return Err(Error::Dimension(format!(
            "f returned shapes inconsistent with {n_args} arguments"
        )));
    }
    Ok(())
}

pub(crate) fn eval_f_at<T: Real, P: OcpProblem<T> + ?Sized>(problem: &P, v: &[T], t: T, j: usize) -> Result<ScalarEval<T>> {
    let e = problem
        .eval_f(v, t)
        .map_err(callback_err(format!("f at quadrature point {j} (t = {t})")))?;
    check_scalar_eval(&e, v.len())?;
    Ok(e)
}

pub(crate) fn eval_c_at<T: Real, P: OcpProblem<T> + ?Sized>(problem: &P, v: &[T], t: T, j: usize) -> Result<VectorEval<T>> {
    let e = problem
        .eval_c(v, t)
        .map_err(callback_err(format!("c at quadrature point {j} (t = {t})")))?;
    check_vector_eval(&e, problem.dims().m, v.len(), "c")?;
    Ok(e)
}

pub(crate) fn eval_b_checked<T: Real, P: OcpProblem<T> + ?Sized>(problem: &P, y_points: &[T]) -> Result<VectorEval<T>> {
    let e = problem
        .eval_b(y_points)
        .map_err(callback_err("b at the time points".to_string()))?;
    check_vector_eval(&e, problem.dims().p, y_points.len(), "b")?;
    Ok(e)
}

/// Quadrature value of the squared constraint residual
/// `r = Σ_j α_j ‖c_j‖² + ‖b(y(t_0), ..., y(t_E))‖²`.
pub fn residual<T: Real, P: OcpProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    space: &FeSpace<T>,
    rule: &GlobalRule<T>,
) -> Result<T> {
    let dims = problem.dims();
    if dims.n_y != space.n_y() || dims.n_z != space.n_z() {
        return Err(Error::Dimension(format!(
            "problem has (n_y, n_z) = ({}, {}), space has ({}, {})",
            dims.n_y,
            dims.n_z,
            space.n_y(),
            space.n_z()
        )));
    }
    let per_point = dims.n_args();
    let values = build_eval_operator(space, rule)?.apply(x)?;
    let mut r = T::zero();
    if dims.m > 0 {
        for j in 0..rule.len() {
            let v = &values[j * per_point..(j + 1) * per_point];
            let c = eval_c_at(problem, v, rule.points()[j], j)?;
            r += rule.weights()[j] * c.values.iter().map(|&ci| ci * ci).sum::<T>();
        }
    }
    if dims.p > 0 {
        let y_points = build_point_eval_operator(space, &problem.time_points())?.apply(x)?;
        let b = eval_b_checked(problem, &y_points)?;
        r += b.values.iter().map(|&bi| bi * bi).sum::<T>();
    }
    Ok(r)
}

/// Point at which callback derivatives are compared against finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSample<T> {
    /// Stacked `(ẏ, y, z)`.
    pub args: Vec<T>,
    pub t: T,
    /// Stacked `(y(t_0), ..., y(t_E))`.
    pub y_points: Vec<T>,
}

/// Largest relative discrepancies between coded and finite-difference derivatives.
///
/// Errors are normalized by `max(1, max |coded entry|)` of each compared object.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub samples: usize,
    pub f_gradient: f64,
    pub f_hessian: f64,
    pub c_jacobian: f64,
    pub c_hessian: f64,
    pub b_jacobian: f64,
    pub b_hessian: f64,
    pub max_hessian_asymmetry: f64,
}

impl DerivativeReport {
    /// Names of the checks exceeding the tolerances.
    pub fn mismatches(&self, first_order_tol: f64, second_order_tol: f64) -> Vec<&'static str> {
        let mut out = Vec::new();
        let checks = [
            ("f gradient", self.f_gradient, first_order_tol),
            ("f hessian", self.f_hessian, second_order_tol),
            ("c jacobian", self.c_jacobian, first_order_tol),
            ("c hessian", self.c_hessian, second_order_tol),
            ("b jacobian", self.b_jacobian, first_order_tol),
            ("b hessian", self.b_hessian, second_order_tol),
        ];
        for (name, err, tol) in checks {
            if !(err <= tol) {
                out.push(name);
            }
        }
        if !(self.max_hessian_asymmetry <= 1e-12) {
            out.push("hessian symmetry");
        }
        out
    }

    pub fn passes(&self, first_order_tol: f64, second_order_tol: f64) -> bool {
        self.mismatches(first_order_tol, second_order_tol).is_empty()
    }
}

fn fd_step<T: Real>(v: T) -> T {
    T::lit(1e-6).max(T::epsilon().cbrt()) * T::one().max(v.abs())
}

fn relative(err: f64, scale: f64) -> f64 {
    err / scale.max(1.0)
}

/// Compares coded vector-function derivatives with central differences.
/// Returns `(jacobian error, hessian error, hessian asymmetry)`.
fn check_vector<T: Real, F>(eval: F, x: &[T]) -> Result<(f64, f64, f64)>
where
    F: Fn(&[T]) -> Result<VectorEval<T>>,
{
    let base = eval(x)?;
    let n_out = base.values.len();
    let n = x.len();
    let mut jac_err = 0.0f64;
    let mut jac_scale = 0.0f64;
    let mut hess_err = 0.0f64;
    let mut hess_scale = 0.0f64;
    let mut asym = 0.0f64;
    for h in &base.hessians {
        asym = asym.max(h.max_asymmetry().to_f64_lossy());
        hess_scale = h.as_slice().iter().fold(hess_scale, |a, &v| a.max(v.to_f64_lossy().abs()));
    }
    jac_scale = base.jacobian.as_slice().iter().fold(jac_scale, |a, &v| a.max(v.to_f64_lossy().abs()));
    for k in 0..n {
        let step = fd_step(x[k]);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += step;
        xm[k] -= step;
        let ep = eval(&xp)?;
        let em = eval(&xm)?;
        let denom = T::two() * step;
        for i in 0..n_out {
            let fd = (ep.values[i] - em.values[i]) / denom;
            jac_err = jac_err.max((fd - base.jacobian[(i, k)]).abs().to_f64_lossy());
            for l in 0..n {
                let fd2 = (ep.jacobian[(i, l)] - em.jacobian[(i, l)]) / denom;
                hess_err = hess_err.max((fd2 - base.hessians[i][(k, l)]).abs().to_f64_lossy());
            }
        }
    }
    Ok((relative(jac_err, jac_scale), relative(hess_err, hess_scale), asym))
}

/// Central finite-difference validation of every callback derivative.
pub fn check_derivatives<T: Real, P: OcpProblem<T> + ?Sized>(
    problem: &P,
    samples: &[DerivativeSample<T>],
) -> Result<DerivativeReport> {
    let dims = problem.dims();
    let mut report = DerivativeReport {
        samples: samples.len(),
        ..Default::default()
    };
    for (s_idx, s) in samples.iter().enumerate() {
        if s.args.len() != dims.n_args() {
            return Err(Error::Dimension(format!(
                "sample {s_idx} has {} arguments, expected {}",
                s.args.len(),
                dims.n_args()
            )));
        }
        // f as a one-output vector function.
        let f_as_vector = |v: &[T]| -> Result<VectorEval<T>> {
            let e = eval_f_at(problem, v, s.t, s_idx)?;
            let n = v.len();
            let mut jac = DenseMatrix::zeros(1, n);
            for (k, &g) in e.gradient.iter().enumerate() {
                jac[(0, k)] = g;
            }
            Ok(VectorEval {
                values: vec![e.value],
                jacobian: jac,
                hessians: vec![e.hessian],
            })
        };
        let (g, h, a) = check_vector(f_as_vector, &s.args)?;
        report.f_gradient = report.f_gradient.max(g);
        report.f_hessian = report.f_hessian.max(h);
        report.max_hessian_asymmetry = report.max_hessian_asymmetry.max(a);

        if dims.m > 0 {
            let (g, h, a) = check_vector(|v: &[T]| eval_c_at(problem, v, s.t, s_idx), &s.args)?;
            report.c_jacobian = report.c_jacobian.max(g);
            report.c_hessian = report.c_hessian.max(h);
            report.max_hessian_asymmetry = report.max_hessian_asymmetry.max(a);
        }
        if dims.p > 0 {
            let (g, h, a) = check_vector(|v: &[T]| eval_b_checked(problem, v), &s.y_points)?;
            report.b_jacobian = report.b_jacobian.max(g);
            report.b_hessian = report.b_hessian.max(h);
            report.max_hessian_asymmetry = report.max_hessian_asymmetry.max(a);
        }
    }
    Ok(report)
}
