//! Built-in benchmark problems.

use crate::error::{Error, Result};
use crate::fespace::FeSpace;
use crate::linalg::DenseMatrix;
use crate::mesh::Mesh;
use crate::ocp::{CallbackError, MethodParams, OcpProblem, ProblemDims, ScalarEval, VectorEval};
use crate::scalar::Real;

/// `min ½∫₀¹ (y² + u²) dt`, `ẏ = u`, `y(0) = 1`, with `u = z₁ − z₂`, `z ≥ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearQuadratic;

impl<T: Real> OcpProblem<T> for LinearQuadratic {
    fn dims(&self) -> ProblemDims {
        ProblemDims { n_y: 1, n_z: 2, m: 1, p: 1 }
    }

    fn time_points(&self) -> Vec<T> {
        vec![T::zero(), T::one()]
    }

    fn eval_f(&self, v: &[T], _t: T) -> Result<ScalarEval<T>, CallbackError> {
        let (y, u) = (v[1], v[2] - v[3]);
        let mut hessian = DenseMatrix::zeros(4, 4);
        hessian[(1, 1)] = T::one();
        hessian[(2, 2)] = T::one();
        hessian[(3, 3)] = T::one();
        hessian[(2, 3)] = -T::one();
        hessian[(3, 2)] = -T::one();
        Ok(ScalarEval {
            value: T::half() * (y * y + u * u),
            gradient: vec![T::zero(), y, u, -u],
            hessian,
        })
    }

    fn eval_c(&self, v: &[T], _t: T) -> Result<VectorEval<T>, CallbackError> {
        let mut e = VectorEval::zeros(1, 4);
        e.values[0] = v[0] - (v[2] - v[3]);
        e.jacobian[(0, 0)] = T::one();
        e.jacobian[(0, 2)] = -T::one();
        e.jacobian[(0, 3)] = T::one();
        Ok(e)
    }

    fn eval_b(&self, y_points: &[T]) -> Result<VectorEval<T>, CallbackError> {
        let mut e = VectorEval::zeros(1, y_points.len());
        e.values[0] = y_points[0] - T::one();
        e.jacobian[(0, 0)] = T::one();
        Ok(e)
    }

    fn initial_y(&self, _t: T) -> Option<Vec<T>> {
        Some(vec![T::one()])
    }
}

/// `f ≡ 0`, `c = ẏ`, `b = y(0)`: solved by `y ≡ 0` with any interior `z`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Trivial;

impl<T: Real> OcpProblem<T> for Trivial {
    fn dims(&self) -> ProblemDims {
        ProblemDims { n_y: 1, n_z: 1, m: 1, p: 1 }
    }

    fn time_points(&self) -> Vec<T> {
        vec![T::zero(), T::one()]
    }

    fn eval_f(&self, v: &[T], _t: T) -> Result<ScalarEval<T>, CallbackError> {
        Ok(ScalarEval::zero(v.len()))
    }

    fn eval_c(&self, v: &[T], _t: T) -> Result<VectorEval<T>, CallbackError> {
        let mut e = VectorEval::zeros(1, v.len());
        e.values[0] = v[0];
        e.jacobian[(0, 0)] = T::one();
        Ok(e)
    }

    fn eval_b(&self, y_points: &[T]) -> Result<VectorEval<T>, CallbackError> {
        let mut e = VectorEval::zeros(1, y_points.len());
        e.values[0] = y_points[0];
        e.jacobian[(0, 0)] = T::one();
        Ok(e)
    }
}

/// `f = L·z` with no constraints; the barrier minimizer is `z ≈ τ/L`.
#[derive(Debug, Clone, Copy)]
pub struct BarrierPull {
    pub slope: f64,
}

impl Default for BarrierPull {
    fn default() -> Self {
        Self { slope: 1.0 }
    }
}

impl<T: Real> OcpProblem<T> for BarrierPull {
    fn dims(&self) -> ProblemDims {
        ProblemDims { n_y: 0, n_z: 1, m: 0, p: 0 }
    }

    fn time_points(&self) -> Vec<T> {
        vec![T::zero(), T::one()]
    }

    fn eval_f(&self, v: &[T], _t: T) -> Result<ScalarEval<T>, CallbackError> {
        let l = T::lit(self.slope);
        Ok(ScalarEval {
            value: l * v[0],
            gradient: vec![l],
            hessian: DenseMatrix::zeros(1, 1),
        })
    }

    fn eval_c(&self, v: &[T], _t: T) -> Result<VectorEval<T>, CallbackError> {
        Ok(VectorEval::empty(v.len()))
    }

    fn eval_b(&self, y_points: &[T]) -> Result<VectorEval<T>, CallbackError> {
        Ok(VectorEval::empty(y_points.len()))
    }
}

/// Known solution of a benchmark, for the components it determines.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticSolution {
    pub y: fn(usize, f64) -> f64,
    pub y_dot: fn(usize, f64) -> f64,
    pub optimal_cost: f64,
}

/// Mesh layout used to build the finite element space of a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshLayout {
    Shared,
    /// Differential components use twice the mesh width of the auxiliaries.
    CoarseDifferential,
}

pub struct Benchmark {
    pub name: &'static str,
    pub problem: Box<dyn OcpProblem<f64>>,
    pub analytic: Option<AnalyticSolution>,
    pub layout: MeshLayout,
    pub notes: &'static str,
}

impl Benchmark {
    /// Space of degree `d` with mesh width at most `h`.
    pub fn space(&self, h: f64, d: usize) -> Result<FeSpace<f64>> {
        let dims = self.problem.dims();
        let domain = self.problem.domain();
        let fine = Mesh::with_max_width(domain, h)?;
        let coarse = match self.layout {
            MeshLayout::Shared => fine.clone(),
            MeshLayout::CoarseDifferential => Mesh::with_max_width(domain, 2.0 * h)?,
        };
        let meshes = (0..dims.n_x())
            .map(|k| if k < dims.n_y { coarse.clone() } else { fine.clone() })
            .collect();
        FeSpace::new(meshes, d, dims.n_y, dims.n_z)
    }

    pub fn params(&self, h: f64, d: usize) -> Result<MethodParams<f64>> {
        MethodParams::default_rule(h, 1.0, d)
    }
}

fn lq_y(_: usize, t: f64) -> f64 {
    (1.0 - t).cosh() / 1f64.cosh()
}

fn lq_y_dot(_: usize, t: f64) -> f64 {
    -(1.0 - t).sinh() / 1f64.cosh()
}

fn zero(_: usize, _: f64) -> f64 {
    0.0
}

pub fn register_builtin_benchmarks() -> Vec<&'static str> {
    vec!["lq", "lq-mixed", "trivial", "barrier-pull"]
}

pub fn benchmark(name: &str) -> Result<Benchmark> {
    let lq_solution = AnalyticSolution {
        y: lq_y,
        y_dot: lq_y_dot,
        optimal_cost: 0.5 * 1f64.tanh(),
    };
    let b = match name {
        "lq" => Benchmark {
            name: "lq",
            problem: Box::new(LinearQuadratic),
            analytic: Some(lq_solution),
            layout: MeshLayout::Shared,
            notes: "linear-quadratic regulator with split control u = z1 - z2",
        },
        "lq-mixed" => Benchmark {
            name: "lq-mixed",
            problem: Box::new(LinearQuadratic),
            analytic: Some(lq_solution),
            layout: MeshLayout::CoarseDifferential,
            notes: "lq with the state on a mesh twice as coarse as the control pair",
        },
        "trivial" => Benchmark {
            name: "trivial",
            problem: Box::new(Trivial),
            analytic: Some(AnalyticSolution {
                y: zero,
                y_dot: zero,
                optimal_cost: 0.0,
            }),
            layout: MeshLayout::Shared,
            notes: "exactly representable solution y = 0",
        },
        "barrier-pull" => Benchmark {
            name: "barrier-pull",
            problem: Box::new(BarrierPull::default()),
            analytic: None,
            layout: MeshLayout::Shared,
            notes: "f = z without constraints; minimizer close to tau",
        },
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown benchmark '{other}' (available: {})",
                register_builtin_benchmarks().join(", ")
            )))
        }
    };
    Ok(b)
}
