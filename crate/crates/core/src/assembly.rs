//! The discrete penalty-barrier problem
//!
//! ```text
//! min F(x) + (ω/2) xᵀSx + (1/2ω)(‖H_c(x)‖² + ‖H_b(x)‖²) − τ Σ_j α_j Σ_k log z_k(ρ_j)
//! ```
//!
//! with `F(x) = Σ_j α_j f_j`, `H_c = (√α_j c_j)_j` and `H_b = b(P_t x)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fespace::{build_eval_operator, build_point_eval_operator, build_regularizer, FeSpace};
use crate::linalg::DenseMatrix;
use crate::mesh::merge_meshes;
use crate::ocp::{eval_b_checked, eval_c_at, eval_f_at, MethodParams, OcpProblem, ProblemDims, ScalarEval, VectorEval};
use crate::quadrature::{compose_rule, GlobalRule, UnitRule};
use crate::scalar::Real;
use crate::sparse::SparseOperator;

/// Penalty and barrier weights used by one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyBarrier<T> {
    pub omega: T,
    pub tau: T,
}

/// Multipliers of the constrained form: `ϱ` for `F`, `λ` for `H_c`, `ν` for
/// `H_b`, `μ` for `g_j = z(ρ_j)^{α_j}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierSet<T> {
    pub rho: T,
    /// `λ_{j,i}` at index `j·m + i`.
    pub lambda: Vec<T>,
    pub nu: Vec<T>,
    /// `μ_{j,k}` at index `j·n_z + k`.
    pub mu: Vec<T>,
}

impl<T: Real> MultiplierSet<T> {
    pub fn zeros(dims: ProblemDims, n_points: usize) -> Self {
        Self {
            rho: T::zero(),
            lambda: vec![T::zero(); dims.m * n_points],
            nu: vec![T::zero(); dims.p],
            mu: vec![T::zero(); dims.n_z * n_points],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms<T> {
    /// `F(x)`.
    pub f: T,
    /// `xᵀSx`.
    pub quad_norm: T,
    /// `(‖H_c‖² + ‖H_b‖²) / (2ω)`.
    pub penalty: T,
    /// `Σ_j α_j Σ_k log z_k(ρ_j)`; enters the total with factor `−τ`.
    pub log_barrier: T,
    pub total: T,
}

/// Callback results at every quadrature point and at the time points.
struct PointEvals<T> {
    values: Vec<T>,
    f: Vec<ScalarEval<T>>,
    c: Vec<VectorEval<T>>,
    b: VectorEval<T>,
}

/// Assembled discrete problem over a fixed space and quadrature rule.
pub struct AssembledNlp<'p, T: Real, P: OcpProblem<T> + ?Sized> {
    problem: &'p P,
    dims: ProblemDims,
    space: FeSpace<T>,
    rule: GlobalRule<T>,
    params: MethodParams<T>,
    time_points: Vec<T>,
    eval_op: SparseOperator<T>,
    point_op: SparseOperator<T>,
    regularizer: SparseOperator<T>,
    ordering: Vec<usize>,
}

impl<'p, T: Real, P: OcpProblem<T> + ?Sized> AssembledNlp<'p, T, P> {
    /// Builds the merged-mesh rule with `d + 1` Gauss-Legendre nodes per interval
    /// and caches the evaluation, point-evaluation and regularization operators.
    pub fn new(problem: &'p P, space: FeSpace<T>, params: MethodParams<T>) -> Result<Self> {
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
        if params.d != space.degree() {
            return Err(Error::InvalidParameter(format!(
                "parameters use degree {}, space has degree {}",
                params.d,
                space.degree()
            )));
        }
        if !(params.omega > T::zero()) || !(params.tau > T::zero()) {
            return Err(Error::InvalidParameter("omega and tau must be positive".into()));
        }
        let time_points = problem.time_points();
        if time_points.len() < 2 || time_points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidBreakpoints(
                "time points must be strictly increasing with at least two entries".into(),
            ));
        }
        let meshes = space.meshes();
        let (t0, te) = meshes[0].domain();
        let tol = T::lit(1e-12).max(T::lit(4.0) * T::epsilon()) * (te - t0);
        if (time_points[0] - t0).abs() > tol || (time_points[time_points.len() - 1] - te).abs() > tol {
            return Err(Error::DomainMismatch);
        }
        let merged = merge_meshes(&meshes)?;
        let rule = compose_rule(&merged, &UnitRule::for_degree(space.degree())?);
        let eval_op = build_eval_operator(&space, &rule)?;
        let point_op = build_point_eval_operator(&space, &time_points)?;
        let regularizer = build_regularizer(&space, &rule, &eval_op)?;
        let ordering = space.time_ordering();
        Ok(Self {
            problem,
            dims,
            space,
            rule,
            params,
            time_points,
            eval_op,
            point_op,
            regularizer,
            ordering,
        })
    }

    pub fn problem(&self) -> &'p P {
        self.problem
    }

    pub fn dims(&self) -> ProblemDims {
        self.dims
    }

    pub fn space(&self) -> &FeSpace<T> {
        &self.space
    }

    pub fn rule(&self) -> &GlobalRule<T> {
        &self.rule
    }

    pub fn params(&self) -> MethodParams<T> {
        self.params
    }

    pub fn weights(&self) -> PenaltyBarrier<T> {
        PenaltyBarrier {
            omega: self.params.omega,
            tau: self.params.tau,
        }
    }

    pub fn time_points(&self) -> &[T] {
        &self.time_points
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    pub fn n_points(&self) -> usize {
        self.rule.len()
    }

    pub fn eval_operator(&self) -> &SparseOperator<T> {
        &self.eval_op
    }

    pub fn point_operator(&self) -> &SparseOperator<T> {
        &self.point_op
    }

    pub fn regularizer(&self) -> &SparseOperator<T> {
        &self.regularizer
    }

    /// Time-interleaved coefficient ordering used by the Newton solves.
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    fn check_x(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n_dofs() {
            return Err(Error::Dimension(format!(
                "coefficient vector has {} entries, space has {}",
                x.len(),
                self.n_dofs()
            )));
        }
        Ok(())
    }

    /// `z_k(ρ_j)` at index `j·n_z + k`.
    pub fn z_values(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_x(x)?;
        let values = self.eval_op.apply(x)?;
        Ok(self.z_from_values(&values))
    }

    fn z_from_values(&self, values: &[T]) -> Vec<T> {
        let per = self.dims.n_args();
        let off = 2 * self.dims.n_y;
        (0..self.rule.len())
            .flat_map(|j| values[j * per + off..(j + 1) * per].iter().copied())
            .collect()
    }

    fn check_barrier_domain(&self, values: &[T]) -> Result<()> {
        let per = self.dims.n_args();
        let off = 2 * self.dims.n_y;
        for j in 0..self.rule.len() {
            for k in 0..self.dims.n_z {
                let z = values[j * per + off + k];
                if !(z > T::zero()) || !z.is_finite() {
                    return Err(Error::BarrierDomain {
                        point: j,
                        component: k,
                        value: z.to_f64_lossy(),
                    });
                }
            }
        }
        Ok(())
    }

    fn evaluate(&self, x: &[T], with_f: bool) -> Result<PointEvals<T>> {
        self.check_x(x)?;
        let values = self.eval_op.apply(x)?;
        let per = self.dims.n_args();
        let points = self.rule.points();
        let n_args = per;
        let f = if with_f {
            (0..points.len())
                .into_par_iter()
                .map(|j| eval_f_at(self.problem, &values[j * per..(j + 1) * per], points[j], j))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let c = if self.dims.m > 0 {
            (0..points.len())
                .into_par_iter()
                .map(|j| eval_c_at(self.problem, &values[j * per..(j + 1) * per], points[j], j))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![VectorEval::empty(n_args); points.len()]
        };
        let b = if self.dims.p > 0 {
            let y_points = self.point_op.apply(x)?;
            eval_b_checked(self.problem, &y_points)?
        } else {
            VectorEval::empty(self.point_op.rows())
        };
        Ok(PointEvals { values, f, c, b })
    }

    /// `(H_c, H_b)`.
    pub fn eval_penalty_blocks(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let ev = self.evaluate(x, false)?;
        Ok(self.penalty_blocks_from(&ev))
    }

    fn penalty_blocks_from(&self, ev: &PointEvals<T>) -> (Vec<T>, Vec<T>) {
        let mut hc = Vec::with_capacity(self.dims.m * self.rule.len());
        for (j, c) in ev.c.iter().enumerate() {
            let s = self.rule.weights()[j].sqrt();
            hc.extend(c.values.iter().map(|&v| s * v));
        }
        (hc, ev.b.values.clone())
    }

    /// Squared constraint residual `Σ_j α_j ‖c_j‖² + ‖b‖²`.
    pub fn residual(&self, x: &[T]) -> Result<T> {
        let (hc, hb) = self.eval_penalty_blocks(x)?;
        Ok(sum_sq(&hc) + sum_sq(&hb))
    }

    pub fn eval_objective_terms(&self, x: &[T]) -> Result<ObjectiveTerms<T>> {
        self.objective_terms_at(x, self.weights())
    }

    pub fn objective_terms_at(&self, x: &[T], pb: PenaltyBarrier<T>) -> Result<ObjectiveTerms<T>> {
        let ev = self.evaluate(x, true)?;
        if self.dims.n_z > 0 {
            self.check_barrier_domain(&ev.values)?;
        }
        let alpha = self.rule.weights();
        let f: T = ev.f.iter().zip(alpha).map(|(e, &a)| a * e.value).sum();
        let quad_norm = self.regularizer.quadratic_form(x)?;
        let (hc, hb) = self.penalty_blocks_from(&ev);
        let penalty = (sum_sq(&hc) + sum_sq(&hb)) / (T::two() * pb.omega);
        let z = self.z_from_values(&ev.values);
        let nz = self.dims.n_z;
        let mut log_barrier = T::zero();
        for (j, &a) in alpha.iter().enumerate() {
            let s: T = z[j * nz..(j + 1) * nz].iter().map(|v| v.ln()).sum();
            log_barrier += a * s;
        }
        let total = f + pb.omega / T::two() * quad_norm + penalty - pb.tau * log_barrier;
        Ok(ObjectiveTerms {
            f,
            quad_norm,
            penalty,
            log_barrier,
            total,
        })
    }

    pub fn eval_gradient(&self, x: &[T]) -> Result<Vec<T>> {
        self.gradient_at(x, self.weights())
    }

    pub fn gradient_at(&self, x: &[T], pb: PenaltyBarrier<T>) -> Result<Vec<T>> {
        let ev = self.evaluate(x, true)?;
        if self.dims.n_z > 0 {
            self.check_barrier_domain(&ev.values)?;
        }
        let per = self.dims.n_args();
        let off = 2 * self.dims.n_y;
        let inv_omega = T::one() / pb.omega;
        let mut local = vec![T::zero(); ev.values.len()];
        for (j, &a) in self.rule.weights().iter().enumerate() {
            let g = &mut local[j * per..(j + 1) * per];
            for (gi, &fi) in g.iter_mut().zip(&ev.f[j].gradient) {
                *gi = a * fi;
            }
            let c = &ev.c[j];
            for (i, &ci) in c.values.iter().enumerate() {
                let s = a * inv_omega * ci;
                for (gk, &jk) in g.iter_mut().zip(c.jacobian.row(i)) {
                    *gk += s * jk;
                }
            }
            for k in 0..self.dims.n_z {
                let z = ev.values[j * per + off + k];
                g[off + k] -= pb.tau * a / z;
            }
        }
        let mut grad = self.eval_op.apply_transpose(&local)?;
        let sx = self.regularizer.apply(x)?;
        for (g, s) in grad.iter_mut().zip(sx) {
            *g += pb.omega * s;
        }
        if self.dims.p > 0 {
            let jb = &ev.b;
            let mut lb = vec![T::zero(); self.point_op.rows()];
            for (i, &bi) in jb.values.iter().enumerate() {
                for (l, &v) in lb.iter_mut().zip(jb.jacobian.row(i)) {
                    *l += inv_omega * bi * v;
                }
            }
            for (g, v) in grad.iter_mut().zip(self.point_op.apply_transpose(&lb)?) {
                *g += v;
            }
        }
        Ok(grad)
    }

    /// Penalty-induced multipliers `ϱ = 1`, `λ = −H_c/ω`, `ν = −H_b/ω`,
    /// `μ = τ / g_j` with `g_j = z(ρ_j)^{α_j}`.
    pub fn penalty_multipliers(&self, x: &[T]) -> Result<MultiplierSet<T>> {
        self.penalty_multipliers_at(x, self.weights())
    }

    pub fn penalty_multipliers_at(&self, x: &[T], pb: PenaltyBarrier<T>) -> Result<MultiplierSet<T>> {
        let ev = self.evaluate(x, false)?;
        if self.dims.n_z > 0 {
            self.check_barrier_domain(&ev.values)?;
        }
        let (hc, hb) = self.penalty_blocks_from(&ev);
        let z = self.z_from_values(&ev.values);
        let nz = self.dims.n_z;
        let mu = z
            .iter()
            .enumerate()
            .map(|(idx, &zk)| pb.tau / zk.powf(self.rule.weights()[idx / nz]))
            .collect();
        Ok(MultiplierSet {
            rho: T::one(),
            lambda: hc.iter().map(|&v| -v / pb.omega).collect(),
            nu: hb.iter().map(|&v| -v / pb.omega).collect(),
            mu,
        })
    }

    /// `ϱωS + Pᵀ blockdiag(∇²ℓ_j) P − P_tᵀ ∇²(νᵀb) P_t` with
    /// `ℓ_j = ϱ α_j f_j − √α_j λ_jᵀ c_j − μ_jᵀ g_j`.
    pub fn eval_lagrangian_hessian(&self, x: &[T], mult: &MultiplierSet<T>) -> Result<SparseOperator<T>> {
        let m_pts = self.rule.len();
        if mult.lambda.len() != self.dims.m * m_pts
            || mult.nu.len() != self.dims.p
            || mult.mu.len() != self.dims.n_z * m_pts
        {
            return Err(Error::Dimension(format!(
                "multipliers have lengths ({}, {}, {}), expected ({}, {}, {})",
                mult.lambda.len(),
                mult.nu.len(),
                mult.mu.len(),
                self.dims.m * m_pts,
                self.dims.p,
                self.dims.n_z * m_pts
            )));
        }
        let ev = self.evaluate(x, true)?;
        let per = self.dims.n_args();
        let off = 2 * self.dims.n_y;
        let (m, nz) = (self.dims.m, self.dims.n_z);
        let blocks: Vec<DenseMatrix<T>> = (0..m_pts)
            .map(|j| {
                let a = self.rule.weights()[j];
                let mut w = ev.f[j].hessian.clone();
                w.scale(mult.rho * a);
                let sa = a.sqrt();
                for i in 0..m {
                    add_scaled(&mut w, &ev.c[j].hessians[i], -sa * mult.lambda[j * m + i]);
                }
                for k in 0..nz {
                    let z = ev.values[j * per + off + k];
                    let g2 = a * (a - T::one()) * z.powf(a - T::two());
                    w[(off + k, off + k)] -= mult.mu[j * nz + k] * g2;
                }
                w
            })
            .collect();
        let mut wb = DenseMatrix::zeros(self.point_op.rows(), self.point_op.rows());
        for (i, h) in ev.b.hessians.iter().enumerate() {
            add_scaled(&mut wb, h, -mult.nu[i]);
        }
        self.assemble_hessian(&blocks, &wb, mult.rho * self.params.omega)
    }

    pub fn eval_full_hessian(&self, x: &[T]) -> Result<SparseOperator<T>> {
        self.full_hessian_at(x, self.weights())
    }

    /// Exact Hessian of the penalty-barrier objective. Per quadrature point the
    /// block is `α_j[∇²f_j + (1/ω)(Jc_jᵀJc_j + Σ_i c_{j,i}∇²c_{j,i})] + τα_j diag(1/z²)`.
    pub fn full_hessian_at(&self, x: &[T], pb: PenaltyBarrier<T>) -> Result<SparseOperator<T>> {
        let ev = self.evaluate(x, true)?;
        if self.dims.n_z > 0 {
            self.check_barrier_domain(&ev.values)?;
        }
        let per = self.dims.n_args();
        let off = 2 * self.dims.n_y;
        let inv_omega = T::one() / pb.omega;
        let blocks: Vec<DenseMatrix<T>> = (0..self.rule.len())
            .map(|j| {
                let a = self.rule.weights()[j];
                let mut out = ev.f[j].hessian.clone();
                out.scale(a);
                add_gauss_newton(&mut out, &ev.c[j], a * inv_omega);
                for k in 0..self.dims.n_z {
                    let z = ev.values[j * per + off + k];
                    out[(off + k, off + k)] += pb.tau * a / (z * z);
                }
                out
            })
            .collect();
        let mut wb = DenseMatrix::zeros(self.point_op.rows(), self.point_op.rows());
        add_gauss_newton(&mut wb, &ev.b, inv_omega);
        self.assemble_hessian(&blocks, &wb, pb.omega)
    }

    /// Jacobians of `H_c`, `H_b` and of the plain point values `G_pt = (z(ρ_j))_j`.
    pub fn eval_constraint_jacobians(
        &self,
        x: &[T],
    ) -> Result<(SparseOperator<T>, SparseOperator<T>, SparseOperator<T>)> {
        let ev = self.evaluate(x, false)?;
        let per = self.dims.n_args();
        let off = 2 * self.dims.n_y;
        let n = self.n_dofs();
        let m = self.dims.m;
        let mut jc = Vec::new();
        let mut jg = Vec::new();
        for j in 0..self.rule.len() {
            let sa = self.rule.weights()[j].sqrt();
            for a in 0..per {
                let (cols, vals) = self.eval_op.row(j * per + a);
                for i in 0..m {
                    let coef = sa * ev.c[j].jacobian[(i, a)];
                    if coef != T::zero() {
                        for (&col, &v) in cols.iter().zip(vals) {
                            jc.push((j * m + i, col, coef * v));
                        }
                    }
                }
                if a >= off {
                    for (&col, &v) in cols.iter().zip(vals) {
                        jg.push((j * self.dims.n_z + a - off, col, v));
                    }
                }
            }
        }
        let mut jb = Vec::new();
        for i in 0..self.dims.p {
            for r in 0..self.point_op.rows() {
                let coef = ev.b.jacobian[(i, r)];
                if coef != T::zero() {
                    let (cols, vals) = self.point_op.row(r);
                    for (&col, &v) in cols.iter().zip(vals) {
                        jb.push((i, col, coef * v));
                    }
                }
            }
        }
        Ok((
            SparseOperator::from_triplets(m * self.rule.len(), n, jc)?,
            SparseOperator::from_triplets(self.dims.p, n, jb)?,
            SparseOperator::from_triplets(self.dims.n_z * self.rule.len(), n, jg)?,
        ))
    }

    /// `s·S + Σ_j B_jᵀ W_j B_j + P_tᵀ W_b P_t` where `B_j` are the rows of the
    /// evaluation operator belonging to point `j`.
    fn assemble_hessian(&self, blocks: &[DenseMatrix<T>], boundary: &DenseMatrix<T>, s: T) -> Result<SparseOperator<T>> {
        let per = self.dims.n_args();
        let mut triplets: Vec<(usize, usize, T)> = self.regularizer.triplets().map(|(r, c, v)| (r, c, s * v)).collect();
        for (j, w) in blocks.iter().enumerate() {
            push_congruence(&self.eval_op, j * per, w, &mut triplets);
        }
        if self.point_op.rows() > 0 {
            push_congruence(&self.point_op, 0, boundary, &mut triplets);
        }
        let n = self.n_dofs();
        let h = SparseOperator::from_triplets(n, n, triplets)?;
        let scale = h.triplets().fold(T::one(), |acc, (_, _, v)| acc.max(v.abs()));
        let asym = h.max_asymmetry();
        if asym > T::lit(1e-10) * scale {
            return Err(Error::InternalConsistency(format!(
                "assembled Hessian asymmetry {asym} exceeds tolerance"
            )));
        }
        Ok(h)
    }
}

fn sum_sq<T: Real>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum()
}

fn add_scaled<T: Real>(dst: &mut DenseMatrix<T>, src: &DenseMatrix<T>, s: T) {
    if s == T::zero() {
        return;
    }
    for i in 0..dst.rows() {
        for j in 0..dst.cols() {
            dst[(i, j)] += s * src[(i, j)];
        }
    }
}

/// `dst += s (JᵀJ + Σ_i v_i ∇²v_i)`.
fn add_gauss_newton<T: Real>(dst: &mut DenseMatrix<T>, e: &VectorEval<T>, s: T) {
    let n = dst.rows();
    for i in 0..e.values.len() {
        let row = e.jacobian.row(i);
        for a in 0..n {
            if row[a] == T::zero() {
                continue;
            }
            for b in 0..n {
                dst[(a, b)] += s * (row[a] * row[b]);
            }
        }
        add_scaled(dst, &e.hessians[i], s * e.values[i]);
    }
}

/// Appends the triplets of `Bᵀ W B`, where `B` is the row block of `op`
/// starting at `first_row` with `W.rows()` rows.
fn push_congruence<T: Real>(op: &SparseOperator<T>, first_row: usize, w: &DenseMatrix<T>, out: &mut Vec<(usize, usize, T)>) {
    let k = w.rows();
    let mut cols: Vec<usize> = (0..k).flat_map(|a| op.row(first_row + a).0.iter().copied()).collect();
    cols.sort_unstable();
    cols.dedup();
    let nc = cols.len();
    let mut b = DenseMatrix::zeros(k, nc);
    for a in 0..k {
        let (rc, rv) = op.row(first_row + a);
        for (&c, &v) in rc.iter().zip(rv) {
            let idx = cols.binary_search(&c).expect("column collected");
            b[(a, idx)] = v;
        }
    }
    // W B
    let mut wb = DenseMatrix::zeros(k, nc);
    for a in 0..k {
        for c in 0..k {
            let wac = w[(a, c)];
            if wac == T::zero() {
                continue;
            }
            for l in 0..nc {
                wb[(a, l)] += wac * b[(c, l)];
            }
        }
    }
    for p in 0..nc {
        for q in p..nc {
            let mut v = T::zero();
            for a in 0..k {
                v += b[(a, p)] * wb[(a, q)];
            }
            if v != T::zero() {
                out.push((cols[p], cols[q], v));
                if p != q {
                    out.push((cols[q], cols[p], v));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{benchmark, register_builtin_benchmarks};
    use crate::mesh::Mesh;
    use crate::ocp::CallbackError;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// n_y = 1, n_z = 1. `f = f_const`, `c = ẏ − z` (if `with_c`), `b = y(0) − 1` (if `with_b`).
    struct Simple {
        f_const: f64,
        with_c: bool,
        with_b: bool,
    }

    impl OcpProblem<f64> for Simple {
        fn dims(&self) -> ProblemDims {
            ProblemDims {
                n_y: 1,
                n_z: 1,
                m: self.with_c as usize,
                p: self.with_b as usize,
            }
        }
        fn time_points(&self) -> Vec<f64> {
            vec![0.0, 1.0]
        }
        fn eval_f(&self, v: &[f64], _t: f64) -> Result<ScalarEval<f64>, CallbackError> {
            let mut e = ScalarEval::zero(v.len());
            e.value = self.f_const;
            Ok(e)
        }
        fn eval_c(&self, v: &[f64], _t: f64) -> Result<VectorEval<f64>, CallbackError> {
            if !self.with_c {
                return Ok(VectorEval::empty(v.len()));
            }
            let mut e = VectorEval::zeros(1, 3);
            e.values[0] = v[0] - v[2];
            e.jacobian[(0, 0)] = 1.0;
            e.jacobian[(0, 2)] = -1.0;
            Ok(e)
        }
        fn eval_b(&self, yp: &[f64]) -> Result<VectorEval<f64>, CallbackError> {
            if !self.with_b {
                return Ok(VectorEval::empty(yp.len()));
            }
            let mut e = VectorEval::zeros(1, yp.len());
            e.values[0] = yp[0] - 1.0;
            e.jacobian[(0, 0)] = 1.0;
            Ok(e)
        }
    }

    fn params(h: f64, d: usize, omega: f64, tau: f64) -> MethodParams<f64> {
        MethodParams::default_rule(h, 1.0, d)
            .unwrap()
            .with_penalty_barrier(omega, tau)
            .unwrap()
    }

    fn simple_nlp(p: &Simple, n: usize, d: usize, omega: f64) -> AssembledNlp<'_, f64, Simple> {
        let mesh = Mesh::uniform((0.0, 1.0), n).unwrap();
        let space = FeSpace::shared(&mesh, d, 1, 1).unwrap();
        AssembledNlp::new(p, space, params(1.0 / n as f64, d, omega, 0.1)).unwrap()
    }

    #[test]
    fn objective_term_examples() {
        let p = Simple { f_const: 1.0, with_c: true, with_b: false };
        let nlp = simple_nlp(&p, 3, 2, 0.5);
        let x = nlp.space().interpolate(|k, t| if k == 0 { t } else { 0.5 });
        let terms = nlp.eval_objective_terms(&x).unwrap();
        assert_abs_diff_eq!(terms.f, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(terms.penalty, 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(terms.log_barrier, 0.5f64.ln(), epsilon = 1e-14);
        // ‖y‖²_{H¹} + ‖z‖² = 1/3 + 1 + 1/4
        assert_abs_diff_eq!(terms.quad_norm, 1.0 / 3.0 + 1.0 + 0.25, epsilon = 1e-13);
        let expected = 1.0 + 0.25 * terms.quad_norm + 0.25 - 0.1 * 0.5f64.ln();
        assert_abs_diff_eq!(terms.total, expected, epsilon = 1e-13);

        let p = Simple { f_const: 0.0, with_c: true, with_b: true };
        let nlp = simple_nlp(&p, 2, 2, 0.5);
        let x = nlp.space().interpolate(|k, _| if k == 0 { 1.0 } else { 0.0 + 1.0 * (k as f64) });
        // y ≡ 1, z ≡ 1: c = −1, b = 0, log z = 0
        let terms = nlp.eval_objective_terms(&x).unwrap();
        assert_eq!(terms.f, 0.0);
        assert_abs_diff_eq!(terms.log_barrier, 0.0, epsilon = 1e-15);
        let (hc, hb) = nlp.eval_penalty_blocks(&x).unwrap();
        assert_eq!(hb, vec![0.0]);
        assert_abs_diff_eq!(hc.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn penalty_blocks_match_independent_quadrature() {
        let b = benchmark("lq").unwrap();
        let space = b.space(0.25, 3).unwrap();
        let nlp = AssembledNlp::new(b.problem.as_ref(), space, b.params(0.25, 3).unwrap()).unwrap();
        let x = nlp.space().interpolate(|k, t| [1.0 + t * t, 2.0 + t, 0.5 + t.sin()][k]);
        let (hc, _) = nlp.eval_penalty_blocks(&x).unwrap();
        let direct = nlp
            .rule()
            .integrate(|t| {
                let ydot = 2.0 * t;
                let u = (2.0 + t) - (0.5 + t.sin());
                (ydot - u) * (ydot - u)
            })
            .unwrap();
        let got: f64 = hc.iter().map(|v| v * v).sum();
        // z interpolants are not exact, compare against the same interpolants
        let mut indep = 0.0;
        let per = 4;
        let vals = nlp.eval_operator().apply(&x).unwrap();
        for (j, &a) in nlp.rule().weights().iter().enumerate() {
            let c = vals[j * per] - (vals[j * per + 2] - vals[j * per + 3]);
            indep += a * c * c;
        }
        assert!((got - indep).abs() <= 1e-13 * indep.max(1.0));
        assert!((got - direct).abs() < 1e-3);
    }

    #[test]
    fn barrier_domain_error_identifies_point() {
        let p = Simple { f_const: 0.0, with_c: false, with_b: false };
        let nlp = simple_nlp(&p, 2, 1, 1.0);
        let x = nlp.space().interpolate(|k, t| if k == 0 { 0.0 } else if t > 0.5 { -1.0 } else { 1.0 });
        match nlp.eval_objective_terms(&x) {
            Err(Error::BarrierDomain { point, component, .. }) => {
                assert_eq!(component, 0);
                assert!(nlp.rule().points()[point] > 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(nlp.eval_gradient(&x).is_err());
    }

    fn random_point(nlp: &AssembledNlp<'_, f64, dyn OcpProblem<f64>>, rng: &mut StdRng) -> Vec<f64> {
        let n_y = nlp.dims().n_y;
        let mut x = vec![0.0; nlp.n_dofs()];
        for (k, comp) in nlp.space().components().iter().enumerate() {
            for i in comp.offset..comp.offset + comp.n_dofs {
                x[i] = if k < n_y { rng.gen_range(-1.0..1.0) } else { rng.gen_range(0.5..1.5) };
            }
        }
        x
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        for name in register_builtin_benchmarks() {
            let b = benchmark(name).unwrap();
            let space = b.space(0.25, 3).unwrap();
            let nlp = AssembledNlp::new(b.problem.as_ref(), space, b.params(0.25, 3).unwrap()).unwrap();
            for _ in 0..3 {
                let x = random_point(&nlp, &mut rng);
                let g = nlp.eval_gradient(&x).unwrap();
                let h = nlp.eval_full_hessian(&x).unwrap().to_dense();
                let mut fd = vec![0.0; x.len()];
                for i in 0..x.len() {
                    let step = 1e-6 * x[i].abs().max(1.0);
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += step;
                    xm[i] -= step;
                    let fp = nlp.eval_objective_terms(&xp).unwrap().total;
                    let fm = nlp.eval_objective_terms(&xm).unwrap().total;
                    fd[i] = (fp - fm) / (2.0 * step);
                    let gp = nlp.eval_gradient(&xp).unwrap();
                    let gm = nlp.eval_gradient(&xm).unwrap();
                    let col: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
                    let exact: Vec<f64> = (0..x.len()).map(|r| h[(r, i)]).collect();
                    assert!(max_rel(&exact, &col) < 1e-5, "{name} hessian column {i}");
                }
                assert!(max_rel(&g, &fd) < 1e-6, "{name} gradient {}", max_rel(&g, &fd));
            }
        }
    }

    #[test]
    fn lagrangian_hessian_plus_gauss_newton_is_full_hessian() {
        let mut rng = StdRng::seed_from_u64(3);
        let b = benchmark("lq").unwrap();
        let space = b.space(0.25, 4).unwrap();
        let nlp = AssembledNlp::new(b.problem.as_ref(), space, b.params(0.25, 4).unwrap()).unwrap();
        let x = random_point(&nlp, &mut rng);
        let mult = nlp.penalty_multipliers(&x).unwrap();
        let lag = nlp.eval_lagrangian_hessian(&x, &mult).unwrap();
        let (jc, jb, jg) = nlp.eval_constraint_jacobians(&x).unwrap();
        let omega = nlp.params().omega;
        let tau = nlp.params().tau;
        let alpha = nlp.rule().weights();
        // JG for g_j = z^{α_j} is α_j z^{α_j − 1} times the plain z rows.
        let z = nlp.z_values(&x).unwrap();
        let nz = nlp.dims().n_z;
        let w_g: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, &zi)| {
                let a = alpha[i / nz];
                let dg = a * zi.powf(a - 1.0);
                mult.mu[i] * mult.mu[i] / tau * dg * dg
            })
            .collect();
        let gn = jc
            .weighted_gram(&vec![1.0 / omega; jc.rows()])
            .unwrap()
            .add_scaled(&jb.weighted_gram(&vec![1.0 / omega; jb.rows()]).unwrap(), 1.0)
            .unwrap()
            .add_scaled(&jg.weighted_gram(&w_g).unwrap(), 1.0)
            .unwrap();
        let combined = lag.add_scaled(&gn, 1.0).unwrap().to_dense();
        let full = nlp.eval_full_hessian(&x).unwrap().to_dense();
        let scale = full.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in combined.as_slice().iter().zip(full.as_slice()) {
            assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn lagrangian_hessian_special_multipliers() {
        let b = benchmark("lq").unwrap();
        let space = b.space(0.25, 2).unwrap();
        let nlp = AssembledNlp::new(b.problem.as_ref(), space, b.params(0.25, 2).unwrap()).unwrap();
        let x = nlp.space().interpolate(|_, _| 1.0);
        let zero = MultiplierSet::zeros(nlp.dims(), nlp.n_points());
        assert_eq!(nlp.eval_lagrangian_hessian(&x, &zero).unwrap().nnz(), 0);

        // ϱ = 1, other multipliers zero: ωS + Pᵀ blockdiag(α_j ∇²f) P, constant in x
        let mut rho = zero.clone();
        rho.rho = 1.0;
        let h1 = nlp.eval_lagrangian_hessian(&x, &rho).unwrap();
        let x2 = nlp.space().interpolate(|k, t| 2.0 + t + k as f64);
        let h2 = nlp.eval_lagrangian_hessian(&x2, &rho).unwrap();
        assert_eq!(h1, h2);
        let v = nlp.space().interpolate(|k, t| [t, 1.0, 0.0][k]);
        // vᵀHv = ω‖v‖²_S + ∫ y² + (z₁ − z₂)² = ω(1/3 + 1 + 1) + 1/3 + 1
        let omega = nlp.params().omega;
        assert_abs_diff_eq!(h1.quadratic_form(&v).unwrap(), omega * (7.0 / 3.0) + 4.0 / 3.0, epsilon = 1e-13);

        let bad = MultiplierSet { rho: 1.0, lambda: vec![], nu: vec![], mu: vec![] };
        assert!(matches!(nlp.eval_lagrangian_hessian(&x, &bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn hessian_bandwidth_under_time_ordering() {
        for d in [1usize, 3, 4] {
            let b = benchmark("lq").unwrap();
            let space = b.space(0.125, d).unwrap();
            let nlp = AssembledNlp::new(b.problem.as_ref(), space, b.params(0.125, d).unwrap()).unwrap();
            let x = nlp.space().interpolate(|_, _| 1.0);
            let h = nlp.eval_full_hessian(&x).unwrap();
            let mut position = vec![0; nlp.n_dofs()];
            for (new, &old) in nlp.ordering().iter().enumerate() {
                position[old] = new;
            }
            let n_x = nlp.dims().n_x();
            assert!(h.bandwidth_under(&position) <= 2 * (d + 1) * n_x, "d = {d}");
        }
    }

    #[test]
    fn barrier_curvature_entries() {
        // one z dof, one quadrature point with α = 1: H = ω·1 + τ/z²
        let p = crate::benchmarks::BarrierPull::default();
        let mesh = Mesh::uniform((0.0, 1.0), 1).unwrap();
        let space = FeSpace::shared(&mesh, 0, 0, 1).unwrap();
        let nlp = AssembledNlp::new(&p, space, params(1.0, 0, 1e-4, 1e-4)).unwrap();
        let h = nlp.eval_full_hessian(&[0.5]).unwrap();
        assert_abs_diff_eq!(h.get(0, 0), 1e-4 + 1e-4 / 0.25, epsilon = 1e-18);
        let g = |z: f64| nlp.eval_gradient(&[z]).unwrap()[0];
        let fd = (g(0.5 + 1e-7) - g(0.5 - 1e-7)) / 2e-7;
        assert!((fd - h.get(0, 0)).abs() < 1e-9);
        // gradient: 1 + ωz − τ/z
        assert_abs_diff_eq!(g(0.5), 1.0 + 1e-4 * 0.5 - 1e-4 / 0.5, epsilon = 1e-15);
    }

    #[test]
    fn barrier_matches_one_norm_form_for_large_z() {
        let b = benchmark("lq").unwrap();
        let space = b.space(0.25, 3).unwrap();
        let nlp = AssembledNlp::new(b.problem.as_ref(), space, b.params(0.25, 3).unwrap()).unwrap();
        let x = nlp.space().interpolate(|k, t| [t, 1.0 + t * t, 2.0 + t][k]);
        let terms = nlp.eval_objective_terms(&x).unwrap();
        let z = nlp.z_values(&x).unwrap();
        let alpha = nlp.rule().weights();
        // ‖log G‖_1 with g = z^α
        let one_norm: f64 = z.iter().enumerate().map(|(i, &zi)| zi.powf(alpha[i / 2]).ln().abs()).sum();
        assert!(z.iter().all(|&v| v >= 1.0));
        assert!((one_norm - terms.log_barrier).abs() < 1e-13);
    }
}
