//! Polynomial bases of degree `d` on the unit interval `(0, 1)`.
//!
//! Two families are provided: nodal Lagrange polynomials on Gauss-Lobatto
//! points (used for the finite element coefficients) and the orthonormal
//! shifted Legendre polynomials `φ_k(t) = √(2k+1) P_k(2t − 1)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::symmetric_tridiagonal_eigenvalues;
use crate::quadrature::gauss_legendre_unit;
use crate::scalar::Real;

/// Largest supported polynomial degree.
pub const MAX_DEGREE: usize = 30;

/// `(P_n(x), P_n'(x))` for the Legendre polynomial on `[-1, 1]`.
pub fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    if n == 0 {
        return (T::one(), T::zero());
    }
    let (mut p_prev, mut p) = (T::one(), x);
    let (mut dp_prev, mut dp) = (T::zero(), T::one());
    for k in 1..n {
        let kf = T::of_usize(k);
        let two_k1 = T::of_usize(2 * k + 1);
        let p_next = (two_k1 * x * p - kf * p_prev) / (kf + T::one());
        // P'_{k+1} = P'_{k-1} + (2k+1) P_k
        let dp_next = dp_prev + two_k1 * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// Gauss-Lobatto points on `[0, 1]` for degree `d` (`d + 1` points, endpoints
/// included). For `d = 0` the single node is the midpoint.
pub fn gauss_lobatto_unit<T: Real>(d: usize) -> Result<Vec<T>> {
    if d > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(d));
    }
    match d {
        0 => return Ok(vec![T::half()]),
        1 => return Ok(vec![T::zero(), T::one()]),
        _ => {}
    }
    // Interior nodes: roots of P'_d, i.e. of the Jacobi polynomial P^{(1,1)}_{d-1}.
    let n = d - 1;
    let diag = vec![T::zero(); n];
    let off: Vec<T> = (1..n)
        .map(|k| {
            let k = T::of_usize(k);
            (k * (k + T::two()) / ((T::two() * k + T::one()) * (T::two() * k + T::lit(3.0)))).sqrt()
        })
        .collect();
    let mut interior = symmetric_tridiagonal_eigenvalues(&diag, &off)?;
    let dd = T::of_usize(d * (d + 1));
    for x in interior.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = legendre_with_derivative(d, *x);
            let ddp = (T::two() * *x * dp - dd * p) / (T::one() - *x * *x);
            if ddp == T::zero() {
                break;
            }
            *x -= dp / ddp;
        }
    }
    symmetrize(&mut interior);
    let mut nodes = Vec::with_capacity(d + 1);
    nodes.push(T::zero());
    nodes.extend(interior.iter().map(|&x| T::half() * (x + T::one())));
    nodes.push(T::one());
    Ok(nodes)
}

/// Forces exact antisymmetry `x_i = -x_{n-1-i}` on `[-1, 1]` nodes.
pub(crate) fn symmetrize<T: Real>(x: &mut [T]) {
    let n = x.len();
    for i in 0..n / 2 {
        let v = T::half() * (x[n - 1 - i] - x[i]);
        x[i] = -v;
        x[n - 1 - i] = v;
    }
    if n % 2 == 1 {
        x[n / 2] = T::zero();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BasisKind {
    LagrangeGaussLobatto,
    LegendreOrthonormal,
}

/// Basis of `P_d(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis<T> {
    degree: usize,
    kind: BasisKind,
    nodes: Vec<T>,
    bary: Vec<T>,
}

fn check_point<T: Real>(t: T) -> Result<()> {
    if t >= T::zero() && t <= T::one() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            point: t.to_f64_lossy(),
            range: "[0, 1]".into(),
        })
    }
}

impl<T: Real> Basis<T> {
    pub fn new(kind: BasisKind, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree(degree));
        }
        let (nodes, bary) = match kind {
            BasisKind::LagrangeGaussLobatto => {
                let nodes = gauss_lobatto_unit::<T>(degree)?;
                let bary = barycentric_weights(&nodes);
                (nodes, bary)
            }
            BasisKind::LegendreOrthonormal => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            degree,
            kind,
            nodes,
            bary,
        })
    }

    pub fn lagrange(degree: usize) -> Result<Self> {
        Self::new(BasisKind::LagrangeGaussLobatto, degree)
    }

    pub fn legendre(degree: usize) -> Result<Self> {
        Self::new(BasisKind::LegendreOrthonormal, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.degree + 1
    }

    /// Interpolation nodes of the Lagrange basis; empty for the Legendre basis.
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    /// Values of all basis functions at `t ∈ [0, 1]`.
    pub fn eval(&self, t: T) -> Result<Vec<T>> {
        check_point(t)?;
        Ok(match self.kind {
            BasisKind::LagrangeGaussLobatto => self.lagrange_eval(t).0,
            BasisKind::LegendreOrthonormal => legendre_orthonormal_eval(self.degree, t).0,
        })
    }

    /// First derivatives (with respect to the unit coordinate) at `t ∈ [0, 1]`.
    pub fn eval_derivative(&self, t: T) -> Result<Vec<T>> {
        check_point(t)?;
        Ok(match self.kind {
            BasisKind::LagrangeGaussLobatto => self.lagrange_eval(t).1,
            BasisKind::LegendreOrthonormal => legendre_orthonormal_eval(self.degree, t).1,
        })
    }

    /// Values and derivatives together.
    pub fn eval_with_derivative(&self, t: T) -> Result<(Vec<T>, Vec<T>)> {
        check_point(t)?;
        Ok(match self.kind {
            BasisKind::LagrangeGaussLobatto => self.lagrange_eval(t),
            BasisKind::LegendreOrthonormal => legendre_orthonormal_eval(self.degree, t),
        })
    }

    fn lagrange_eval(&self, t: T) -> (Vec<T>, Vec<T>) {
        let n = self.nodes.len();
        if n == 1 {
            return (vec![T::one()], vec![T::zero()]);
        }
        let coincide = T::lit(64.0) * T::epsilon();
        if let Some(i) = self.nodes.iter().position(|&x| (t - x).abs() <= coincide) {
            let mut values = vec![T::zero(); n];
            values[i] = T::one();
            let mut deriv = vec![T::zero(); n];
            let mut diag = T::zero();
            for j in 0..n {
                if j != i {
                    deriv[j] = (self.bary[j] / self.bary[i]) / (self.nodes[i] - self.nodes[j]);
                    diag -= deriv[j];
                }
            }
            deriv[i] = diag;
            return (values, deriv);
        }
        let terms: Vec<T> = (0..n).map(|j| self.bary[j] / (t - self.nodes[j])).collect();
        let s: T = terms.iter().copied().sum();
        let ds: T = (0..n).map(|j| -terms[j] / (t - self.nodes[j])).sum();
        let values: Vec<T> = terms.iter().map(|&w| w / s).collect();
        let deriv = (0..n)
            .map(|j| {
                let dw = -terms[j] / (t - self.nodes[j]);
                (dw * s - terms[j] * ds) / (s * s)
            })
            .collect();
        (values, deriv)
    }
}

fn barycentric_weights<T: Real>(nodes: &[T]) -> Vec<T> {
    (0..nodes.len())
        .map(|j| {
            let prod = nodes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .fold(T::one(), |acc, (_, &xk)| acc * (nodes[j] - xk));
            T::one() / prod
        })
        .collect()
}

/// Values and derivatives of `φ_k(t) = √(2k+1) P_k(2t − 1)` for `k = 0..=d`.
pub fn legendre_orthonormal_eval<T: Real>(d: usize, t: T) -> (Vec<T>, Vec<T>) {
    let x = T::two() * t - T::one();
    let mut values = Vec::with_capacity(d + 1);
    let mut deriv = Vec::with_capacity(d + 1);
    let (mut p_prev, mut p) = (T::zero(), T::one());
    let (mut dp_prev, mut dp) = (T::zero(), T::zero());
    for k in 0..=d {
        let scale = T::of_usize(2 * k + 1).sqrt();
        values.push(scale * p);
        deriv.push(T::two() * scale * dp);
        let kf = T::of_usize(k);
        let two_k1 = T::of_usize(2 * k + 1);
        let p_next = (two_k1 * x * p - kf * p_prev) / (kf + T::one());
        let dp_next = dp_prev + two_k1 * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (values, deriv)
}

/// Converts nodal (Gauss-Lobatto Lagrange) coefficients to orthonormal Legendre coefficients.
pub fn lagrange_to_legendre<T: Real>(lagrange: &Basis<T>, values: &[T]) -> Result<Vec<T>> {
    let d = lagrange.degree();
    if values.len() != d + 1 || lagrange.kind() != BasisKind::LagrangeGaussLobatto {
        return Err(Error::Dimension(format!(
            "expected {} nodal values for a Lagrange basis",
            d + 1
        )));
    }
    // c_k = ∫ v φ_k, exact with d+1 Gauss nodes since v φ_k has degree ≤ 2d.
    let rule = gauss_legendre_unit::<T>(d + 1)?;
    let mut coeffs = vec![T::zero(); d + 1];
    for (&node, &w) in rule.nodes().iter().zip(rule.weights()) {
        let v: T = lagrange
            .eval(node)?
            .iter()
            .zip(values)
            .map(|(&l, &c)| l * c)
            .sum();
        let (phi, _) = legendre_orthonormal_eval(d, node);
        for (c, p) in coeffs.iter_mut().zip(phi) {
            *c += w * v * p;
        }
    }
    Ok(coeffs)
}

/// Converts orthonormal Legendre coefficients to nodal values at the Lagrange nodes.
pub fn legendre_to_lagrange<T: Real>(lagrange: &Basis<T>, coeffs: &[T]) -> Result<Vec<T>> {
    let d = lagrange.degree();
    if coeffs.len() != d + 1 || lagrange.kind() != BasisKind::LagrangeGaussLobatto {
        return Err(Error::Dimension(format!(
            "expected {} Legendre coefficients",
            d + 1
        )));
    }
    Ok(lagrange
        .nodes()
        .iter()
        .map(|&x| {
            let (phi, _) = legendre_orthonormal_eval(d, x);
            phi.iter().zip(coeffs).map(|(&p, &c)| p * c).sum()
        })
        .collect())
}

/// Minimizer of `‖v‖²_{L²(0,1)}` over `v ∈ P_d` subject to `v(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitValueMinimizer<T> {
    /// Coefficients in the orthonormal Legendre basis.
    pub legendre: Vec<T>,
    pub l2_norm: T,
}

impl<T: Real> UnitValueMinimizer<T> {
    pub fn degree(&self) -> usize {
        self.legendre.len() - 1
    }

    pub fn value(&self, t: T) -> T {
        let (phi, _) = legendre_orthonormal_eval(self.degree(), t);
        phi.iter().zip(&self.legendre).map(|(&p, &c)| p * c).sum()
    }

    pub fn derivative(&self, t: T) -> T {
        let (_, dphi) = legendre_orthonormal_eval(self.degree(), t);
        dphi.iter().zip(&self.legendre).map(|(&p, &c)| p * c).sum()
    }

    /// Monomial coefficients `[1, a_1, ..., a_d]`. Ill-conditioned for large `d`.
    pub fn monomial(&self) -> Vec<T> {
        let d = self.degree();
        let mut out = vec![T::zero(); d + 1];
        for (k, &c) in self.legendre.iter().enumerate() {
            // P_k(2t-1) = Σ_j (-1)^{k+j} C(k,j) C(k+j,j) t^j
            let scale = T::of_usize(2 * k + 1).sqrt() * c;
            let mut binom_k_j = T::one();
            let mut binom_kj_j = T::one();
            for (j, slot) in out.iter_mut().enumerate().take(k + 1) {
                if j > 0 {
                    binom_k_j = binom_k_j * T::of_usize(k + 1 - j) / T::of_usize(j);
                    binom_kj_j = binom_kj_j * T::of_usize(k + j) / T::of_usize(j);
                }
                let sign = if (k + j) % 2 == 0 { T::one() } else { -T::one() };
                *slot += scale * sign * binom_k_j * binom_kj_j;
            }
        }
        out
    }
}

/// Solves the unit-value L² minimization in the orthonormal Legendre basis.
///
/// With `v = Σ c_k φ_k` the objective is `Σ c_k²` and the constraint
/// `Σ c_k φ_k(0) = 1`, so the minimizer is `c = φ(0) / ‖φ(0)‖²`.
pub fn min_l2_unit_value_qp<T: Real>(d: usize) -> Result<UnitValueMinimizer<T>> {
    if d > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(d));
    }
    let (phi0, _) = legendre_orthonormal_eval(d, T::zero());
    let norm_sq: T = phi0.iter().map(|&p| p * p).sum();
    let legendre = phi0.iter().map(|&p| p / norm_sq).collect();
    Ok(UnitValueMinimizer {
        legendre,
        l2_norm: T::one() / norm_sq.sqrt(),
    })
}

/// One row of the norm-constant table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormCheckRow {
    pub d: usize,
    pub computed: f64,
    pub expected: f64,
    pub error: f64,
    /// `max |v̂|` over `[0, 1]` (grid plus refined critical points).
    pub sup_norm: f64,
    /// Whether `max |v̂| = v̂(0) = 1` holds within `1e-9`.
    pub sup_at_origin: bool,
}

const SUP_GRID: usize = 10_001;

fn sup_norm(v: &UnitValueMinimizer<f64>) -> f64 {
    let grid: Vec<f64> = (0..SUP_GRID).map(|i| i as f64 / (SUP_GRID - 1) as f64).collect();
    let mut best = grid.iter().map(|&t| v.value(t).abs()).fold(0.0, f64::max);
    // Bisect sign changes of the derivative to catch peaks between grid points.
    let mut prev = v.derivative(grid[0]);
    for w in grid.windows(2) {
        let next = v.derivative(w[1]);
        if prev.signum() != next.signum() && prev != 0.0 && next != 0.0 {
            let (mut a, mut b, mut fa) = (w[0], w[1], prev);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let fm = v.derivative(m);
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            best = best.max(v.value(0.5 * (a + b)).abs());
        }
        prev = next;
    }
    best
}

/// Tabulates `‖v̂‖_{L²}` against `1/(d+1)` for `d = 0..=d_max`.
pub fn verify_norm_constants(d_max: usize) -> Result<Vec<NormCheckRow>> {
    if d_max > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(d_max));
    }
    (0..=d_max)
        .map(|d| {
            let v = min_l2_unit_value_qp::<f64>(d)?;
            let expected = 1.0 / (d + 1) as f64;
            let sup = sup_norm(&v);
            Ok(NormCheckRow {
                d,
                computed: v.l2_norm,
                expected,
                error: (v.l2_norm - expected).abs(),
                sup_norm: sup,
                sup_at_origin: (sup - 1.0).abs() <= 1e-9 && (v.value(0.0) - 1.0).abs() <= 1e-9,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lagrange_linear_values_and_slopes() {
        let b = Basis::<f64>::lagrange(1).unwrap();
        assert_eq!(b.eval(0.0).unwrap(), vec![1.0, 0.0]);
        for t in [0.0, 0.3, 1.0] {
            let d = b.eval_derivative(t).unwrap();
            assert_abs_diff_eq!(d[0], -1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(d[1], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn lagrange_quadratic_midpoint() {
        let b = Basis::<f64>::lagrange(2).unwrap();
        assert_abs_diff_eq!(b.nodes()[1], 0.5, epsilon = 1e-15);
        let v = b.eval(0.5).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn legendre_linear() {
        let b = Basis::<f64>::legendre(1).unwrap();
        let v = b.eval(0.5).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
        for t in [0.0, 0.7] {
            let d = b.eval_derivative(t).unwrap();
            assert_abs_diff_eq!(d[0], 0.0);
            assert_abs_diff_eq!(d[1], 2.0 * 3f64.sqrt(), epsilon = 1e-14);
        }
    }

    #[test]
    fn lagrange_derivatives_sum_to_zero() {
        for d in [1, 3, 7, 15, 30] {
            let b = Basis::<f64>::lagrange(d).unwrap();
            for t in [0.0, 0.123, 0.5, 0.91, 1.0] {
                let s: f64 = b.eval_derivative(t).unwrap().iter().sum();
                let v: f64 = b.eval(t).unwrap().iter().sum();
                assert_abs_diff_eq!(v, 1.0, epsilon = 1e-11);
                assert!(s.abs() < 1e-8 * (d * d) as f64, "d={d} t={t} sum={s}");
            }
        }
    }

    #[test]
    fn lagrange_derivative_matches_finite_difference() {
        let b = Basis::<f64>::lagrange(6).unwrap();
        let t = 0.37;
        let h = 1e-6;
        let d = b.eval_derivative(t).unwrap();
        let p = b.eval(t + h).unwrap();
        let m = b.eval(t - h).unwrap();
        for i in 0..7 {
            assert_abs_diff_eq!(d[i], (p[i] - m[i]) / (2.0 * h), epsilon = 1e-6);
        }
        // at a node the closed form is used
        let node = b.nodes()[2];
        let d = b.eval_derivative(node).unwrap();
        let p = b.eval(node + h).unwrap();
        let m = b.eval(node - h).unwrap();
        for i in 0..7 {
            assert_abs_diff_eq!(d[i], (p[i] - m[i]) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn gauss_lobatto_known_points() {
        let x = gauss_lobatto_unit::<f64>(3).unwrap();
        // ±1/√5 on [-1, 1]
        assert_abs_diff_eq!(x[1], 0.5 * (1.0 - 1.0 / 5f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(x[2], 0.5 * (1.0 + 1.0 / 5f64.sqrt()), epsilon = 1e-15);
        let x = gauss_lobatto_unit::<f64>(30).unwrap();
        assert!(x.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn out_of_range_point() {
        let b = Basis::<f64>::lagrange(2).unwrap();
        assert!(matches!(b.eval(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(b.eval_derivative(-0.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(Basis::<f64>::lagrange(31), Err(Error::UnsupportedDegree(31))));
    }

    #[test]
    fn legendre_orthonormality() {
        let d = 12;
        let rule = gauss_legendre_unit::<f64>(d + 1).unwrap();
        let mut gram = vec![vec![0.0; d + 1]; d + 1];
        for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
            let (phi, _) = legendre_orthonormal_eval(d, t);
            for i in 0..=d {
                for j in 0..=d {
                    gram[i][j] += w * phi[i] * phi[j];
                }
            }
        }
        for i in 0..=d {
            for j in 0..=d {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[i][j], e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn qp_small_degrees() {
        let v = min_l2_unit_value_qp::<f64>(0).unwrap();
        assert_abs_diff_eq!(v.l2_norm, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.monomial()[0], 1.0, epsilon = 1e-15);

        // minimize ∫(1 + a t)² = 1 + a + a²/3  ⇒  a = -3/2, value 1/4
        let v = min_l2_unit_value_qp::<f64>(1).unwrap();
        let m = v.monomial();
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1], -1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(v.l2_norm, 0.5, epsilon = 1e-15);

        let v = min_l2_unit_value_qp::<f64>(5).unwrap();
        assert_abs_diff_eq!(v.l2_norm, 1.0 / 6.0, epsilon = 1e-14);
        assert!(min_l2_unit_value_qp::<f64>(31).is_err());
    }

    #[test]
    fn qp_matches_monomial_normal_equations() {
        // Independent route for small d: solve the monomial normal equations
        // (Hilbert system) by Gaussian elimination.
        for d in 1..=5usize {
            let n = d;
            let mut a = vec![vec![0.0f64; n + 1]; n];
            for i in 0..n {
                for j in 0..n {
                    a[i][j] = 1.0 / (i + j + 3) as f64;
                }
                a[i][n] = -1.0 / (i + 2) as f64;
            }
            for col in 0..n {
                let piv = (col..n)
                    .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                    .unwrap();
                a.swap(col, piv);
                for r in 0..n {
                    if r != col {
                        let f = a[r][col] / a[col][col];
                        for c in col..=n {
                            a[r][c] -= f * a[col][c];
                        }
                    }
                }
            }
            let coeffs: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
            let m = min_l2_unit_value_qp::<f64>(d).unwrap().monomial();
            for i in 0..n {
                assert_abs_diff_eq!(m[i + 1], coeffs[i], epsilon = 1e-7 * 10f64.powi(d as i32));
            }
        }
    }

    #[test]
    fn norm_table() {
        let rows = verify_norm_constants(0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].d, rows[0].computed, rows[0].expected, rows[0].error), (0, 1.0, 1.0, 0.0));
        let rows = verify_norm_constants(2).unwrap();
        assert_abs_diff_eq!(rows[2].computed, 1.0 / 3.0, epsilon = 1e-10);
        assert!(verify_norm_constants(31).is_err());
    }

    #[test]
    fn basis_change_round_trip_degree_30() {
        let b = Basis::<f64>::lagrange(30).unwrap();
        let values: Vec<f64> = (0..31).map(|i| ((i * 7919) % 23) as f64 / 11.0 - 1.0).collect();
        let c = lagrange_to_legendre(&b, &values).unwrap();
        let back = legendre_to_lagrange(&b, &c).unwrap();
        for (a, b) in values.iter().zip(back) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-11);
        }
    }
}
