//! Gauss-Legendre rules on the unit interval and their composition over a
//! merged mesh.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::symmetric_tridiagonal_eigenvalues;
use crate::mesh::MergedMesh;
use crate::polybasis::{legendre_with_derivative, symmetrize};
use crate::scalar::Real;

pub const MAX_NODES: usize = 64;

/// Gauss-Legendre rule on `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitRule<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> UnitRule<T> {
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Rule with `d + 1` nodes, exact through degree `2d + 1`.
    pub fn for_degree(d: usize) -> Result<Self> {
        gauss_legendre_unit(d + 1)
    }
}

/// `n`-point Gauss-Legendre rule mapped to `(0, 1)`.
///
/// Nodes are eigenvalues of the symmetric Jacobi matrix of the Legendre
/// recurrence, polished by Newton steps on `P_n`; weights use
/// `w = 2 / ((1 − x²) P_n'(x)²)`.
pub fn gauss_legendre_unit<T: Real>(n: usize) -> Result<UnitRule<T>> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::UnsupportedOrder(n));
    }
    let diag = vec![T::zero(); n];
    let off: Vec<T> = (1..n)
        .map(|k| {
            let k = T::of_usize(k);
            k / (T::lit(4.0) * k * k - T::one()).sqrt()
        })
        .collect();
    let mut x = symmetric_tridiagonal_eigenvalues(&diag, &off)?;
    for xi in x.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = legendre_with_derivative(n, *xi);
            if dp == T::zero() {
                break;
            }
            *xi -= p / dp;
        }
    }
    symmetrize(&mut x);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &xi in &x {
        let (_, dp) = legendre_with_derivative(n, xi);
        let w = T::two() / ((T::one() - xi * xi) * dp * dp);
        nodes.push(T::half() * (xi + T::one()));
        weights.push(T::half() * w);
    }
    // Symmetric weights.
    for i in 0..n / 2 {
        let w = T::half() * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(UnitRule { nodes, weights })
}

/// Quadrature rule over the whole domain, composed on a merged mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRule<T> {
    points: Vec<T>,
    weights: Vec<T>,
    interval_of: Vec<usize>,
    nodes_per_interval: usize,
    mesh: MergedMesh<T>,
}

impl<T: Real> GlobalRule<T> {
    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Total number of quadrature points `M`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Merged-mesh interval containing point `j`.
    pub fn interval_of(&self, j: usize) -> usize {
        self.interval_of[j]
    }

    pub fn nodes_per_interval(&self) -> usize {
        self.nodes_per_interval
    }

    pub fn mesh(&self) -> &MergedMesh<T> {
        &self.mesh
    }

    /// `Σ_j α_j g(ρ_j)`.
    pub fn integrate<F: FnMut(T) -> T>(&self, mut g: F) -> Result<T> {
        let mut acc = T::zero();
        for (j, (&t, &w)) in self.points.iter().zip(&self.weights).enumerate() {
            let v = g(t);
            if !v.is_finite() {
                return Err(Error::NonFiniteEvaluation {
                    index: j,
                    t: t.to_f64_lossy(),
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

/// Places `unit` on every merged interval, in interval order.
pub fn compose_rule<T: Real>(mesh: &MergedMesh<T>, unit: &UnitRule<T>) -> GlobalRule<T> {
    let m = mesh.n_intervals() * unit.len();
    let mut points = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let mut interval_of = Vec::with_capacity(m);
    for (k, iv) in mesh.intervals().iter().enumerate() {
        let len = iv.length();
        for (&s, &w) in unit.nodes.iter().zip(&unit.weights) {
            points.push(iv.map_from_unit(s));
            weights.push(len * w);
            interval_of.push(k);
        }
    }
    GlobalRule {
        points,
        weights,
        interval_of,
        nodes_per_interval: unit.len(),
        mesh: mesh.clone(),
    }
}
