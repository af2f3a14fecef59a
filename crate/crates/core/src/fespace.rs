//! Finite element space `X_{h,d}`: per-component meshes, global coefficient
//! numbering, and the sparse evaluation and regularization operators.
//!
//! Every component uses nodal Lagrange polynomials on Gauss-Lobatto points of
//! each interval. Continuous (`y`) components share the coefficient at
//! interior mesh points; discontinuous (`z`) components never share.
//!
//! Coefficients are numbered component-major, then interval-major, then by
//! local node.

use crate::error::{Error, Result};
use crate::mesh::{merge_meshes, Mesh};
use crate::polybasis::{Basis, MAX_DEGREE};
use crate::quadrature::GlobalRule;
use crate::scalar::Real;
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLayout<T> {
    pub mesh: Mesh<T>,
    pub continuous: bool,
    pub offset: usize,
    pub n_dofs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeSpace<T> {
    degree: usize,
    n_y: usize,
    n_z: usize,
    components: Vec<ComponentLayout<T>>,
    n_dofs: usize,
    basis: Basis<T>,
}

impl<T: Real> FeSpace<T> {
    /// Builds the space from `n_y + n_z` meshes; the first `n_y` belong to the
    /// continuous components.
    pub fn new(meshes: Vec<Mesh<T>>, degree: usize, n_y: usize, n_z: usize) -> Result<Self> {
        if meshes.len() != n_y + n_z {
            return Err(Error::Dimension(format!(
                "{} meshes supplied for n_y + n_z = {}",
                meshes.len(),
                n_y + n_z
            )));
        }
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree(degree));
        }
        if n_y > 0 && degree == 0 {
            return Err(Error::DegreeContinuityConflict { component: 0 });
        }
        if !meshes.is_empty() {
            // Validates the shared domain.
            merge_meshes(&meshes)?;
        }
        let mut components = Vec::with_capacity(meshes.len());
        let mut offset = 0;
        for (k, mesh) in meshes.into_iter().enumerate() {
            let continuous = k < n_y;
            let n = mesh.n_intervals();
            let n_dofs = if continuous { n * degree + 1 } else { n * (degree + 1) };
            components.push(ComponentLayout {
                mesh,
                continuous,
                offset,
                n_dofs,
            });
            offset += n_dofs;
        }
        Ok(Self {
            degree,
            n_y,
            n_z,
            components,
            n_dofs: offset,
            basis: Basis::lagrange(degree)?,
        })
    }

    /// Every component on the same mesh.
    pub fn shared(mesh: &Mesh<T>, degree: usize, n_y: usize, n_z: usize) -> Result<Self> {
        Self::new(vec![mesh.clone(); n_y + n_z], degree, n_y, n_z)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_x(&self) -> usize {
        self.n_y + self.n_z
    }

    /// Total coefficient count `N`.
    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn components(&self) -> &[ComponentLayout<T>] {
        &self.components
    }

    pub fn meshes(&self) -> Vec<Mesh<T>> {
        self.components.iter().map(|c| c.mesh.clone()).collect()
    }

    pub fn basis(&self) -> &Basis<T> {
        &self.basis
    }

    /// Values per quadrature point in the evaluation operator: `2 n_y + n_z`.
    pub fn values_per_point(&self) -> usize {
        2 * self.n_y + self.n_z
    }

    /// Global index of local basis function `local` on `interval` of `component`.
    #[inline]
    pub fn dof(&self, component: usize, interval: usize, local: usize) -> usize {
        let c = &self.components[component];
        if c.continuous {
            c.offset + interval * self.degree + local
        } else {
            c.offset + interval * (self.degree + 1) + local
        }
    }

    fn check_len(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n_dofs {
            return Err(Error::Dimension(format!(
                "coefficient vector has {} entries, space has N = {}",
                x.len(),
                self.n_dofs
            )));
        }
        Ok(())
    }

    /// Time coordinate of the node carrying each global coefficient.
    pub fn dof_positions(&self) -> Vec<T> {
        let mut pos = vec![T::zero(); self.n_dofs];
        for (k, c) in self.components.iter().enumerate() {
            for (i, iv) in c.mesh.intervals().iter().enumerate() {
                for (l, &s) in self.basis.nodes().iter().enumerate() {
                    pos[self.dof(k, i, l)] = iv.map_from_unit(s);
                }
            }
        }
        pos
    }

    /// Permutation listing coefficients in increasing time, ties by index.
    /// Interleaves components so that derivative matrices become banded.
    pub fn time_ordering(&self) -> Vec<usize> {
        let pos = self.dof_positions();
        let mut order: Vec<usize> = (0..self.n_dofs).collect();
        order.sort_by(|&a, &b| {
            pos[a]
                .partial_cmp(&pos[b])
                .expect("finite positions")
                .then(a.cmp(&b))
        });
        order
    }

    /// Nodal interpolation of `f(component, t)`.
    pub fn interpolate<F: Fn(usize, T) -> T>(&self, f: F) -> Vec<T> {
        let mut x = vec![T::zero(); self.n_dofs];
        for (k, c) in self.components.iter().enumerate() {
            for (i, iv) in c.mesh.intervals().iter().enumerate() {
                for (l, &s) in self.basis.nodes().iter().enumerate() {
                    x[self.dof(k, i, l)] = f(k, iv.map_from_unit(s));
                }
            }
        }
        x
    }

    /// `(value, time derivative)` of `component` at `t`; mesh points use the
    /// interval on their left.
    pub fn evaluate(&self, x: &[T], component: usize, t: T) -> Result<(T, T)> {
        self.check_len(x)?;
        let c = self.components.get(component).ok_or_else(|| {
            Error::Dimension(format!("component {component} out of range"))
        })?;
        let i = c.mesh.locate(t)?;
        let iv = c.mesh.intervals()[i];
        let u = clamp_unit(iv.map_to_unit(t));
        let (vals, ders) = self.basis.eval_with_derivative(u)?;
        let mut v = T::zero();
        let mut dv = T::zero();
        for l in 0..vals.len() {
            let xi = x[self.dof(component, i, l)];
            v += vals[l] * xi;
            dv += ders[l] * xi;
        }
        Ok((v, dv / iv.length()))
    }
}

fn clamp_unit<T: Real>(u: T) -> T {
    u.max(T::zero()).min(T::one())
}

/// Operator mapping coefficients to `(ẏ, y, z)` stacked per quadrature point.
///
/// Row `j·(2n_y+n_z) + i` holds `ẏ_i(ρ_j)` for `i < n_y`, then `y_i(ρ_j)`,
/// then `z_i(ρ_j)`.
pub fn build_eval_operator<T: Real>(space: &FeSpace<T>, rule: &GlobalRule<T>) -> Result<SparseOperator<T>> {
    let merged = rule.mesh();
    if merged.n_sources() != space.n_x() {
        return Err(Error::Provenance(format!(
            "rule merges {} meshes, space has {} components",
            merged.n_sources(),
            space.n_x()
        )));
    }
    let tol = T::lit(1e-10) * (merged.domain().1 - merged.domain().0);
    for (k, iv) in merged.intervals().iter().enumerate() {
        for (c, comp) in space.components().iter().enumerate() {
            let src = comp.mesh.intervals().get(merged.source_interval(k, c)).ok_or_else(|| {
                Error::Provenance(format!("component {c} has no source interval for merged interval {k}"))
            })?;
            if iv.left < src.left - tol || iv.right > src.right + tol {
                return Err(Error::Provenance(format!(
                    "merged interval {k} is not contained in its source interval of component {c}"
                )));
            }
        }
    }

    let per_point = space.values_per_point();
    let n_y = space.n_y();
    let d1 = space.degree() + 1;
    let mut triplets = Vec::with_capacity(rule.len() * (space.n_x() + n_y) * d1);
    for j in 0..rule.len() {
        let t = rule.points()[j];
        let k = rule.interval_of(j);
        let base = j * per_point;
        for (c, comp) in space.components().iter().enumerate() {
            let s = merged.source_interval(k, c);
            let iv = comp.mesh.intervals()[s];
            let (vals, ders) = space.basis().eval_with_derivative(clamp_unit(iv.map_to_unit(t)))?;
            let inv_len = T::one() / iv.length();
            for l in 0..d1 {
                let col = space.dof(c, s, l);
                if c < n_y {
                    triplets.push((base + c, col, ders[l] * inv_len));
                    triplets.push((base + n_y + c, col, vals[l]));
                } else {
                    triplets.push((base + n_y + c, col, vals[l]));
                }
            }
        }
    }
    SparseOperator::from_triplets(rule.len() * per_point, space.n_dofs(), triplets)
}

/// Operator mapping coefficients to `y(t_0), ..., y(t_E)` (each of length `n_y`).
pub fn build_point_eval_operator<T: Real>(space: &FeSpace<T>, time_points: &[T]) -> Result<SparseOperator<T>> {
    let n_y = space.n_y();
    let d1 = space.degree() + 1;
    let mut triplets = Vec::with_capacity(time_points.len() * n_y * d1);
    for (ti, &t) in time_points.iter().enumerate() {
        for c in 0..n_y {
            let mesh = &space.components()[c].mesh;
            let s = mesh.locate(t)?;
            let iv = mesh.intervals()[s];
            let vals = space.basis().eval(clamp_unit(iv.map_to_unit(t)))?;
            for (l, &v) in vals.iter().enumerate() {
                triplets.push((ti * n_y + c, space.dof(c, s, l), v));
            }
        }
    }
    SparseOperator::from_triplets(time_points.len() * n_y, space.n_dofs(), triplets)
}

/// `S = Pᵀ blockdiag(α_j I) P`, so that `xᵀ S x` is the quadrature value of
/// `Σ ‖y_i‖²_{H¹} + Σ ‖z_i‖²_{L²}`.
pub fn build_regularizer<T: Real>(
    space: &FeSpace<T>,
    rule: &GlobalRule<T>,
    eval_op: &SparseOperator<T>,
) -> Result<SparseOperator<T>> {
    let per_point = space.values_per_point();
    if eval_op.rows() != rule.len() * per_point || eval_op.cols() != space.n_dofs() {
        return Err(Error::Dimension(format!(
            "evaluation operator is {}x{}, expected {}x{}",
            eval_op.rows(),
            eval_op.cols(),
            rule.len() * per_point,
            space.n_dofs()
        )));
    }
    let weights: Vec<T> = rule
        .weights()
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w, per_point))
        .collect();
    eval_op.weighted_gram(&weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::merge_meshes;
    use crate::quadrature::{compose_rule, gauss_legendre_unit, UnitRule};
    use approx::assert_abs_diff_eq;

    fn uniform(n: usize) -> Mesh<f64> {
        Mesh::uniform((0.0, 1.0), n).unwrap()
    }

    fn rule_for(space: &FeSpace<f64>, nodes: usize) -> GlobalRule<f64> {
        let merged = merge_meshes(&space.meshes()).unwrap();
        compose_rule(&merged, &gauss_legendre_unit(nodes).unwrap())
    }

    #[test]
    fn dimension_counts() {
        assert_eq!(FeSpace::shared(&uniform(2), 1, 1, 0).unwrap().n_dofs(), 3);
        assert_eq!(FeSpace::shared(&uniform(2), 1, 0, 1).unwrap().n_dofs(), 4);
        let s = FeSpace::new(vec![uniform(2), uniform(3)], 2, 1, 1).unwrap();
        assert_eq!(s.n_dofs(), 14);
    }

    #[test]
    fn build_errors() {
        assert_eq!(
            FeSpace::shared(&uniform(2), 0, 1, 0),
            Err(Error::DegreeContinuityConflict { component: 0 })
        );
        assert!(FeSpace::shared(&uniform(2), 0, 0, 2).is_ok());
        let other = Mesh::uniform((0.0, 2.0), 2).unwrap();
        assert_eq!(
            FeSpace::new(vec![uniform(2), other], 1, 1, 1),
            Err(Error::DomainMismatch)
        );
        assert!(matches!(
            FeSpace::new(vec![uniform(2)], 1, 1, 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn every_index_is_referenced() {
        let s = FeSpace::new(vec![uniform(3), uniform(2), uniform(4)], 3, 2, 1).unwrap();
        let mut seen = vec![false; s.n_dofs()];
        for (k, c) in s.components().iter().enumerate() {
            for i in 0..c.mesh.n_intervals() {
                for l in 0..4 {
                    seen[s.dof(k, i, l)] = true;
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
        // continuity: last node of interval 0 is the first node of interval 1
        assert_eq!(s.dof(0, 0, 3), s.dof(0, 1, 0));
        assert_ne!(s.dof(2, 0, 3), s.dof(2, 1, 0));
    }

    #[test]
    fn constant_reproduction() {
        let s = FeSpace::shared(&uniform(3), 3, 1, 1).unwrap();
        let rule = rule_for(&s, 4);
        let p = build_eval_operator(&s, &rule).unwrap();
        let x = s.interpolate(|_, _| 1.0);
        let v = p.apply(&x).unwrap();
        for j in 0..rule.len() {
            assert_abs_diff_eq!(v[3 * j], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v[3 * j + 1], 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(v[3 * j + 2], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_hats_at_midpoints() {
        let s = FeSpace::shared(&uniform(2), 1, 1, 0).unwrap();
        let rule = rule_for(&s, 1);
        let p = build_eval_operator(&s, &rule).unwrap();
        let x = s.interpolate(|_, t| t);
        let v = p.apply(&x).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[1], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(v[2], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[3], 0.75, epsilon = 1e-14);
    }

    #[test]
    fn piecewise_constant_z() {
        let s = FeSpace::shared(&uniform(3), 0, 0, 1).unwrap();
        let rule = rule_for(&s, 2);
        let p = build_eval_operator(&s, &rule).unwrap();
        let x = vec![5.0, -1.0, 2.0];
        let v = p.apply(&x).unwrap();
        for j in 0..rule.len() {
            assert_eq!(v[j], x[rule.interval_of(j)]);
        }
    }

    #[test]
    fn point_evaluation() {
        let s = FeSpace::shared(&uniform(2), 1, 1, 0).unwrap();
        let p = build_point_eval_operator(&s, &[0.0]).unwrap();
        assert_eq!(p.to_dense().row(0), &[1.0, 0.0, 0.0]);
        let x = s.interpolate(|_, t| t);
        let v = build_point_eval_operator(&s, &[0.0, 0.5, 1.0]).unwrap().apply(&x).unwrap();
        assert_abs_diff_eq!(v[0], 0.0);
        assert_abs_diff_eq!(v[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 1.0, epsilon = 1e-15);

        let s = FeSpace::shared(&uniform(3), 2, 2, 1).unwrap();
        let p = build_point_eval_operator(&s, &[0.0, 1.0]).unwrap();
        assert_eq!((p.rows(), p.cols()), (4, s.n_dofs()));
        assert!(build_point_eval_operator(&s, &[1.5]).is_err());
    }

    #[test]
    fn interior_limit_choice_is_immaterial_for_continuous_y() {
        let s = FeSpace::shared(&uniform(4), 3, 1, 0).unwrap();
        let x = s.interpolate(|_, t| (3.0 * t).sin());
        let at = build_point_eval_operator(&s, &[0.5]).unwrap().apply(&x).unwrap()[0];
        // right-limit: evaluate on interval 2 at its left end
        let right: f64 = (0..4).map(|l| s.basis().eval(0.0).unwrap()[l] * x[s.dof(0, 2, l)]).sum();
        assert_eq!(at, right);
    }

    #[test]
    fn regularizer_examples() {
        let s = FeSpace::shared(&uniform(2), 1, 1, 0).unwrap();
        let rule = rule_for(&s, 2);
        let p = build_eval_operator(&s, &rule).unwrap();
        let sm = build_regularizer(&s, &rule, &p).unwrap();
        let one = s.interpolate(|_, _| 1.0);
        assert_abs_diff_eq!(sm.quadratic_form(&one).unwrap(), 1.0, epsilon = 1e-14);
        let lin = s.interpolate(|_, t| t);
        assert_abs_diff_eq!(sm.quadratic_form(&lin).unwrap(), 4.0 / 3.0, epsilon = 1e-14);

        let s = FeSpace::shared(&uniform(3), 2, 0, 1).unwrap();
        let rule = rule_for(&s, 3);
        let p = build_eval_operator(&s, &rule).unwrap();
        let sm = build_regularizer(&s, &rule, &p).unwrap();
        let two = s.interpolate(|_, _| 2.0);
        assert_abs_diff_eq!(sm.quadratic_form(&two).unwrap(), 4.0, epsilon = 1e-13);
        assert_eq!(sm.max_asymmetry(), 0.0);
    }

    #[test]
    fn provenance_mismatch() {
        let s = FeSpace::shared(&uniform(2), 1, 1, 1).unwrap();
        let merged = merge_meshes(&[uniform(2)]).unwrap();
        let rule = compose_rule(&merged, &UnitRule::for_degree(1).unwrap());
        assert!(matches!(build_eval_operator(&s, &rule), Err(Error::Provenance(_))));
        // two sources, but the second is not the component's mesh
        let merged = merge_meshes(&[uniform(2), uniform(3)]).unwrap();
        let rule = compose_rule(&merged, &UnitRule::for_degree(1).unwrap());
        assert!(matches!(build_eval_operator(&s, &rule), Err(Error::Provenance(_))));
    }

    #[test]
    fn mixed_meshes_reproduce_polynomials() {
        let s = FeSpace::new(vec![uniform(2), uniform(3)], 3, 1, 1).unwrap();
        let rule = rule_for(&s, 4);
        let p = build_eval_operator(&s, &rule).unwrap();
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t.powi(3);
        let df = |t: f64| -2.0 + 1.5 * t * t;
        let x = s.interpolate(|_, t| f(t));
        let v = p.apply(&x).unwrap();
        for (j, &t) in rule.points().iter().enumerate() {
            assert_abs_diff_eq!(v[3 * j], df(t), epsilon = 1e-12);
            assert_abs_diff_eq!(v[3 * j + 1], f(t), epsilon = 1e-12);
            assert_abs_diff_eq!(v[3 * j + 2], f(t), epsilon = 1e-12);
        }
    }
}
