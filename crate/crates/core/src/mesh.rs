//! One-dimensional triangulations of the time domain and their common refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Open interval `(left, right)` with `left < right`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub left: T,
    pub right: T,
}

impl<T: Real> Interval<T> {
    pub fn new(left: T, right: T) -> Result<Self> {
        if !(left < right) || !left.is_finite() || !right.is_finite() {
            return Err(Error::InvalidDomain {
                t0: left.to_f64_lossy(),
                te: right.to_f64_lossy(),
            });
        }
        Ok(Self { left, right })
    }

    #[inline]
    pub fn length(&self) -> T {
        self.right - self.left
    }

    #[inline]
    pub fn midpoint(&self) -> T {
        T::half() * (self.left + self.right)
    }

    /// Maps a unit coordinate `s ∈ [0,1]` into the interval.
    #[inline]
    pub fn map_from_unit(&self, s: T) -> T {
        self.left + self.length() * s
    }

    /// Maps a physical coordinate into unit coordinates; no clamping.
    #[inline]
    pub fn map_to_unit(&self, t: T) -> T {
        (t - self.left) / self.length()
    }

    #[inline]
    pub fn contains_closed(&self, t: T) -> bool {
        t >= self.left && t <= self.right
    }
}

fn check_domain<T: Real>(t0: T, te: T) -> Result<()> {
    if !(t0 < te) || !t0.is_finite() || !te.is_finite() {
        return Err(Error::InvalidDomain {
            t0: t0.to_f64_lossy(),
            te: te.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Relative tolerance used to collapse coinciding endpoints.
fn endpoint_tolerance<T: Real>(t0: T, te: T) -> T {
    let rel = T::lit(1e-12).max(T::lit(4.0) * T::epsilon());
    rel * (te - t0)
}

/// Sorted partition of `(t_0, t_E)` into intervals. Validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh<T> {
    intervals: Vec<Interval<T>>,
    domain: (T, T),
}

impl<T: Real> Mesh<T> {
    /// `n_intervals` equal-length intervals covering `domain`.
    pub fn uniform(domain: (T, T), n_intervals: usize) -> Result<Self> {
        let (t0, te) = domain;
        check_domain(t0, te)?;
        if n_intervals == 0 {
            return Err(Error::InvalidCount(0));
        }
        let n = T::of_usize(n_intervals);
        let mut intervals = Vec::with_capacity(n_intervals);
        for k in 0..n_intervals {
            let left = t0 + (te - t0) * T::of_usize(k) / n;
            let right = if k + 1 == n_intervals {
                te
            } else {
                t0 + (te - t0) * T::of_usize(k + 1) / n
            };
            intervals.push(Interval { left, right });
        }
        Ok(Self {
            intervals,
            domain: (t0, te),
        })
    }

    /// Smallest uniform mesh of `domain` whose mesh size does not exceed `h`.
    pub fn with_max_width(domain: (T, T), h: T) -> Result<Self> {
        check_domain(domain.0, domain.1)?;
        if !(h > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "mesh width must be positive, got {h}"
            )));
        }
        let ratio = ((domain.1 - domain.0) / h).to_f64_lossy();
        // Guard against 1/h landing a hair above an integer.
        let n = (ratio - 1e-9).ceil().max(1.0) as usize;
        Self::uniform(domain, n)
    }

    /// Mesh from strictly increasing breakpoints `t_0 < t_1 < ... < t_E`.
    pub fn from_breakpoints(points: &[T]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidBreakpoints(format!(
                "need at least two breakpoints, got {}",
                points.len()
            )));
        }
        let t0 = points[0];
        let te = points[points.len() - 1];
        check_domain(t0, te)?;
        let mut intervals = Vec::with_capacity(points.len() - 1);
        for (k, w) in points.windows(2).enumerate() {
            if !(w[0] < w[1]) || !w[1].is_finite() {
                return Err(Error::InvalidBreakpoints(format!(
                    "breakpoints must be strictly increasing (violated at index {})",
                    k + 1
                )));
            }
            intervals.push(Interval {
                left: w[0],
                right: w[1],
            });
        }
        Ok(Self {
            intervals,
            domain: (t0, te),
        })
    }

    pub fn intervals(&self) -> &[Interval<T>] {
        &self.intervals
    }

    pub fn n_intervals(&self) -> usize {
        self.intervals.len()
    }

    pub fn domain(&self) -> (T, T) {
        self.domain
    }

    /// All endpoints in increasing order (`n_intervals + 1` values).
    pub fn breakpoints(&self) -> Vec<T> {
        let mut pts = Vec::with_capacity(self.intervals.len() + 1);
        pts.push(self.domain.0);
        pts.extend(self.intervals.iter().map(|iv| iv.right));
        pts
    }

    /// `max |T_j|`.
    pub fn mesh_size(&self) -> T {
        self.intervals
            .iter()
            .map(Interval::length)
            .fold(T::zero(), T::max)
    }

    /// `min_{j,k} |T_j| / |T_k|`.
    pub fn min_length_ratio(&self) -> T {
        let min = self
            .intervals
            .iter()
            .map(Interval::length)
            .fold(T::infinity(), T::min);
        min / self.mesh_size()
    }

    /// True iff the quasi-uniformity ratio is at least `sigma`, up to the
    /// rounding of the breakpoints.
    pub fn validate_quasi_uniform(&self, sigma: T) -> bool {
        let slack = T::lit(64.0) * T::epsilon();
        self.min_length_ratio() >= sigma - slack
    }

    /// Index of the interval containing `t`. Interior mesh points resolve to the
    /// interval on their left, `t_0` to the first interval.
    pub fn locate(&self, t: T) -> Result<usize> {
        let (t0, te) = self.domain;
        if !(t >= t0 && t <= te) {
            return Err(Error::OutOfRange {
                point: t.to_f64_lossy(),
                range: format!("[{t0}, {te}]"),
            });
        }
        // First interval whose right endpoint is >= t.
        let idx = self.intervals.partition_point(|iv| iv.right < t);
        Ok(idx.min(self.intervals.len() - 1))
    }

    /// Halves every interval.
    pub fn refined(&self) -> Self {
        let mut pts = Vec::with_capacity(2 * self.intervals.len() + 1);
        pts.push(self.domain.0);
        for iv in &self.intervals {
            pts.push(iv.midpoint());
            pts.push(iv.right);
        }
        Self::from_breakpoints(&pts).expect("refinement of a valid mesh is valid")
    }

    fn same_domain(&self, other: &Self) -> bool {
        let tol = endpoint_tolerance(self.domain.0, self.domain.1);
        (self.domain.0 - other.domain.0).abs() <= tol && (self.domain.1 - other.domain.1).abs() <= tol
    }
}

/// Common refinement of several meshes. Records, for every merged interval, the
/// index of the source interval containing it in each source mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedMesh<T> {
    intervals: Vec<Interval<T>>,
    provenance: Vec<Vec<usize>>,
    domain: (T, T),
    n_sources: usize,
}

impl<T: Real> MergedMesh<T> {
    pub fn intervals(&self) -> &[Interval<T>] {
        &self.intervals
    }

    pub fn n_intervals(&self) -> usize {
        self.intervals.len()
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn domain(&self) -> (T, T) {
        self.domain
    }

    /// Source interval index in mesh `source` containing merged interval `merged`.
    pub fn source_interval(&self, merged: usize, source: usize) -> usize {
        self.provenance[merged][source]
    }

    pub fn provenance(&self) -> &[Vec<usize>] {
        &self.provenance
    }

    /// The merged intervals viewed as an ordinary mesh.
    pub fn as_mesh(&self) -> Mesh<T> {
        Mesh {
            intervals: self.intervals.clone(),
            domain: self.domain,
        }
    }
}

/// Merges meshes over a shared domain into their common refinement.
pub fn merge_meshes<T: Real>(meshes: &[Mesh<T>]) -> Result<MergedMesh<T>> {
    let first = meshes
        .first()
        .ok_or_else(|| Error::InsufficientData("merge_meshes needs at least one mesh".into()))?;
    if meshes.iter().any(|m| !first.same_domain(m)) {
        return Err(Error::DomainMismatch);
    }
    let (t0, te) = first.domain;
    let tol = endpoint_tolerance(t0, te);

    let mut points: Vec<T> = meshes.iter().flat_map(Mesh::breakpoints).collect();
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    let mut unique: Vec<T> = Vec::with_capacity(points.len());
    for p in points {
        match unique.last() {
            Some(&last) if p - last <= tol => {}
            _ => unique.push(p),
        }
    }
    // Pin the ends to the exact domain of the first mesh.
    *unique.first_mut().expect("nonempty") = t0;
    if unique.len() < 2 {
        return Err(Error::InvalidDomain {
            t0: t0.to_f64_lossy(),
            te: te.to_f64_lossy(),
        });
    }
    *unique.last_mut().expect("nonempty") = te;

    let intervals: Vec<Interval<T>> = unique
        .windows(2)
        .map(|w| Interval {
            left: w[0],
            right: w[1],
        })
        .collect();
    let provenance = intervals
        .iter()
        .map(|iv| {
            let mid = iv.midpoint();
            meshes
                .iter()
                .map(|m| m.locate(mid).expect("midpoint inside the shared domain"))
                .collect()
        })
        .collect();
    Ok(MergedMesh {
        intervals,
        provenance,
        domain: (t0, te),
        n_sources: meshes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_single_interval() {
        let m = Mesh::uniform((0.0, 1.0), 1).unwrap();
        assert_eq!(m.intervals(), &[Interval { left: 0.0, right: 1.0 }]);
    }

    #[test]
    fn uniform_equal_split() {
        let m = Mesh::uniform((0.0, 1.0), 4).unwrap();
        assert_eq!(m.breakpoints(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn uniform_mesh_size_and_ratio() {
        let m = Mesh::uniform((0.0, 2.0), 8).unwrap();
        assert_abs_diff_eq!(m.mesh_size(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m.min_length_ratio(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn uniform_rejects_bad_input() {
        assert!(matches!(
            Mesh::uniform((1.0, 1.0), 3),
            Err(Error::InvalidDomain { .. })
        ));
        assert!(matches!(
            Mesh::uniform((2.0, 1.0), 3),
            Err(Error::InvalidDomain { .. })
        ));
        assert_eq!(Mesh::<f64>::uniform((0.0, 1.0), 0), Err(Error::InvalidCount(0)));
    }

    #[test]
    fn with_max_width_covers_h() {
        let m = Mesh::with_max_width((0.0, 1.0), 0.125).unwrap();
        assert_eq!(m.n_intervals(), 8);
        let m = Mesh::with_max_width((0.0, 1.0), 0.3).unwrap();
        assert_eq!(m.n_intervals(), 4);
        assert!(m.mesh_size() <= 0.3);
    }

    #[test]
    fn quasi_uniformity() {
        let m = Mesh::uniform((0.0, 1.0), 4).unwrap();
        assert!(m.validate_quasi_uniform(1.0));
        let m = Mesh::from_breakpoints(&[0.0, 0.1, 1.0]).unwrap();
        assert!(!m.validate_quasi_uniform(0.5));
        let m = Mesh::from_breakpoints(&[0.0, 0.4, 1.0]).unwrap();
        // ratio 0.4 / 0.6 = 2/3
        assert_abs_diff_eq!(m.min_length_ratio(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(m.validate_quasi_uniform(0.5));
    }

    #[test]
    fn rounded_uniform_mesh_is_quasi_uniform() {
        let m = Mesh::with_max_width((0.0, 1.0), 0.1).unwrap();
        assert_eq!(m.n_intervals(), 10);
        assert!(m.validate_quasi_uniform(1.0));
        let m = Mesh::from_breakpoints(&[0.0, 0.4, 1.0]).unwrap();
        assert!(!m.validate_quasi_uniform(0.7));
        assert!(m.validate_quasi_uniform(0.6));
    }

    #[test]
    fn breakpoints_must_increase() {
        assert!(matches!(
            Mesh::from_breakpoints(&[0.0, 0.5, 0.5, 1.0]),
            Err(Error::InvalidBreakpoints(_))
        ));
        assert!(Mesh::<f64>::from_breakpoints(&[0.0]).is_err());
    }

    #[test]
    fn locate_uses_left_interval_at_mesh_points() {
        let m = Mesh::uniform((0.0, 1.0), 4).unwrap();
        assert_eq!(m.locate(0.0).unwrap(), 0);
        assert_eq!(m.locate(0.25).unwrap(), 0);
        assert_eq!(m.locate(0.26).unwrap(), 1);
        assert_eq!(m.locate(1.0).unwrap(), 3);
        assert!(m.locate(1.5).is_err());
    }

    #[test]
    fn merge_self() {
        let m = Mesh::uniform((0.0, 1.0), 2).unwrap();
        let merged = merge_meshes(std::slice::from_ref(&m)).unwrap();
        assert_eq!(merged.as_mesh(), m);
    }

    #[test]
    fn merge_two_and_three() {
        let a = Mesh::uniform((0.0, 1.0), 2).unwrap();
        let b = Mesh::uniform((0.0, 1.0), 3).unwrap();
        let merged = merge_meshes(&[a, b]).unwrap();
        let pts = merged.as_mesh().breakpoints();
        let expected = [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0];
        assert_eq!(pts.len(), expected.len());
        for (p, e) in pts.iter().zip(expected) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-15);
        }
        assert_eq!(merged.n_intervals(), 4);
        assert_eq!(merged.provenance(), &[vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 2]]);
    }

    #[test]
    fn merge_nested_is_finer_mesh() {
        let a = Mesh::uniform((0.0, 1.0), 2).unwrap();
        let b = Mesh::uniform((0.0, 1.0), 4).unwrap();
        let merged = merge_meshes(&[a, b.clone()]).unwrap();
        assert_eq!(merged.as_mesh(), b);
    }

    #[test]
    fn merge_rejects_domain_mismatch() {
        let a = Mesh::uniform((0.0, 1.0), 2).unwrap();
        let b = Mesh::uniform((0.0, 2.0), 2).unwrap();
        assert_eq!(merge_meshes(&[a, b]), Err(Error::DomainMismatch));
    }

    #[test]
    fn merge_collapses_near_duplicates() {
        let a = Mesh::from_breakpoints(&[0.0, 0.5, 1.0]).unwrap();
        let b = Mesh::from_breakpoints(&[0.0, 0.5 + 1e-14, 1.0]).unwrap();
        let merged = merge_meshes(&[a, b]).unwrap();
        assert_eq!(merged.n_intervals(), 2);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Mesh::<f32>::uniform((0.0, 1.0), 3).unwrap();
        let b = Mesh::<f32>::uniform((0.0, 1.0), 2).unwrap();
        let merged = merge_meshes(&[a, b]).unwrap();
        assert_eq!(merged.n_intervals(), 4);
    }
}
