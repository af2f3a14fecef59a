//! Constrained reformulation for external interior-point solvers.
//!
//! Variables `(x, λ, ν, s)`; objective `F(x) + (ω/2)xᵀSx + (ω/2)‖(λ;ν)‖²`;
//! constraints `H(x) − ω(λ;ν) = 0`, `G_pt(x) − s = 0`, `s ≥ 0`. With a
//! weighted log barrier `−ϑ Σ_i w_i log s_i` at `ϑ = τ` the lifted problem
//! reproduces the penalty-barrier objective. `H` is carried as its value
//! and Jacobian at a reference point, which is exact when `c` and `b` are
//! affine in their arguments.
//!
//! The text layout is described in `docs/FORMATS.md`.

use std::fmt::Write as _;

use crate::assembly::AssembledNlp;
use crate::error::{Error, Result};
use crate::ocp::OcpProblem;
use crate::scalar::Real;
use crate::sparse::SparseOperator;

pub const FORMAT_HEADER: &str = "ocp-fem lifted-nlp 1";

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedNlpExport<T> {
    pub n_x: usize,
    pub n_lambda: usize,
    pub n_nu: usize,
    pub n_s: usize,
    pub omega: T,
    pub tau: T,
    /// Recommended barrier target of the external solver.
    pub theta: T,
    pub regularizer: SparseOperator<T>,
    pub jac_hc: SparseOperator<T>,
    pub jac_hb: SparseOperator<T>,
    pub jac_g: SparseOperator<T>,
    /// Log-barrier weight of each slack (the quadrature weight of its point).
    pub barrier_weights: Vec<T>,
    /// Point at which the Jacobians and `h_ref` were evaluated.
    pub x_ref: Vec<T>,
    /// `(H_c; H_b)` at `x_ref`.
    pub h_ref: Vec<T>,
    pub metadata: Vec<(String, String)>,
}

impl<T: Real> LiftedNlpExport<T> {
    pub fn n_variables(&self) -> usize {
        self.n_x + self.n_lambda + self.n_nu + self.n_s
    }

    pub fn n_constraints(&self) -> usize {
        self.n_lambda + self.n_nu + self.n_s
    }

    /// `F + (ω/2)xᵀSx + (ω/2)‖(λ;ν)‖² − ϑ Σ w_i log s_i`, with `F` supplied by the caller.
    pub fn objective(&self, f: T, x: &[T], lambda: &[T], nu: &[T], s: &[T]) -> Result<T> {
        if x.len() != self.n_x || lambda.len() != self.n_lambda || nu.len() != self.n_nu || s.len() != self.n_s {
            return Err(Error::Dimension("lifted variable blocks have wrong lengths".into()));
        }
        let quad = self.regularizer.quadratic_form(x)?;
        let mult: T = lambda.iter().chain(nu).map(|&v| v * v).sum();
        let mut barrier = T::zero();
        for (i, (&si, &wi)) in s.iter().zip(&self.barrier_weights).enumerate() {
            if !(si > T::zero()) {
                return Err(Error::BarrierDomain {
                    point: i,
                    component: 0,
                    value: si.to_f64_lossy(),
                });
            }
            barrier += wi * si.ln();
        }
        Ok(f + self.omega / T::two() * quad + self.omega / T::two() * mult - self.theta * barrier)
    }

    /// Constraint residuals `(H_lin(x) − ω(λ;ν), G_pt(x) − s)` with
    /// `H_lin(x) = h_ref + JH (x − x_ref)`.
    pub fn constraint_residual(&self, x: &[T], lambda: &[T], nu: &[T], s: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_x || lambda.len() != self.n_lambda || nu.len() != self.n_nu || s.len() != self.n_s {
            return Err(Error::Dimension("lifted variable blocks have wrong lengths".into()));
        }
        let dx: Vec<T> = x.iter().zip(&self.x_ref).map(|(&a, &b)| a - b).collect();
        let mut out = self.jac_hc.apply(&dx)?;
        out.extend(self.jac_hb.apply(&dx)?);
        for ((r, &h), &m) in out.iter_mut().zip(&self.h_ref).zip(lambda.iter().chain(nu)) {
            *r = *r + h - self.omega * m;
        }
        let g = self.jac_g.apply(x)?;
        out.extend(g.iter().zip(s).map(|(&gi, &si)| gi - si));
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "n_x {}", self.n_x);
        let _ = writeln!(out, "n_lambda {}", self.n_lambda);
        let _ = writeln!(out, "n_nu {}", self.n_nu);
        let _ = writeln!(out, "n_s {}", self.n_s);
        let _ = writeln!(out, "n_variables {}", self.n_variables());
        let _ = writeln!(out, "n_constraints {}", self.n_constraints());
        let _ = writeln!(out, "omega {}", self.omega);
        let _ = writeln!(out, "tau {}", self.tau);
        let _ = writeln!(out, "theta {}", self.theta);
        for (name, op) in [
            ("regularizer", &self.regularizer),
            ("jac_hc", &self.jac_hc),
            ("jac_hb", &self.jac_hb),
            ("jac_g", &self.jac_g),
        ] {
            let _ = writeln!(out, "matrix {name} {} {} {}", op.rows(), op.cols(), op.nnz());
            for (r, c, v) in op.triplets() {
                let _ = writeln!(out, "{r} {c} {v}");
            }
        }
        for (name, v) in [("barrier_weights", &self.barrier_weights), ("x_ref", &self.x_ref), ("h_ref", &self.h_ref)] {
            let _ = writeln!(out, "vector {name} {}", v.len());
            for w in v {
                let _ = writeln!(out, "{w}");
            }
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "meta {k} {v}");
        }
        let _ = writeln!(out, "end");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cur = Cursor {
            lines: text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).collect(),
            pos: 0,
        };
        let (_, header) = cur.next("header")?;
        if header != FORMAT_HEADER {
            return Err(Error::Format(format!("unknown header '{header}'")));
        }
        let n_x = parse_num::<usize>(&cur.keyed("n_x")?)?;
        let n_lambda = parse_num::<usize>(&cur.keyed("n_lambda")?)?;
        let n_nu = parse_num::<usize>(&cur.keyed("n_nu")?)?;
        let n_s = parse_num::<usize>(&cur.keyed("n_s")?)?;
        let n_variables = parse_num::<usize>(&cur.keyed("n_variables")?)?;
        let n_constraints = parse_num::<usize>(&cur.keyed("n_constraints")?)?;
        let omega = parse_real::<T>(&cur.keyed("omega")?)?;
        let tau = parse_real::<T>(&cur.keyed("tau")?)?;
        let theta = parse_real::<T>(&cur.keyed("theta")?)?;
        let mut matrices = Vec::new();
        for name in ["regularizer", "jac_hc", "jac_hb", "jac_g"] {
            let spec = cur.keyed(&format!("matrix {name}"))?;
            let dims: Vec<usize> = spec.split_whitespace().map(parse_num).collect::<Result<_>>()?;
            if dims.len() != 3 {
                return Err(Error::Format(format!("matrix {name}: expected 'rows cols nnz'")));
            }
            let mut triplets = Vec::with_capacity(dims[2]);
            for _ in 0..dims[2] {
                let (i, line) = cur.next("triplet")?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(Error::Format(format!("line {i}: expected 'row col value'")));
                }
                triplets.push((parse_num(f[0])?, parse_num(f[1])?, parse_real::<T>(f[2])?));
            }
            matrices.push(SparseOperator::from_triplets(dims[0], dims[1], triplets)?);
        }
        let mut vectors = Vec::new();
        for name in ["barrier_weights", "x_ref", "h_ref"] {
            let count = parse_num::<usize>(&cur.keyed(&format!("vector {name}"))?)?;
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                let (_, line) = cur.next(name)?;
                v.push(parse_real::<T>(line)?);
            }
            vectors.push(v);
        }
        let [barrier_weights, x_ref, h_ref]: [Vec<T>; 3] = vectors.try_into().expect("three vectors");
        let mut metadata = Vec::new();
        loop {
            let (i, line) = cur.next("metadata or 'end'")?;
            if line == "end" {
                break;
            }
            let rest = line
                .strip_prefix("meta ")
                .ok_or_else(|| Error::Format(format!("line {i}: expected 'meta' or 'end'")))?;
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            metadata.push((k.to_string(), v.to_string()));
        }
        let mut it = matrices.into_iter();
        let export = Self {
            n_x,
            n_lambda,
            n_nu,
            n_s,
            omega,
            tau,
            theta,
            regularizer: it.next().expect("parsed"),
            jac_hc: it.next().expect("parsed"),
            jac_hb: it.next().expect("parsed"),
            jac_g: it.next().expect("parsed"),
            barrier_weights,
            x_ref,
            h_ref,
            metadata,
        };
        if export.n_variables() != n_variables || export.n_constraints() != n_constraints {
            return Err(Error::Format("variable or constraint count inconsistent with blocks".into()));
        }
        export.check_shapes()?;
        Ok(export)
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.regularizer.rows() == self.n_x
            && self.regularizer.cols() == self.n_x
            && self.jac_hc.rows() == self.n_lambda
            && self.jac_hb.rows() == self.n_nu
            && self.jac_g.rows() == self.n_s
            && [&self.jac_hc, &self.jac_hb, &self.jac_g].iter().all(|m| m.cols() == self.n_x)
            && self.barrier_weights.len() == self.n_s
            && self.x_ref.len() == self.n_x
            && self.h_ref.len() == self.n_lambda + self.n_nu;
        if ok {
            Ok(())
        } else {
            Err(Error::Format("block shapes inconsistent with the declared dimensions".into()))
        }
    }
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let item = self
            .lines
            .get(self.pos)
            .map(|&(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::Format(format!("unexpected end of input, expected {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    /// Rest of a line starting with `key `.
    fn keyed(&mut self, key: &str) -> Result<String> {
        let (i, line) = self.next(key)?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| Error::Format(format!("line {i}: expected '{key}'")))
    }
}

fn parse_num<N: std::str::FromStr>(s: &str) -> Result<N> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse '{s}' as an integer")))
}

fn parse_real<T: Real>(s: &str) -> Result<T> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse '{s}' as a number")))?;
    T::from_f64(v).ok_or_else(|| Error::Format(format!("'{s}' not representable")))
}

/// Exports the lifted problem. Jacobians are evaluated at `x`; for problems
/// with linear `c` and `b` they do not depend on it.
pub fn export_lifted_nlp<T: Real, P: OcpProblem<T> + ?Sized>(nlp: &AssembledNlp<'_, T, P>, x: &[T]) -> Result<LiftedNlpExport<T>> {
    let (jac_hc, jac_hb, jac_g) = nlp.eval_constraint_jacobians(x)?;
    let (hc, hb) = nlp.eval_penalty_blocks(x)?;
    let nz = nlp.dims().n_z;
    let barrier_weights = nlp
        .rule()
        .weights()
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w, nz))
        .collect();
    let params = nlp.params();
    Ok(LiftedNlpExport {
        n_x: nlp.n_dofs(),
        n_lambda: jac_hc.rows(),
        n_nu: jac_hb.rows(),
        n_s: jac_g.rows(),
        omega: params.omega,
        tau: params.tau,
        theta: params.tau,
        regularizer: nlp.regularizer().clone(),
        jac_hc,
        jac_hb,
        jac_g,
        barrier_weights,
        x_ref: x.to_vec(),
        h_ref: hc.into_iter().chain(hb).collect(),
        metadata: vec![
            ("mu_min".into(), format!("{}", params.tau)),
            ("mu_target".into(), format!("{}", params.tau)),
            (
                "note".into(),
                "set the external barrier parameter floor and target to theta; slacks carry per-point barrier weights".into(),
            ),
        ],
    })
}

/// Lifted objective at `λ = H_c/ω`, `ν = H_b/ω`, `s = G_pt(x)`.
pub fn lifted_objective_at_substitution<T: Real, P: OcpProblem<T> + ?Sized>(
    nlp: &AssembledNlp<'_, T, P>,
    export: &LiftedNlpExport<T>,
    x: &[T],
) -> Result<T> {
    let (hc, hb) = nlp.eval_penalty_blocks(x)?;
    let omega = export.omega;
    let lambda: Vec<T> = hc.iter().map(|&v| v / omega).collect();
    let nu: Vec<T> = hb.iter().map(|&v| v / omega).collect();
    let s = nlp.z_values(x)?;
    let f = nlp.eval_objective_terms(x)?.f;
    export.objective(f, x, &lambda, &nu, &s)
}
