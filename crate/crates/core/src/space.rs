//! Broken tensor-product Legendre spaces.
//!
//! On element `E` with degree `p_E` the local basis is
//! `phi_k(xi, eta) = P_a(xi) P_b(eta)` with `k = a + (p_E + 1) b`, where
//! `P_n` are the (unnormalized) Legendre polynomials, so `phi_0 = 1`.
//! DOFs are laid out in element-major blocks of `(p_E + 1)^2`.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{DgError, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{legendre_table, QuadratureRule};

#[derive(Debug, Clone, PartialEq)]
pub enum Degrees {
    Uniform(usize),
    PerElement(Vec<usize>),
}

/// Basis values and physical gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct BrokenSpace {
    mesh: Arc<Mesh>,
    degrees: Vec<usize>,
    offsets: Vec<usize>,
    p_min: usize,
    p_max: usize,
    quadrature: QuadratureRule,
}

impl BrokenSpace {
    /// Default quadrature: `p_max + 2` points per direction.
    pub fn new(mesh: Arc<Mesh>, degrees: Degrees) -> Result<Self> {
        let q = match &degrees {
            Degrees::Uniform(p) => *p,
            Degrees::PerElement(ps) => ps.iter().copied().max().unwrap_or(0),
        } + 2;
        Self::with_quadrature_order(mesh, degrees, q)
    }

    pub fn with_quadrature_order(mesh: Arc<Mesh>, degrees: Degrees, order: usize) -> Result<Self> {
        let n = mesh.n_elements();
        let degrees = match degrees {
            Degrees::Uniform(p) => vec![p; n],
            Degrees::PerElement(ps) => {
                if ps.len() != n {
                    return Err(DgError::InvalidInput(format!(
                        "{} per-element degrees given for {} elements",
                        ps.len(),
                        n
                    )));
                }
                ps
            }
        };
        if let Some(e) = degrees.iter().position(|&p| p == 0) {
            return Err(DgError::InvalidInput(format!(
                "polynomial degree must be >= 1 (element {e} has degree 0)"
            )));
        }
        if order == 0 {
            return Err(DgError::InvalidInput("quadrature order must be >= 1".into()));
        }
        let p_min = degrees.iter().copied().min().unwrap_or(1);
        let p_max = degrees.iter().copied().max().unwrap_or(1);
        if p_min == 1 {
            log::warn!("degree 1 present: the zero-penalty limit of this formulation is known to need p >= 2");
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        offsets.push(0);
        for &p in &degrees {
            acc += (p + 1) * (p + 1);
            offsets.push(acc);
        }
        Ok(BrokenSpace {
            mesh,
            degrees,
            offsets,
            p_min,
            p_max,
            quadrature: QuadratureRule::new(order),
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn degree(&self, e: usize) -> usize {
        self.degrees[e]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Global `p = min_E p_E`.
    pub fn p(&self) -> usize {
        self.p_min
    }

    pub fn p_max(&self) -> usize {
        self.p_max
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    pub fn dof_range(&self, e: usize) -> Range<usize> {
        self.offsets[e]..self.offsets[e + 1]
    }

    pub fn n_local(&self, e: usize) -> usize {
        self.offsets[e + 1] - self.offsets[e]
    }

    /// Basis at a reference point, gradients mapped to physical coordinates.
    pub fn eval_basis(&self, e: usize, xi: Point) -> Result<BasisEval> {
        if e >= self.mesh.n_elements() {
            return Err(DgError::InvalidInput(format!(
                "element index {e} out of range ({} elements)",
                self.mesh.n_elements()
            )));
        }
        Ok(self.eval_reference(e, xi))
    }

    pub(crate) fn eval_reference(&self, e: usize, xi: Point) -> BasisEval {
        let p = self.degrees[e];
        let rect = self.mesh.element(e);
        let (sx, sy) = (2.0 / rect.width(), 2.0 / rect.height());
        let (lx, dlx) = legendre_table(p, xi[0]);
        let (ly, dly) = legendre_table(p, xi[1]);
        let m = (p + 1) * (p + 1);
        let mut values = Vec::with_capacity(m);
        let mut grads = Vec::with_capacity(m);
        for b in 0..=p {
            for a in 0..=p {
                values.push(lx[a] * ly[b]);
                grads.push([sx * dlx[a] * ly[b], sy * lx[a] * dly[b]]);
            }
        }
        BasisEval { values, grads }
    }

    /// Basis of element `e` at a physical point (which may lie on `∂E`).
    pub(crate) fn eval_physical(&self, e: usize, x: Point) -> BasisEval {
        let xi = self.mesh.element(e).to_reference(x);
        self.eval_reference(e, xi)
    }

    /// Physical quadrature points and weights (including the Jacobian) on `e`.
    pub fn element_points(&self, e: usize, rule: &QuadratureRule) -> Vec<(Point, f64)> {
        let rect = self.mesh.element(e);
        let jac = 0.25 * rect.area();
        rule.square
            .iter()
            .map(|&(xi, w)| (rect.to_physical(xi), w * jac))
            .collect()
    }

    /// `∫_E phi_k^2`, closed form for the Legendre tensor basis.
    pub fn mass_diagonal(&self, e: usize) -> Vec<f64> {
        let p = self.degrees[e];
        let jac = 0.25 * self.mesh.element(e).area();
        let mut out = Vec::with_capacity((p + 1) * (p + 1));
        for b in 0..=p {
            for a in 0..=p {
                out.push(jac * 2.0 / (2 * a + 1) as f64 * 2.0 / (2 * b + 1) as f64);
            }
        }
        out
    }

    /// Element-wise L² projection.
    pub fn project_l2(self: &Arc<Self>, f: impl Fn(Point) -> f64) -> DGFunction {
        let mut coeffs = vec![0.0; self.n_dofs()];
        for e in 0..self.mesh.n_elements() {
            let range = self.dof_range(e);
            let mass = self.mass_diagonal(e);
            let local = &mut coeffs[range];
            for (x, w) in self.element_points(e, &self.quadrature) {
                let fx = f(x);
                let b = self.eval_physical(e, x);
                for (c, v) in local.iter_mut().zip(&b.values) {
                    *c += w * fx * v;
                }
            }
            for (c, m) in local.iter_mut().zip(&mass) {
                *c /= m;
            }
        }
        DGFunction {
            space: Arc::clone(self),
            coeffs,
        }
    }
}

/// Anything that can be sampled element-wise as a value and gradient:
/// discrete functions, or exact solutions.
pub trait Field {
    fn value_grad(&self, e: usize, x: Point) -> (f64, [f64; 2]);
}

/// Closure-backed smooth field.
pub struct ExactField<U, G> {
    pub value: U,
    pub grad: G,
}

impl<U, G> Field for ExactField<U, G>
where
    U: Fn(Point) -> f64,
    G: Fn(Point) -> [f64; 2],
{
    fn value_grad(&self, _e: usize, x: Point) -> (f64, [f64; 2]) {
        ((self.value)(x), (self.grad)(x))
    }
}

#[derive(Debug, Clone)]
pub struct DGFunction {
    space: Arc<BrokenSpace>,
    pub coeffs: Vec<f64>,
}

impl DGFunction {
    pub fn new(space: Arc<BrokenSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(DgError::InvalidInput(format!(
                "coefficient vector has length {}, space has {} DOFs",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        Ok(DGFunction { space, coeffs })
    }

    pub fn zeros(space: Arc<BrokenSpace>) -> Self {
        let n = space.n_dofs();
        DGFunction {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &Arc<BrokenSpace> {
        &self.space
    }

    pub fn local(&self, e: usize) -> &[f64] {
        &self.coeffs[self.space.dof_range(e)]
    }

    /// Value and gradient of the restriction to `e` (the one-sided trace when
    /// `x` lies on `∂E`).
    pub fn eval_on(&self, e: usize, x: Point) -> (f64, [f64; 2]) {
        let b = self.space.eval_physical(e, x);
        let c = self.local(e);
        let mut v = 0.0;
        let mut g = [0.0, 0.0];
        for k in 0..c.len() {
            v += c[k] * b.values[k];
            g[0] += c[k] * b.grads[k][0];
            g[1] += c[k] * b.grads[k][1];
        }
        (v, g)
    }

    /// Point value; `None` outside the domain.
    pub fn eval(&self, x: Point) -> Option<f64> {
        self.space.mesh().locate(x).map(|e| self.eval_on(e, x).0)
    }

    pub fn scaled(&self, alpha: f64) -> DGFunction {
        DGFunction {
            space: Arc::clone(&self.space),
            coeffs: self.coeffs.iter().map(|c| alpha * c).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &DGFunction) -> DGFunction {
        DGFunction {
            space: Arc::clone(&self.space),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        }
    }
}

impl Field for DGFunction {
    fn value_grad(&self, e: usize, x: Point) -> (f64, [f64; 2]) {
        self.eval_on(e, x)
    }
}
