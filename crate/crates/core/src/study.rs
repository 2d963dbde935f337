//! Verification harness: manufactured solutions, convergence tables,
//! consistency residuals, local conservation, stability probes, and a
//! conforming Galerkin reference solve.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::analysis::{measure_constants, MeasuredConstants};
use crate::assembly::{
    assemble_rhs, assemble_system, csr_matvec, form_action, segment_points,
    AssemblyOptions, PenaltyParams,
};
use crate::coefficient::{CoefficientField, CoefficientSpec};
use crate::error::{DgError, Result};
use crate::mesh::{Mesh, Point};
use crate::norms::{build_gram, triple_norm};
use crate::output::{num, Csv};
use crate::quadrature::QuadratureRule;
use crate::solver::{solve_linear, solve_vbvp, Source, SolverOptions, VbvpConfig};
use crate::space::{BrokenSpace, DGFunction, Degrees, ExactField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    /// `K = 1`, `u = sin(πx) sin(πy)`.
    A,
    /// `K = 1 + x²`, `u = sin(πx) sin(πy)`.
    B,
    /// Quadrant checkerboard `K ∈ {1, 10}`, `u = x(1-x) y(1-y)`.
    C,
}

impl FromStr for CaseId {
    type Err = DgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "a" | "A" => Ok(CaseId::A),
            "b" | "B" => Ok(CaseId::B),
            "c" | "C" => Ok(CaseId::C),
            other => Err(DgError::InvalidInput(format!("unknown manufactured case '{other}' (expected a, b or c)"))),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::A => "a",
            CaseId::B => "b",
            CaseId::C => "c",
        })
    }
}

const K_LOW: f64 = 1.0;
const K_HIGH: f64 = 10.0;

/// Exact solution, coefficient and source with `-∇·(K∇u) + u = f` on the
/// unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedCase {
    pub id: CaseId,
    pub coefficient: CoefficientSpec,
    /// `u = 0` on the boundary of the unit square.
    pub boundary_compatible: bool,
}

pub fn manufactured(id: CaseId) -> ManufacturedCase {
    let coefficient = match id {
        CaseId::A => CoefficientSpec::Constant(1.0),
        CaseId::B => "analytic:1+x^2".parse().expect("built-in spec"),
        CaseId::C => CoefficientSpec::Quadrants {
            even: K_LOW,
            odd: K_HIGH,
        },
    };
    ManufacturedCase {
        id,
        coefficient,
        boundary_compatible: true,
    }
}

impl ManufacturedCase {
    /// Cases live on the unit square; case (c) also needs element edges on
    /// the lines `x = 1/2` and `y = 1/2`.
    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        let d = &mesh.domain;
        if (d.x0, d.x1, d.y0, d.y1) != (0.0, 1.0, 0.0, 1.0) {
            return Err(DgError::InvalidInput(format!(
                "manufactured case {} is defined on the unit square",
                self.id
            )));
        }
        if self.id == CaseId::C && (mesh.nx % 2 != 0 || mesh.ny % 2 != 0) {
            return Err(DgError::InvalidInput(
                "case c needs even nx and ny so the coefficient jumps align with element edges".into(),
            ));
        }
        Ok(())
    }

    pub fn exact(&self, x: Point) -> f64 {
        match self.id {
            CaseId::A | CaseId::B => (PI * x[0]).sin() * (PI * x[1]).sin(),
            CaseId::C => x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]),
        }
    }

    pub fn exact_grad(&self, x: Point) -> [f64; 2] {
        match self.id {
            CaseId::A | CaseId::B => {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                [PI * cx * sy, PI * sx * cy]
            }
            CaseId::C => {
                let (gx, gy) = (x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                [(1.0 - 2.0 * x[0]) * gy, gx * (1.0 - 2.0 * x[1])]
            }
        }
    }

    fn exact_laplacian(&self, x: Point) -> f64 {
        match self.id {
            CaseId::A | CaseId::B => -2.0 * PI * PI * self.exact(x),
            CaseId::C => -2.0 * x[1] * (1.0 - x[1]) - 2.0 * x[0] * (1.0 - x[0]),
        }
    }

    /// Pointwise `K(x)`; for case (c), the quadrant value (interior points).
    pub fn k(&self, x: Point) -> f64 {
        match self.id {
            CaseId::A => 1.0,
            CaseId::B => 1.0 + x[0] * x[0],
            CaseId::C => {
                if (x[0] < 0.5) == (x[1] < 0.5) {
                    K_LOW
                } else {
                    K_HIGH
                }
            }
        }
    }

    fn k_grad(&self, x: Point) -> [f64; 2] {
        match self.id {
            CaseId::B => [2.0 * x[0], 0.0],
            _ => [0.0, 0.0],
        }
    }

    /// Closed-form `f`.
    pub fn source(&self, x: Point) -> f64 {
        match self.id {
            CaseId::A => (2.0 * PI * PI + 1.0) * self.exact(x),
            CaseId::B => {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let sy = (PI * x[1]).sin();
                (1.0 + x[0] * x[0]) * 2.0 * PI * PI * sx * sy - 2.0 * PI * x[0] * cx * sy + sx * sy
            }
            CaseId::C => {
                let (gx, gy) = (x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                self.k(x) * 2.0 * (gx + gy) + gx * gy
            }
        }
    }

    /// `-(K Δu + ∇K·∇u) + u - f` from the separately coded derivatives.
    pub fn pde_residual(&self, x: Point) -> f64 {
        let g = self.exact_grad(x);
        let gk = self.k_grad(x);
        -(self.k(x) * self.exact_laplacian(x) + gk[0] * g[0] + gk[1] * g[1]) + self.exact(x) - self.source(x)
    }
}

/// One level of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub dofs: usize,
    pub l2: f64,
    pub h1: f64,
    pub triple: f64,
    pub relative_residual: f64,
    /// `log2(e_{2h} / e_h)` against the previous row.
    pub order_l2: Option<f64>,
    pub order_h1: Option<f64>,
    pub order_triple: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub case: CaseId,
    pub p: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn errors_strictly_decrease(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].l2 < w[0].l2 && w[1].h1 < w[0].h1 && w[1].triple < w[0].triple)
    }

    pub fn last_h1_order(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.order_h1)
    }

    /// Rates are expected from standard DG practice, not from a proof.
    pub fn to_csv(&self) -> Csv {
        let mut t = Csv::new(&[
            "case",
            "p",
            "n",
            "h",
            "dofs",
            "l2_error",
            "h1_error",
            "triple_error",
            "order_l2",
            "order_h1",
            "order_triple",
            "relative_residual",
        ]);
        let opt = |o: Option<f64>| o.map_or_else(String::new, num);
        for r in &self.rows {
            t.push(vec![
                self.case.to_string(),
                self.p.to_string(),
                r.n.to_string(),
                num(r.h),
                r.dofs.to_string(),
                num(r.l2),
                num(r.h1),
                num(r.triple),
                opt(r.order_l2),
                opt(r.order_h1),
                opt(r.order_triple),
                num(r.relative_residual),
            ]);
        }
        t
    }
}

/// Solves `case` on `n x n` meshes for every `n` in `levels` (sorted
/// coarse to fine).
pub fn convergence_study(
    case: CaseId,
    params: &PenaltyParams,
    levels: &[usize],
    p: usize,
    solver: &SolverOptions,
    threads: usize,
) -> Result<ConvergenceTable> {
    if levels.len() < 3 {
        return Err(DgError::InvalidInput(format!(
            "a convergence study needs at least 3 levels, got {}",
            levels.len()
        )));
    }
    if p < 2 {
        log::warn!("p = {p}: the flux-jump formulation is not expected to be stable; rows excluded from rate gates");
    }
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for n in levels {
        let config = VbvpConfig {
            nx: n,
            ny: n,
            degrees: Degrees::Uniform(p),
            params: *params,
            source: Source::Manufactured(case),
            solver: *solver,
            threads,
            ..VbvpConfig::default()
        };
        let out = solve_vbvp(&config)?;
        let err = out.norms.errors.expect("manufactured source has an exact solution");
        let order = |prev: f64, cur: f64, hp: f64, hc: f64| (prev / cur).ln() / (hp / hc).ln();
        let prev = rows.last();
        let h = out.space.mesh().h();
        rows.push(ConvergenceRow {
            n,
            h,
            dofs: out.space.n_dofs(),
            l2: err.l2,
            h1: err.h1,
            triple: err.triple,
            relative_residual: out.report.relative_residual,
            order_l2: prev.map(|r| order(r.l2, err.l2, r.h, h)),
            order_h1: prev.map(|r| order(r.h1, err.h1, r.h, h)),
            order_triple: prev.map(|r| order(r.triple, err.triple, r.h, h)),
        });
    }
    Ok(ConvergenceTable { case, p, rows })
}

/// `max_k |B(u, phi_k) - L(phi_k)| / |||phi_k|||` for the exact solution
/// `u`. The form is integrated with `q + extra` points per direction, the
/// load with the discretization rule `q`, so the value measures how far the
/// discrete load is from the one the exact solution satisfies.
pub fn consistency_residual(
    case: &ManufacturedCase,
    space: &BrokenSpace,
    params: &PenaltyParams,
    extra: usize,
) -> Result<f64> {
    case.check_mesh(space.mesh())?;
    let k = CoefficientField::new(&case.coefficient, space)?;
    let rule = QuadratureRule::new(space.quadrature().order + extra);
    let exact = ExactField {
        value: |x: Point| case.exact(x),
        grad: |x: Point| case.exact_grad(x),
    };
    let b = form_action(space, &k, params, &exact, &rule)?;
    let l = assemble_rhs(space, &|x| case.source(x));
    let g = build_gram(space, &k, params, &AssemblyOptions::default())?;
    let mut diag = vec![0.0; space.n_dofs()];
    for (i, j, v) in g.triplet_iter() {
        if i == j {
            diag[i] += *v;
        }
    }
    Ok(b.iter()
        .zip(&l)
        .zip(&diag)
        .map(|((bk, lk), gk)| (bk - lk).abs() / gk.sqrt())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservationReport {
    /// `r_E = ∫_E f - ∫_E u_h + ∫_∂E F*·μ` per element.
    pub residuals: Vec<f64>,
    pub max_abs: f64,
    pub sum: f64,
    /// `L(1) - B(u_h, 1)` from the assembled system.
    pub global_galerkin: Option<f64>,
    pub f_l2: f64,
}

impl ConservationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_abs <= tol * self.f_l2.max(1.0)
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Per-element balance with numerical flux `<K∇u_h>·μ` on interior faces
/// and `K∇u_h·μ` on the boundary, by quadrature independent of the
/// assembled matrix.
pub fn conservation_check(u_h: &DGFunction, k: &CoefficientField, f: &dyn Fn(Point) -> f64) -> ConservationReport {
    let space = u_h.space();
    let mesh = space.mesh();
    let rule = space.quadrature();
    let mut residuals = vec![0.0; mesh.n_elements()];
    let mut f_sq = 0.0;
    for (e, r) in residuals.iter_mut().enumerate() {
        for (x, w) in space.element_points(e, rule) {
            let fx = f(x);
            *r += w * (fx - u_h.eval_on(e, x).0);
            f_sq += w * fx * fx;
        }
    }
    for face in mesh.interior_faces() {
        let n = face.segment.normal;
        for (x, w) in segment_points(&face.segment, rule) {
            let (_, gi) = u_h.eval_on(face.owner, x);
            let (_, gj) = u_h.eval_on(face.neighbor, x);
            let avg = 0.5 * (k.value(face.owner, x) * dot(gi, n) + k.value(face.neighbor, x) * dot(gj, n));
            // n is outward for the owner and inward for the neighbor.
            residuals[face.owner] += w * avg;
            residuals[face.neighbor] -= w * avg;
        }
    }
    for face in mesh.boundary_faces() {
        let e = face.element;
        for (x, w) in segment_points(&face.segment, rule) {
            let (_, g) = u_h.eval_on(e, x);
            residuals[e] += w * k.value(e, x) * dot(g, face.segment.normal);
        }
    }
    ConservationReport {
        max_abs: residuals.iter().fold(0.0, |m: f64, r| m.max(r.abs())),
        sum: residuals.iter().sum(),
        residuals,
        global_galerkin: None,
        f_l2: f_sq.sqrt(),
    }
}

/// Conservation check of a solved system; also fills the `v ≡ 1` Galerkin
/// residual from the matrix.
pub fn conservation_of_system(
    u_h: &DGFunction,
    k: &CoefficientField,
    f: &dyn Fn(Point) -> f64,
    matrix: &nalgebra_sparse::CsrMatrix<f64>,
    rhs: &[f64],
) -> ConservationReport {
    let mut report = conservation_check(u_h, k, f);
    let space = u_h.space();
    let bu = csr_matvec(matrix, &u_h.coeffs);
    // The constant mode of each element is the element indicator.
    let g = (0..space.mesh().n_elements())
        .map(|e| {
            let i = space.dof_range(e).start;
            rhs[i] - bu[i]
        })
        .sum();
    report.global_galerkin = Some(g);
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub amplitude: f64,
    pub df_l2: f64,
    pub du_triple: f64,
    pub ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub measured: MeasuredConstants,
    pub rows: Vec<StabilityRow>,
}

/// Perturbs the source of `case` by `ε sin(2πx) sin(2πy)` for every
/// amplitude and compares `|||δu|||` with `‖δf‖ / γ_h`.
pub fn stability_probe(
    case: CaseId,
    params: &PenaltyParams,
    n: usize,
    p: usize,
    amplitudes: &[f64],
) -> Result<StabilityReport> {
    let c = manufactured(case);
    let mesh = Arc::new(Mesh::rectangular([0.0, 1.0, 0.0, 1.0], n, n)?);
    c.check_mesh(&mesh)?;
    let space = Arc::new(BrokenSpace::new(mesh, Degrees::Uniform(p))?);
    let k = CoefficientField::new(&c.coefficient, &space)?;
    let opts = AssemblyOptions::default();
    let base = assemble_system(&space, &k, params, &|x| c.source(x), &opts)?;
    let gram = build_gram(&space, &k, params, &opts)?;
    let measured = measure_constants(&base.matrix, &gram, &base.fingerprint)?;
    let solver = SolverOptions::default();
    let (u0, _) = solve_linear(&base, &space, &solver)?;
    let rule = QuadratureRule::new(space.quadrature().order + 4);
    let mut rows = Vec::new();
    for &eps in amplitudes {
        let df = move |x: Point| eps * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
        let mut perturbed = base.clone();
        let extra = assemble_rhs(&space, &df);
        for (b, d) in perturbed.rhs.iter_mut().zip(&extra) {
            *b += d;
        }
        let (u1, _) = solve_linear(&perturbed, &space, &solver)?;
        let du = u1.axpy(-1.0, &u0);
        let du_triple = triple_norm(&du, &k, params)?;
        let df_l2 = (0..space.mesh().n_elements())
            .flat_map(|e| space.element_points(e, &rule))
            .map(|(x, w)| w * df(x).powi(2))
            .sum::<f64>()
            .sqrt();
        let bound = df_l2 / measured.gamma_h;
        rows.push(StabilityRow {
            amplitude: eps,
            df_l2,
            du_triple,
            ratio: if df_l2 > 0.0 { du_triple / df_l2 } else { 0.0 },
            bound,
            holds: du_triple <= bound * (1.0 + 1e-6),
        });
    }
    Ok(StabilityReport { measured, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub dofs: usize,
    pub l2: f64,
    pub h1: f64,
    /// Smallest diagonal entry of the Cholesky factor.
    pub min_pivot: f64,
    /// Nodal values on the `(nx p + 1) x (ny p + 1)` grid, boundary included.
    pub nodal: Vec<f64>,
}

/// Equispaced Lagrange basis on `[-1, 1]` and its derivative.
fn lagrange_1d(p: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let nodes: Vec<f64> = (0..=p).map(|i| -1.0 + 2.0 * i as f64 / p as f64).collect();
    let mut vals = vec![1.0; p + 1];
    let mut ders = vec![0.0; p + 1];
    for i in 0..=p {
        for j in 0..=p {
            if j == i {
                continue;
            }
            let denom = nodes[i] - nodes[j];
            vals[i] *= (t - nodes[j]) / denom;
            let mut term = 1.0 / denom;
            for m in 0..=p {
                if m != i && m != j {
                    term *= (t - nodes[m]) / (nodes[i] - nodes[m]);
                }
            }
            ders[i] += term;
        }
    }
    (vals, ders)
}

/// Conforming `Q_p` solve of `∫ K∇w·∇v + wv = ∫ f v` with `w = 0` imposed
/// strongly on the boundary.
pub fn solve_cg_reference(
    case: &ManufacturedCase,
    mesh: &Arc<Mesh>,
    p: usize,
    f: &dyn Fn(Point) -> f64,
) -> Result<CgReport> {
    if p < 1 {
        return Err(DgError::InvalidInput("conforming reference needs p >= 1".into()));
    }
    case.check_mesh(mesh)?;
    let space = BrokenSpace::new(Arc::clone(mesh), Degrees::Uniform(p))?;
    let k = CoefficientField::new(&case.coefficient, &space)?;
    let (gx, gy) = (mesh.nx * p + 1, mesh.ny * p + 1);
    let node = |i: usize, j: usize| i + gx * j;
    // Interior unknowns numbered in grid order; boundary nodes get None.
    let mut unknown = vec![None; gx * gy];
    let mut count = 0;
    for j in 1..gy - 1 {
        for i in 1..gx - 1 {
            unknown[node(i, j)] = Some(count);
            count += 1;
        }
    }
    let mut a = DMatrix::zeros(count, count);
    let mut b = DVector::zeros(count);
    let rule = QuadratureRule::new(p + 2);
    let local_nodes = |e: usize| -> Vec<usize> {
        let (ex, ey) = (e % mesh.nx, e / mesh.nx);
        let mut v = Vec::with_capacity((p + 1) * (p + 1));
        for bj in 0..=p {
            for ai in 0..=p {
                v.push(node(ex * p + ai, ey * p + bj));
            }
        }
        v
    };
    let basis = |e: usize, xi: Point| -> (Vec<f64>, Vec<[f64; 2]>) {
        let r = mesh.element(e);
        let (lx, dx) = lagrange_1d(p, xi[0]);
        let (ly, dy) = lagrange_1d(p, xi[1]);
        let (sx, sy) = (2.0 / r.width(), 2.0 / r.height());
        let mut vals = Vec::with_capacity((p + 1) * (p + 1));
        let mut grads = Vec::with_capacity((p + 1) * (p + 1));
        for bj in 0..=p {
            for ai in 0..=p {
                vals.push(lx[ai] * ly[bj]);
                grads.push([dx[ai] * ly[bj] * sx, lx[ai] * dy[bj] * sy]);
            }
        }
        (vals, grads)
    };
    // Row-major element numbering is assumed by `local_nodes`.
    if mesh.ordering != crate::mesh::ElementOrdering::RowMajor {
        return Err(DgError::InvalidInput("conforming reference expects row-major element ordering".into()));
    }
    for e in 0..mesh.n_elements() {
        let r = mesh.element(e);
        let nodes = local_nodes(e);
        let jac = r.area() / 4.0;
        for (xi, w) in &rule.square {
            let x = r.to_physical(*xi);
            let (vals, grads) = basis(e, *xi);
            let (kx, fx, wj) = (k.value(e, x), f(x), w * jac);
            for (ri, &nr) in nodes.iter().enumerate() {
                let Some(row) = unknown[nr] else { continue };
                b[row] += wj * fx * vals[ri];
                for (ci, &nc) in nodes.iter().enumerate() {
                    let Some(col) = unknown[nc] else { continue };
                    a[(row, col)] += wj * (kx * dot(grads[ci], grads[ri]) + vals[ci] * vals[ri]);
                }
            }
        }
    }
    let chol = Cholesky::new(a).ok_or_else(|| {
        DgError::Internal("conforming stiffness + mass matrix is not positive definite".into())
    })?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let w = chol.solve(&b);
    let mut nodal = vec![0.0; gx * gy];
    for (idx, u) in unknown.iter().enumerate() {
        if let Some(i) = u {
            nodal[idx] = w[*i];
        }
    }
    let err_rule = QuadratureRule::new(p + 6);
    let (mut l2, mut h1) = (0.0, 0.0);
    for e in 0..mesh.n_elements() {
        let r = mesh.element(e);
        let nodes = local_nodes(e);
        for (xi, wq) in &err_rule.square {
            let x = r.to_physical(*xi);
            let (vals, grads) = basis(e, *xi);
            let mut v = 0.0;
            let mut g = [0.0, 0.0];
            for (i, &nd) in nodes.iter().enumerate() {
                v += nodal[nd] * vals[i];
                g[0] += nodal[nd] * grads[i][0];
                g[1] += nodal[nd] * grads[i][1];
            }
            let ge = case.exact_grad(x);
            let d = v - case.exact(x);
            let dg = [g[0] - ge[0], g[1] - ge[1]];
            let wj = wq * r.area() / 4.0;
            l2 += wj * d * d;
            h1 += wj * (d * d + dot(dg, dg));
        }
    }
    Ok(CgReport {
        dofs: count,
        l2: l2.sqrt(),
        h1: h1.sqrt(),
        min_pivot,
        nodal,
    })
}
