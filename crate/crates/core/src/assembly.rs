//! Assembly of the flux-jump penalized bilinear form `B(u, v)` and the load
//! `L(v) = ∫ f v`.
//!
//! Two independent paths produce the system matrix:
//!
//! * [`assemble_direct`] integrates the form term by term over every element
//!   boundary `∂E` plus the interface average/jump terms.
//! * [`assemble_reduced`] uses the face identities
//!   `Σ_E ∫_∂E v q·μ = ∫_Γ [v q·n] + ∫_∂Ω v q·n` and
//!   `[v w] = <w>[v] + <v>[w]` to collapse everything onto faces.
//!
//! Matrix entries are `B[r][c] = B(phi_c, phi_r)`: rows index the test
//! function, columns the trial function.

use std::io::Write;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rayon::prelude::*;

use crate::coefficient::CoefficientField;
use crate::error::{DgError, Result};
use crate::mesh::{Point, Segment};
use crate::quadrature::QuadratureRule;
use crate::space::{BrokenSpace, DGFunction, Field};

/// Penalty weight `sigma` and the mesh/degree exponents.
///
/// Face penalty `tau = sigma h^lambda / p^zeta`, flux weight in the norm
/// `omega = h^nu / p^theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyParams {
    pub sigma: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub nu: f64,
    pub theta: f64,
    /// Permits `sigma = 0` (the unpenalized comparison mode).
    pub allow_zero_sigma: bool,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        PenaltyParams::flat(1.0)
    }
}

impl PenaltyParams {
    /// All exponents zero.
    pub fn flat(sigma: f64) -> Self {
        PenaltyParams {
            sigma,
            lambda: 0.0,
            zeta: 0.0,
            nu: 0.0,
            theta: 0.0,
            allow_zero_sigma: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("zeta", self.zeta),
            ("nu", self.nu),
            ("theta", self.theta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DgError::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(DgError::Parameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.sigma == 0.0 && !self.allow_zero_sigma {
            return Err(DgError::Parameter(
                "sigma must be > 0 (sigma = 0 requires the comparison mode flag)".into(),
            ));
        }
        Ok(())
    }

    pub fn face_penalty(&self, h: f64, p: usize) -> f64 {
        self.sigma * h.powf(self.lambda) / (p as f64).powf(self.zeta)
    }

    pub fn flux_weight(&self, h: f64, p: usize) -> f64 {
        h.powf(self.nu) / (p as f64).powf(self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssemblyOptions {
    /// Worker threads for element/face loops; 1 runs inline.
    pub threads: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { threads: 1 }
    }
}

/// System matrix, load vector, and (once built) the triple-norm Gram matrix.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: CsrMatrix<f64>,
    pub rhs: Vec<f64>,
    pub gram: Option<CsrMatrix<f64>>,
    pub params: PenaltyParams,
    pub fingerprint: String,
}

/// Dense local contribution scattered to global `rows x cols`.
pub(crate) struct Block {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub data: DMatrix<f64>,
}

impl Block {
    fn square(dofs: Vec<usize>, data: DMatrix<f64>) -> Self {
        Block {
            rows: dofs.clone(),
            cols: dofs,
            data,
        }
    }
}

/// Local blocks are computed (optionally in parallel) and collected in index
/// order, then accumulated sequentially, so the result is bitwise identical
/// for any thread count.
pub(crate) fn compute_blocks<F>(n: usize, threads: usize, f: F) -> Result<Vec<Block>>
where
    F: Fn(usize) -> Block + Send + Sync,
{
    if threads <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DgError::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

pub(crate) fn blocks_to_csr(n: usize, blocks: impl IntoIterator<Item = Block>) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(n, n);
    for b in blocks {
        for (i, &r) in b.rows.iter().enumerate() {
            for (j, &c) in b.cols.iter().enumerate() {
                let v = b.data[(i, j)];
                if v != 0.0 {
                    coo.push(r, c, v);
                }
            }
        }
    }
    CsrMatrix::from(&coo)
}

/// Physical points and weights (with the `ds` factor) along a segment.
pub(crate) fn segment_points(seg: &Segment, rule: &QuadratureRule) -> Vec<(Point, f64)> {
    let half = 0.5 * seg.length();
    rule.line
        .points
        .iter()
        .zip(&rule.line.weights)
        .map(|(&t, &w)| (seg.point(t), w * half))
        .collect()
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `A_E[r][c] = ∫_E K ∇phi_c·∇phi_r + phi_c phi_r`, the local `(·,·)_*` Gram.
pub(crate) fn local_star_gram(
    space: &BrokenSpace,
    k: &CoefficientField,
    e: usize,
    rule: &QuadratureRule,
) -> DMatrix<f64> {
    let n = space.n_local(e);
    let mut a = DMatrix::zeros(n, n);
    for (x, w) in space.element_points(e, rule) {
        let kx = k.value(e, x);
        let b = space.eval_physical(e, x);
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] += w * (kx * dot(b.grads[c], b.grads[r]) + b.values[c] * b.values[r]);
            }
        }
    }
    a
}

/// `F_E[r][c] = ∫_∂E phi_r (K ∇phi_c·μ)`: boundary flux moments.
pub(crate) fn local_flux_moments(
    space: &BrokenSpace,
    k: &CoefficientField,
    e: usize,
    rule: &QuadratureRule,
) -> DMatrix<f64> {
    let n = space.n_local(e);
    let mut f = DMatrix::zeros(n, n);
    for side in space.mesh().element_sides(e) {
        for (x, w) in segment_points(&side, rule) {
            let kx = k.value(e, x);
            let b = space.eval_physical(e, x);
            for r in 0..n {
                for c in 0..n {
                    f[(r, c)] += w * b.values[r] * kx * dot(b.grads[c], side.normal);
                }
            }
        }
    }
    f
}

/// Two-sided traces at one face point, over the concatenated local DOFs
/// `[owner block, neighbor block]`.
pub(crate) struct FacePoint {
    pub weight: f64,
    pub jump_val: Vec<f64>,
    pub avg_val: Vec<f64>,
    pub jump_flux: Vec<f64>,
    pub avg_flux: Vec<f64>,
}

pub(crate) fn interior_face_points(
    space: &BrokenSpace,
    k: &CoefficientField,
    face: usize,
    rule: &QuadratureRule,
) -> (Vec<usize>, Vec<FacePoint>) {
    let f = &space.mesh().interior_faces()[face];
    let (i, j) = (f.owner, f.neighbor);
    let n = f.segment.normal;
    let dofs: Vec<usize> = space.dof_range(i).chain(space.dof_range(j)).collect();
    let ni = space.n_local(i);
    let pts = segment_points(&f.segment, rule)
        .into_iter()
        .map(|(x, w)| {
            let bi = space.eval_physical(i, x);
            let bj = space.eval_physical(j, x);
            let (ki, kj) = (k.value(i, x), k.value(j, x));
            let m = dofs.len();
            let mut fp = FacePoint {
                weight: w,
                jump_val: vec![0.0; m],
                avg_val: vec![0.0; m],
                jump_flux: vec![0.0; m],
                avg_flux: vec![0.0; m],
            };
            for a in 0..ni {
                let q = ki * dot(bi.grads[a], n);
                fp.jump_val[a] = bi.values[a];
                fp.avg_val[a] = 0.5 * bi.values[a];
                fp.jump_flux[a] = q;
                fp.avg_flux[a] = 0.5 * q;
            }
            for a in 0..(m - ni) {
                let q = kj * dot(bj.grads[a], n);
                fp.jump_val[ni + a] = -bj.values[a];
                fp.avg_val[ni + a] = 0.5 * bj.values[a];
                fp.jump_flux[ni + a] = -q;
                fp.avg_flux[ni + a] = 0.5 * q;
            }
            fp
        })
        .collect();
    (dofs, pts)
}

/// `tau ∫_Γ [K∇phi_c·n][K∇phi_r·n]` on one interior face.
pub(crate) fn penalty_block(
    space: &BrokenSpace,
    k: &CoefficientField,
    face: usize,
    rule: &QuadratureRule,
    tau: f64,
) -> Block {
    let (dofs, pts) = interior_face_points(space, k, face, rule);
    let m = dofs.len();
    let mut data = DMatrix::zeros(m, m);
    for fp in &pts {
        for r in 0..m {
            for c in 0..m {
                data[(r, c)] += tau * fp.weight * fp.jump_flux[r] * fp.jump_flux[c];
            }
        }
    }
    Block::square(dofs, data)
}

fn check(space: &BrokenSpace, params: &PenaltyParams) -> Result<f64> {
    params.validate()?;
    Ok(params.face_penalty(space.mesh().h(), space.p()))
}

/// The bilinear form integrated exactly as written: element volume terms,
/// the full `∂E` consistency pair on every element boundary, interface
/// average/jump terms, and the flux-jump penalty.
pub fn assemble_direct(
    space: &BrokenSpace,
    k: &CoefficientField,
    params: &PenaltyParams,
    opts: &AssemblyOptions,
) -> Result<CsrMatrix<f64>> {
    let tau = check(space, params)?;
    let rule = space.quadrature();
    let mesh = space.mesh();
    let ne = mesh.n_elements();
    let nf = mesh.interior_faces().len();

    let elem_blocks = compute_blocks(ne, opts.threads, |e| {
        let a = local_star_gram(space, k, e, rule);
        let f = local_flux_moments(space, k, e, rule);
        // -∫_∂E (v K∇u·μ - u K∇v·μ)
        let data = a - &f + f.transpose();
        Block::square(space.dof_range(e).collect(), data)
    })?;
    let face_blocks = compute_blocks(nf, opts.threads, |face| {
        let (dofs, pts) = interior_face_points(space, k, face, rule);
        let m = dofs.len();
        let mut data = DMatrix::zeros(m, m);
        for fp in &pts {
            for r in 0..m {
                for c in 0..m {
                    // <v>[K∇u·n] - <u>[K∇v·n] + tau [K∇u·n][K∇v·n]
                    data[(r, c)] += fp.weight
                        * (fp.avg_val[r] * fp.jump_flux[c] - fp.avg_val[c] * fp.jump_flux[r]
                            + tau * fp.jump_flux[r] * fp.jump_flux[c]);
                }
            }
        }
        Block::square(dofs, data)
    })?;
    Ok(blocks_to_csr(space.n_dofs(), elem_blocks.into_iter().chain(face_blocks)))
}

/// Face-reduced form: volume terms, `-∫_Γ (<K∇u·n>[v] - <K∇v·n>[u])`,
/// `-∫_∂Ω (v K∇u·μ - u K∇v·μ)`, and the flux-jump penalty.
pub fn assemble_reduced(
    space: &BrokenSpace,
    k: &CoefficientField,
    params: &PenaltyParams,
    opts: &AssemblyOptions,
) -> Result<CsrMatrix<f64>> {
    let tau = check(space, params)?;
    let rule = space.quadrature();
    let mesh = space.mesh();
    let ne = mesh.n_elements();
    let nf = mesh.interior_faces().len();
    let nb = mesh.boundary_faces().len();

    let elem_blocks = compute_blocks(ne, opts.threads, |e| {
        Block::square(space.dof_range(e).collect(), local_star_gram(space, k, e, rule))
    })?;
    let face_blocks = compute_blocks(nf, opts.threads, |face| {
        let (dofs, pts) = interior_face_points(space, k, face, rule);
        let m = dofs.len();
        let mut data = DMatrix::zeros(m, m);
        for fp in &pts {
            for r in 0..m {
                for c in 0..m {
                    data[(r, c)] += fp.weight
                        * (-(fp.avg_flux[c] * fp.jump_val[r] - fp.avg_flux[r] * fp.jump_val[c])
                            + tau * fp.jump_flux[r] * fp.jump_flux[c]);
                }
            }
        }
        Block::square(dofs, data)
    })?;
    let boundary_blocks = compute_blocks(nb, opts.threads, |bf| {
        let face = &mesh.boundary_faces()[bf];
        let e = face.element;
        let n = space.n_local(e);
        let mut data = DMatrix::zeros(n, n);
        for (x, w) in segment_points(&face.segment, rule) {
            let kx = k.value(e, x);
            let b = space.eval_physical(e, x);
            let flux: Vec<f64> = b.grads.iter().map(|g| kx * dot(*g, face.segment.normal)).collect();
            for r in 0..n {
                for c in 0..n {
                    data[(r, c)] -= w * (b.values[r] * flux[c] - b.values[c] * flux[r]);
                }
            }
        }
        Block::square(space.dof_range(e).collect(), data)
    })?;
    Ok(blocks_to_csr(
        space.n_dofs(),
        elem_blocks.into_iter().chain(face_blocks).chain(boundary_blocks),
    ))
}

/// `L(phi_r) = ∫ f phi_r` with the space's quadrature.
pub fn assemble_rhs(space: &BrokenSpace, f: &dyn Fn(Point) -> f64) -> Vec<f64> {
    assemble_rhs_with_rule(space, f, space.quadrature())
}

pub fn assemble_rhs_with_rule(space: &BrokenSpace, f: &dyn Fn(Point) -> f64, rule: &QuadratureRule) -> Vec<f64> {
    let mut rhs = vec![0.0; space.n_dofs()];
    for e in 0..space.mesh().n_elements() {
        let local = &mut rhs[space.dof_range(e)];
        for (x, w) in space.element_points(e, rule) {
            let fx = f(x);
            let b = space.eval_physical(e, x);
            for (r, v) in local.iter_mut().zip(&b.values) {
                *r += w * fx * v;
            }
        }
    }
    rhs
}

/// Matrix-free `B(u, phi_r)` for every basis function, with `u` any field
/// (e.g. an exact solution) sampled at the quadrature points of `rule`.
/// Uses the face-reduced form.
pub fn form_action(
    space: &BrokenSpace,
    k: &CoefficientField,
    params: &PenaltyParams,
    trial: &dyn Field,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    let tau = check(space, params)?;
    let mesh = space.mesh();
    let mut out = vec![0.0; space.n_dofs()];
    for e in 0..mesh.n_elements() {
        let local = &mut out[space.dof_range(e)];
        for (x, w) in space.element_points(e, rule) {
            let kx = k.value(e, x);
            let (u, gu) = trial.value_grad(e, x);
            let b = space.eval_physical(e, x);
            for (r, o) in local.iter_mut().enumerate() {
                *o += w * (kx * dot(gu, b.grads[r]) + u * b.values[r]);
            }
        }
    }
    for f in mesh.interior_faces() {
        let (i, j) = (f.owner, f.neighbor);
        let n = f.segment.normal;
        for (x, w) in segment_points(&f.segment, rule) {
            let (ki, kj) = (k.value(i, x), k.value(j, x));
            let (ui, gi) = trial.value_grad(i, x);
            let (uj, gj) = trial.value_grad(j, x);
            let (qi, qj) = (ki * dot(gi, n), kj * dot(gj, n));
            let u_jump = ui - uj;
            let q_avg = 0.5 * (qi + qj);
            let q_jump = qi - qj;
            for (side, sign, ks) in [(i, 1.0, ki), (j, -1.0, kj)] {
                let b = space.eval_physical(side, x);
                let local = &mut out[space.dof_range(side)];
                for (r, o) in local.iter_mut().enumerate() {
                    let v_jump = sign * b.values[r];
                    let v_flux = ks * dot(b.grads[r], n);
                    let v_flux_avg = 0.5 * v_flux;
                    let v_flux_jump = sign * v_flux;
                    *o += w * (-(q_avg * v_jump - v_flux_avg * u_jump) + tau * q_jump * v_flux_jump);
                }
            }
        }
    }
    for f in mesh.boundary_faces() {
        let e = f.element;
        let mu = f.segment.normal;
        for (x, w) in segment_points(&f.segment, rule) {
            let kx = k.value(e, x);
            let (u, gu) = trial.value_grad(e, x);
            let q = kx * dot(gu, mu);
            let b = space.eval_physical(e, x);
            let local = &mut out[space.dof_range(e)];
            for (r, o) in local.iter_mut().enumerate() {
                *o -= w * (b.values[r] * q - u * kx * dot(b.grads[r], mu));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceRef {
    Interior(usize),
    Boundary(usize),
}

/// `([u], <u>, [K∇u·n], <K∇u·n>)` at one interior-face point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAverage {
    pub jump: f64,
    pub average: f64,
    pub flux_jump: f64,
    pub flux_average: f64,
}

/// Jump and average of `u` at parameter `t ∈ [-1, 1]` along an interior face.
pub fn face_jump_average(u: &DGFunction, k: &CoefficientField, face: FaceRef, t: f64) -> Result<JumpAverage> {
    let mesh = u.space().mesh();
    let idx = match face {
        FaceRef::Interior(i) => i,
        FaceRef::Boundary(b) => {
            return Err(DgError::Contract(format!(
                "jump/average requested on boundary face {b}; only interior faces have two traces"
            )))
        }
    };
    let f = mesh
        .interior_faces()
        .get(idx)
        .ok_or_else(|| DgError::InvalidInput(format!("interior face {idx} out of range")))?;
    let x = f.segment.point(t);
    let n = f.segment.normal;
    let (ui, gi) = u.eval_on(f.owner, x);
    let (uj, gj) = u.eval_on(f.neighbor, x);
    let qi = k.value(f.owner, x) * dot(gi, n);
    let qj = k.value(f.neighbor, x) * dot(gj, n);
    Ok(JumpAverage {
        jump: ui - uj,
        average: 0.5 * (ui + uj),
        flux_jump: qi - qj,
        flux_average: 0.5 * (qi + qj),
    })
}

/// Full system with the reduced-path matrix and `L(v)` for `f`.
pub fn assemble_system(
    space: &BrokenSpace,
    k: &CoefficientField,
    params: &PenaltyParams,
    f: &dyn Fn(Point) -> f64,
    opts: &AssemblyOptions,
) -> Result<AssembledSystem> {
    let matrix = assemble_reduced(space, k, params, opts)?;
    let rhs = assemble_rhs(space, f);
    Ok(AssembledSystem {
        matrix,
        rhs,
        gram: None,
        params: *params,
        fingerprint: fingerprint(space, params),
    })
}

pub fn fingerprint(space: &BrokenSpace, params: &PenaltyParams) -> String {
    let m = space.mesh();
    format!(
        "{}x{}/p{}-{}/n{}/s{}/l{}/z{}/v{}/t{}",
        m.nx,
        m.ny,
        space.p(),
        space.p_max(),
        space.n_dofs(),
        params.sigma,
        params.lambda,
        params.zeta,
        params.nu,
        params.theta
    )
}

pub fn csr_matvec(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for (i, row) in a.row_iter().enumerate() {
        y[i] = row.col_indices().iter().zip(row.values()).map(|(&j, v)| v * x[j]).sum();
    }
    y
}

pub fn csr_to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += *v;
    }
    d
}

/// Triplet dump: header `# rows cols nnz`, then `row col value` per stored
/// entry (zero-based, row-major order, 17 significant digits).
pub fn write_triplets(a: &CsrMatrix<f64>, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# {} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    for (i, j, v) in a.triplet_iter() {
        writeln!(w, "{i} {j} {v:.16e}")?;
    }
    Ok(())
}

/// Vector dump: header `# len`, then `index value`.
pub fn write_vector(v: &[f64], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# {}", v.len())?;
    for (i, x) in v.iter().enumerate() {
        writeln!(w, "{i} {x:.16e}")?;
    }
    Ok(())
}
