//! Element norm `‖·‖_*`, local liftings, the discrete dual flux norm, the
//! triple norm and its Gram matrix, and error norms.
//!
//! The lifting `z_E` of `u` solves, in the local polynomial space of `E`,
//!
//! ```text
//! (z_E, v)_{*,E} = ∫_∂E (K∇u·μ) v ds   for all local v,
//! ```
//!
//! and `‖z_E‖_*` is the dual norm of the boundary flux functional over that
//! same local space. No enrichment is used.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use nalgebra_sparse::CsrMatrix;

use crate::assembly::{
    blocks_to_csr, compute_blocks, local_flux_moments, local_star_gram, penalty_block, segment_points,
    AssemblyOptions, Block, PenaltyParams,
};
use crate::coefficient::CoefficientField;
use crate::error::{DgError, Result};
use crate::mesh::Point;
use crate::quadrature::QuadratureRule;
use crate::space::{BrokenSpace, DGFunction};

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `‖u‖²_* = ∫_E K|∇u|² + u²` on element `e`.
pub fn star_norm_sq(u: &DGFunction, k: &CoefficientField, e: usize) -> f64 {
    let space = u.space();
    space
        .element_points(e, space.quadrature())
        .into_iter()
        .map(|(x, w)| {
            let (v, g) = u.eval_on(e, x);
            w * (k.value(e, x) * dot(g, g) + v * v)
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct LocalLifting {
    pub element: usize,
    /// Coefficients of `z_E` in the local basis of `element`.
    pub coeffs: Vec<f64>,
    /// Boundary flux moments `∫_∂E (K∇u·μ) phi_r` (the right-hand side).
    pub flux_moments: Vec<f64>,
    /// `‖A z - b‖ / ‖b‖` of the local solve (0 when `b = 0`).
    pub residual: f64,
}

impl LocalLifting {
    /// `‖z_E‖_*`, computed as `sqrt(z · b)`.
    pub fn star_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.flux_moments)
            .map(|(z, b)| z * b)
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }
}

fn cholesky(a: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a).ok_or_else(|| DgError::Internal(format!("{what} is not positive definite")))
}

/// `∫_∂E (K∇u·μ) phi_r` for the local basis of `e`.
pub(crate) fn boundary_flux_moments(u: &DGFunction, k: &CoefficientField, e: usize) -> Vec<f64> {
    let space = u.space();
    let mut b = vec![0.0; space.n_local(e)];
    for side in space.mesh().element_sides(e) {
        for (x, w) in segment_points(&side, space.quadrature()) {
            let (_, g) = u.eval_on(e, x);
            let q = k.value(e, x) * dot(g, side.normal);
            let basis = space.eval_physical(e, x);
            for (br, v) in b.iter_mut().zip(&basis.values) {
                *br += w * q * v;
            }
        }
    }
    b
}

/// Solves the local Neumann problem for `z_E`.
pub fn local_lifting(u: &DGFunction, k: &CoefficientField, e: usize) -> Result<LocalLifting> {
    let space = u.space();
    let a = local_star_gram(space, k, e, space.quadrature());
    let b = DVector::from_vec(boundary_flux_moments(u, k, e));
    let chol = cholesky(a.clone(), "local star-norm Gram")?;
    let z = chol.solve(&b);
    let bn = b.norm();
    let residual = if bn > 0.0 { (&a * &z - &b).norm() / bn } else { 0.0 };
    Ok(LocalLifting {
        element: e,
        coeffs: z.as_slice().to_vec(),
        flux_moments: b.as_slice().to_vec(),
        residual,
    })
}

/// Discrete `‖K∇u·μ‖_{H^{-1/2}(∂E)}`, realized as `‖z_E‖_*`.
pub fn dual_norm_flux(u: &DGFunction, k: &CoefficientField, e: usize) -> Result<f64> {
    Ok(local_lifting(u, k, e)?.star_norm())
}

/// `Σ_E Ψ_E(z_E)`: every element's lifting, extended by zero, as one
/// broken function.
pub fn all_liftings(u: &DGFunction, k: &CoefficientField) -> Result<DGFunction> {
    let space = u.space();
    let mut coeffs = vec![0.0; space.n_dofs()];
    for e in 0..space.mesh().n_elements() {
        let z = local_lifting(u, k, e)?;
        coeffs[space.dof_range(e)].copy_from_slice(&z.coeffs);
    }
    DGFunction::new(Arc::clone(space), coeffs)
}

/// `‖[K∇u·n]‖²_{L²(Γ_int)}`.
pub fn flux_jump_sq(u: &DGFunction, k: &CoefficientField) -> f64 {
    let space = u.space();
    let mut s = 0.0;
    for f in space.mesh().interior_faces() {
        let n = f.segment.normal;
        for (x, w) in segment_points(&f.segment, space.quadrature()) {
            let (_, gi) = u.eval_on(f.owner, x);
            let (_, gj) = u.eval_on(f.neighbor, x);
            let jump = k.value(f.owner, x) * dot(gi, n) - k.value(f.neighbor, x) * dot(gj, n);
            s += w * jump * jump;
        }
    }
    s
}

/// Pieces of the squared triple norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleNormParts {
    pub star_sq: f64,
    pub dual_sq: f64,
    pub flux_jump_sq: f64,
    pub omega: f64,
    pub tau: f64,
}

impl TripleNormParts {
    pub fn total_sq(&self) -> f64 {
        self.star_sq + self.omega * self.dual_sq + self.tau * self.flux_jump_sq
    }

    pub fn norm(&self) -> f64 {
        self.total_sq().sqrt()
    }
}

pub fn triple_norm_parts(u: &DGFunction, k: &CoefficientField, params: &PenaltyParams) -> Result<TripleNormParts> {
    let space = u.space();
    let (h, p) = (space.mesh().h(), space.p());
    let mut star_sq = 0.0;
    let mut dual_sq = 0.0;
    for e in 0..space.mesh().n_elements() {
        star_sq += star_norm_sq(u, k, e);
        dual_sq += dual_norm_flux(u, k, e)?.powi(2);
    }
    Ok(TripleNormParts {
        star_sq,
        dual_sq,
        flux_jump_sq: flux_jump_sq(u, k),
        omega: params.flux_weight(h, p),
        tau: params.face_penalty(h, p),
    })
}

/// `|||u|||`, computed from function evaluations and local lifting solves.
pub fn triple_norm(u: &DGFunction, k: &CoefficientField, params: &PenaltyParams) -> Result<f64> {
    Ok(triple_norm_parts(u, k, params)?.norm())
}

/// Gram matrix `G` with `c^T G c = |||v_c|||²`: element blocks
/// `A_E + omega F_E^T A_E^{-1} F_E` plus face penalty blocks.
pub fn build_gram(
    space: &BrokenSpace,
    k: &CoefficientField,
    params: &PenaltyParams,
    opts: &AssemblyOptions,
) -> Result<CsrMatrix<f64>> {
    params.validate()?;
    let (h, p) = (space.mesh().h(), space.p());
    let omega = params.flux_weight(h, p);
    let tau = params.face_penalty(h, p);
    let rule = space.quadrature();
    let mesh = space.mesh();
    let failed = std::sync::atomic::AtomicBool::new(false);
    let elem_blocks = compute_blocks(mesh.n_elements(), opts.threads, |e| {
        let a = local_star_gram(space, k, e, rule);
        let f = local_flux_moments(space, k, e, rule);
        let lifted = match Cholesky::new(a.clone()) {
            Some(ch) => ch.solve(&f),
            None => {
                failed.store(true, std::sync::atomic::Ordering::Relaxed);
                DMatrix::zeros(f.nrows(), f.ncols())
            }
        };
        let mut g = a + omega * (f.transpose() * lifted);
        // Symmetrize away rounding in the lifted block.
        g = 0.5 * (&g + g.transpose());
        Block {
            rows: space.dof_range(e).collect(),
            cols: space.dof_range(e).collect(),
            data: g,
        }
    })?;
    if failed.into_inner() {
        return Err(DgError::Internal("local star-norm Gram is not positive definite".into()));
    }
    let face_blocks = compute_blocks(mesh.interior_faces().len(), opts.threads, |face| {
        penalty_block(space, k, face, rule, tau)
    })?;
    Ok(blocks_to_csr(space.n_dofs(), elem_blocks.into_iter().chain(face_blocks)))
}

/// Broken L² and H¹ norms of a function.
pub fn broken_norms(u: &DGFunction) -> (f64, f64) {
    let space = u.space();
    let (mut l2, mut h1) = (0.0, 0.0);
    for e in 0..space.mesh().n_elements() {
        for (x, w) in space.element_points(e, space.quadrature()) {
            let (v, g) = u.eval_on(e, x);
            l2 += w * v * v;
            h1 += w * (v * v + dot(g, g));
        }
    }
    (l2.sqrt(), h1.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    /// Full broken H¹ norm (`L²` part included).
    pub h1: f64,
    /// Discrete surrogate: `|||u_h - Πu||| + (Σ_E ‖u - Πu‖²_*)^{1/2}`.
    pub triple: f64,
}

/// Errors of `u_h` against an exact solution, by quadrature at `rule`.
///
/// The triple-norm column is a surrogate: exact flux data lives outside the
/// discrete trace space, so the dual-norm part is only taken of
/// `u_h - Πu` (with `Π` the L² projection).
pub fn error_norms(
    u_h: &DGFunction,
    exact: &dyn Fn(Point) -> f64,
    exact_grad: &dyn Fn(Point) -> [f64; 2],
    k: &CoefficientField,
    params: &PenaltyParams,
    rule: &QuadratureRule,
) -> Result<ErrorNorms> {
    let space = u_h.space();
    let proj = space.project_l2(exact);
    let (mut l2, mut h1, mut remainder) = (0.0, 0.0, 0.0);
    for e in 0..space.mesh().n_elements() {
        for (x, w) in space.element_points(e, rule) {
            let (u, gu) = (exact(x), exact_grad(x));
            let (v, gv) = u_h.eval_on(e, x);
            let d = v - u;
            let dg = [gv[0] - gu[0], gv[1] - gu[1]];
            l2 += w * d * d;
            h1 += w * (d * d + dot(dg, dg));
            let (pv, pg) = proj.eval_on(e, x);
            let r = u - pv;
            let rg = [gu[0] - pg[0], gu[1] - pg[1]];
            remainder += w * (k.value(e, x) * dot(rg, rg) + r * r);
        }
    }
    let discrete = u_h.axpy(-1.0, &proj);
    let triple = triple_norm(&discrete, k, params)? + remainder.sqrt();
    Ok(ErrorNorms {
        l2: l2.sqrt(),
        h1: h1.sqrt(),
        triple,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{csr_to_dense, face_jump_average, FaceRef};
    use crate::coefficient::CoefficientSpec;
    use crate::mesh::Mesh;
    use crate::space::Degrees;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(nx: usize, ny: usize, p: usize, kspec: &str) -> (Arc<BrokenSpace>, CoefficientField) {
        let mesh = Arc::new(Mesh::rectangular([0.0, 1.0, 0.0, 1.0], nx, ny).unwrap());
        let space = Arc::new(BrokenSpace::new(mesh, Degrees::Uniform(p)).unwrap());
        let k = CoefficientField::new(&kspec.parse::<CoefficientSpec>().unwrap(), &space).unwrap();
        (space, k)
    }

    fn random_fn(space: &Arc<BrokenSpace>, rng: &mut ChaCha8Rng) -> DGFunction {
        let c = (0..space.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        DGFunction::new(space.clone(), c).unwrap()
    }

    #[test]
    fn star_norm_closed_forms() {
        let (s, k1) = setup(1, 1, 2, "constant:1");
        let one = s.project_l2(|_| 1.0);
        assert!((star_norm_sq(&one, &k1, 0) - 1.0).abs() < 1e-14);
        let x = s.project_l2(|x| x[0]);
        assert!((star_norm_sq(&x, &k1, 0) - 4.0 / 3.0).abs() < 1e-14);
        let k4 = CoefficientField::new(&CoefficientSpec::Constant(4.0), &s).unwrap();
        assert!((star_norm_sq(&x, &k4, 0) - 13.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn lifting_of_constant_is_zero() {
        let (s, k) = setup(2, 2, 2, "checkerboard:1,10");
        let mut c = vec![0.0; s.n_dofs()];
        for e in 0..4 {
            c[s.dof_range(e).start] = 3.0;
        }
        let u = DGFunction::new(s.clone(), c).unwrap();
        for e in 0..4 {
            let z = local_lifting(&u, &k, e).unwrap();
            assert!(z.coeffs.iter().all(|c| c.abs() < 1e-13));
            assert!(dual_norm_flux(&u, &k, e).unwrap() < 1e-12);
        }
    }

    #[test]
    fn lifting_residual_and_homogeneity() {
        let (s, k) = setup(3, 3, 2, "checkerboard:1,10");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_fn(&s, &mut rng);
        let u2 = u.scaled(2.0);
        for e in 0..9 {
            let z = local_lifting(&u, &k, e).unwrap();
            assert!(z.residual < 1e-11);
            let a = dual_norm_flux(&u, &k, e).unwrap();
            let b = dual_norm_flux(&u2, &k, e).unwrap();
            assert!((b - 2.0 * a).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn zero_function_norm() {
        let (s, k) = setup(2, 2, 2, "constant:1");
        let z = DGFunction::zeros(s.clone());
        assert_eq!(triple_norm(&z, &k, &PenaltyParams::flat(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn single_element_triple_norm() {
        let (s, k) = setup(1, 1, 3, "constant:2");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_fn(&s, &mut rng);
        let t = triple_norm(&u, &k, &PenaltyParams::flat(1.0)).unwrap();
        let expected = star_norm_sq(&u, &k, 0) + dual_norm_flux(&u, &k, 0).unwrap().powi(2);
        assert!((t * t - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn triple_norm_dominates_broken_h1() {
        let (s, k) = setup(3, 2, 2, "checkerboard:0.25,4");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = PenaltyParams::flat(1.0);
        for _ in 0..20 {
            let u = random_fn(&s, &mut rng);
            let t = triple_norm(&u, &k, &params).unwrap();
            let (_, h1) = broken_norms(&u);
            assert!(t >= h1 * k.lower().sqrt().min(1.0) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn gram_matches_triple_norm() {
        let (s, k) = setup(3, 3, 2, "checkerboard:1,10");
        let mut params = PenaltyParams::flat(0.5);
        params.nu = 1.0;
        params.theta = 1.0;
        params.lambda = 1.0;
        let g = csr_to_dense(&build_gram(&s, &k, &params, &AssemblyOptions::default()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let u = random_fn(&s, &mut rng);
            let c = DVector::from_vec(u.coeffs.clone());
            let q = c.dot(&(&g * &c));
            let t = triple_norm(&u, &k, &params).unwrap();
            assert!((q - t * t).abs() <= 1e-10 * q, "{q} vs {}", t * t);
        }
        let asym = (&g - g.transpose()).amax();
        assert!(asym <= 1e-13 * g.amax());
        assert!(Cholesky::new(g).is_some());
    }

    #[test]
    fn lifting_sum_places_each_block() {
        let (s, k) = setup(2, 1, 2, "constant:1");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_fn(&s, &mut rng);
        let z = all_liftings(&u, &k).unwrap();
        for e in 0..2 {
            let ze = local_lifting(&u, &k, e).unwrap();
            assert_eq!(z.local(e), ze.coeffs.as_slice());
        }
    }

    #[test]
    fn errors_of_zero_against_sine() {
        let (s, k) = setup(4, 4, 2, "constant:1");
        let zero = DGFunction::zeros(s.clone());
        let u = |x: Point| (PI * x[0]).sin() * (PI * x[1]).sin();
        let g = |x: Point| {
            [
                PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
            ]
        };
        let errs = error_norms(&zero, &u, &g, &k, &PenaltyParams::flat(1.0), &QuadratureRule::new(10)).unwrap();
        assert!((errs.l2 - 0.5).abs() < 1e-12);
        // H¹ seminorm of sin·sin is π/√2.
        assert!((errs.h1 - (0.25 + PI * PI / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn errors_vanish_for_discrete_exact() {
        let (s, k) = setup(2, 2, 2, "constant:1");
        let u = |x: Point| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
        let g = |x: Point| [(1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]), x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1])];
        let uh = s.project_l2(u);
        let errs = error_norms(&uh, &u, &g, &k, &PenaltyParams::flat(1.0), &QuadratureRule::new(8)).unwrap();
        assert!(errs.l2 < 1e-11 && errs.h1 < 1e-11 && errs.triple < 1e-11, "{errs:?}");
    }

    #[test]
    fn flux_jump_matches_pointwise_jumps() {
        let (s, k) = setup(2, 2, 2, "checkerboard:1,10");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_fn(&s, &mut rng);
        let rule = s.quadrature();
        let mut expected = 0.0;
        for (fi, f) in s.mesh().interior_faces().iter().enumerate() {
            for (&t, &w) in rule.line.points.iter().zip(&rule.line.weights) {
                let ja = face_jump_average(&u, &k, FaceRef::Interior(fi), t).unwrap();
                expected += 0.5 * f.segment.length() * w * ja.flux_jump.powi(2);
            }
        }
        assert!((flux_jump_sq(&u, &k) - expected).abs() <= 1e-12 * expected);
    }
}
