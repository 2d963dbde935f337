//! Stability constants: closed-form continuity and inf-sup bounds, the
//! `û = u + β Σ Ψ_E(z_E)` test function, sampled lemma checks, and the
//! measured constants of the `(B, G)` pair.

use nalgebra::Cholesky;
use nalgebra_sparse::CsrMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_reduced, csr_matvec, csr_to_dense, AssemblyOptions, PenaltyParams};
use crate::coefficient::CoefficientField;
use crate::error::{DgError, Result};
use crate::norms::{all_liftings, build_gram};
use crate::output::{num, Csv};
use crate::space::{BrokenSpace, DGFunction};
use std::sync::Arc;

/// Dense spectral computations refuse systems above this size.
pub const DENSE_SPECTRAL_LIMIT: usize = 3000;

/// `ξ₁` as printed in the two corollaries for `|β| = 4/10` at flat
/// exponents. The first disagrees with direct evaluation of the formula.
pub fn printed_xi1_first() -> f64 {
    288f64.sqrt() / 10.0
}

pub fn printed_xi1_second() -> f64 {
    228f64.sqrt() / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub beta: f64,
    pub sigma: f64,
    pub h: f64,
    pub p: usize,
    /// `C = max{1/K0, 1}`.
    pub c: f64,
    /// `M = max{3, C p^θ/h^ν, C p^ζ/(4σh^λ) + 1}`.
    pub m: f64,
    /// `ξ₁ = sqrt(max{2, (1+β)² + 2β² p^θ/h^ν})` at the signed `β`.
    pub xi1: f64,
    /// `ξ₂ = min{1 - 9|β|/4, |β| p^θ/(4h^ν), 1 - |β| - |β| p^ζ/(σh^λ)}`.
    pub xi2: f64,
    pub gamma_lb: f64,
    /// `ξ₁` with `(1+|β|)²` in place of `(1+β)²`.
    pub xi1_abs_beta: f64,
    pub gamma_lb_abs_beta: f64,
    /// `ξ₂ > 0`: the `û` construction gives a positive bound.
    pub xi2_positive: bool,
    /// The lemma argument takes `β < 0`.
    pub beta_negative: bool,
}

impl TheoryConstants {
    pub fn valid(&self) -> bool {
        self.xi2_positive && self.beta_negative && self.sigma > 0.0
    }

    /// True when `ξ₁(|β|)` matches the second printed value and not the
    /// first; only meaningful at the corollary configuration.
    pub fn printed_xi1_discrepancy(&self) -> bool {
        (self.xi1_abs_beta - printed_xi1_second()).abs() <= 1e-12 && (self.xi1_abs_beta - printed_xi1_first()).abs() > 1e-3
    }
}

/// Pure evaluation of the closed-form constants.
pub fn theory_constants(params: &PenaltyParams, h: f64, p: usize, beta: f64, c: f64) -> TheoryConstants {
    let pf = p as f64;
    let b = beta.abs();
    let flux_ratio = pf.powf(params.theta) / h.powf(params.nu);
    let penalty_ratio = pf.powf(params.zeta) / (params.sigma * h.powf(params.lambda));
    let m = 3f64.max(c * flux_ratio).max(c * penalty_ratio / 4.0 + 1.0);
    let xi1 = 2f64.max((1.0 + beta).powi(2) + 2.0 * beta * beta * flux_ratio).sqrt();
    let xi1_abs_beta = 2f64.max((1.0 + b).powi(2) + 2.0 * b * b * flux_ratio).sqrt();
    let xi2 = (1.0 - 2.25 * b).min(b * flux_ratio / 4.0).min(1.0 - b - b * penalty_ratio);
    TheoryConstants {
        beta,
        sigma: params.sigma,
        h,
        p,
        c,
        m,
        xi1,
        xi2,
        gamma_lb: xi2 / xi1,
        xi1_abs_beta,
        gamma_lb_abs_beta: xi2 / xi1_abs_beta,
        xi2_positive: xi2 > 0.0,
        beta_negative: beta < 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredConstants {
    /// Smallest singular value of `L^{-1} B L^{-T}`, `G = L L^T`.
    pub gamma_h: f64,
    /// Largest singular value of the same matrix.
    pub m_h: f64,
    pub dofs: usize,
    pub fingerprint: String,
}

/// Extreme singular values of `B` whitened by the Gram matrix `G`.
pub fn measure_constants(b: &CsrMatrix<f64>, g: &CsrMatrix<f64>, fingerprint: &str) -> Result<MeasuredConstants> {
    let n = b.nrows();
    if n > DENSE_SPECTRAL_LIMIT {
        return Err(DgError::TooLarge {
            dofs: n,
            limit: DENSE_SPECTRAL_LIMIT,
        });
    }
    if b.ncols() != n || g.nrows() != n || g.ncols() != n {
        return Err(DgError::InvalidInput("B and G must be square of equal size".into()));
    }
    let chol = Cholesky::new(csr_to_dense(g))
        .ok_or_else(|| DgError::Internal("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    // X = L^{-1} B, then W^T = L^{-1} X^T.
    let x = l
        .solve_lower_triangular(&csr_to_dense(b))
        .ok_or_else(|| DgError::Internal("singular Cholesky factor".into()))?;
    let wt = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| DgError::Internal("singular Cholesky factor".into()))?;
    let sv = wt.singular_values();
    let gamma_h = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let m_h = sv.iter().copied().fold(0.0, f64::max);
    Ok(MeasuredConstants {
        gamma_h,
        m_h,
        dofs: n,
        fingerprint: fingerprint.to_string(),
    })
}

/// `û = u + β Σ_E Ψ_E(z_E)`.
pub fn build_uhat(u: &DGFunction, k: &CoefficientField, beta: f64) -> Result<DGFunction> {
    if beta == 0.0 {
        return Ok(u.clone());
    }
    Ok(u.axpy(beta, &all_liftings(u, k)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub theory: TheoryConstants,
    pub samples: usize,
    pub seed: u64,
    /// `|||û||| / |||u|||` per sample.
    pub r1: Vec<f64>,
    /// `B(u, û) / |||u|||²` per sample.
    pub r2: Vec<f64>,
    /// Samples with `r1 <= ξ₁ (1 + 1e-9)`.
    pub r1_pass: usize,
    /// Samples with `r2 >= ξ₂ (1 - 1e-9)`.
    pub r2_pass: usize,
}

impl LemmaReport {
    pub fn r1_max(&self) -> f64 {
        self.r1.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn r2_min(&self) -> f64 {
        self.r2.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> Csv {
        let mut t = Csv::new(&[
            "beta", "samples", "seed", "xi1", "r1_max", "r1_pass", "xi2", "r2_min", "r2_pass",
        ]);
        t.push(vec![
            num(self.theory.beta),
            self.samples.to_string(),
            self.seed.to_string(),
            num(self.theory.xi1),
            num(self.r1_max()),
            self.r1_pass.to_string(),
            num(self.theory.xi2),
            num(self.r2_min()),
            self.r2_pass.to_string(),
        ]);
        t
    }
}

fn quad(g: &CsrMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    csr_matvec(g, y).iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Ratios for `n_samples` random coefficient vectors (uniform in
/// `[-1, 1]`, seeded). Failures are counted, not raised.
pub fn lemma_check(
    space: &Arc<BrokenSpace>,
    k: &CoefficientField,
    params: &PenaltyParams,
    beta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LemmaReport> {
    let opts = AssemblyOptions::default();
    let b = assemble_reduced(space, k, params, &opts)?;
    let g = build_gram(space, k, params, &opts)?;
    let theory = theory_constants(params, space.mesh().h(), space.p(), beta, k.continuity_c());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut r1, mut r2) = (Vec::with_capacity(n_samples), Vec::with_capacity(n_samples));
    for _ in 0..n_samples {
        let c: Vec<f64> = (0..space.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = DGFunction::new(Arc::clone(space), c)?;
        let uhat = build_uhat(&u, k, beta)?;
        let nu = quad(&g, &u.coeffs, &u.coeffs);
        // B(u, v) = v^T B u
        r1.push((quad(&g, &uhat.coeffs, &uhat.coeffs) / nu).sqrt());
        r2.push(quad(&b, &uhat.coeffs, &u.coeffs) / nu);
    }
    let r1_pass = r1.iter().filter(|r| **r <= theory.xi1 * (1.0 + 1e-9)).count();
    let r2_pass = r2.iter().filter(|r| **r >= theory.xi2 * (1.0 - 1e-9)).count();
    Ok(LemmaReport {
        theory,
        samples: n_samples,
        seed,
        r1,
        r2,
        r1_pass,
        r2_pass,
    })
}

/// Theory and measured constants for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct InfSupReport {
    pub theory: TheoryConstants,
    pub measured: MeasuredConstants,
}

impl InfSupReport {
    pub fn continuity_holds(&self) -> bool {
        self.measured.m_h <= self.theory.m * (1.0 + 1e-9)
    }
}

pub fn infsup_report(
    space: &BrokenSpace,
    k: &CoefficientField,
    params: &PenaltyParams,
    beta: f64,
    opts: &AssemblyOptions,
) -> Result<InfSupReport> {
    if space.n_dofs() > DENSE_SPECTRAL_LIMIT {
        return Err(DgError::TooLarge {
            dofs: space.n_dofs(),
            limit: DENSE_SPECTRAL_LIMIT,
        });
    }
    let b = assemble_reduced(space, k, params, opts)?;
    let g = build_gram(space, k, params, opts)?;
    let measured = measure_constants(&b, &g, &crate::assembly::fingerprint(space, params))?;
    let theory = theory_constants(params, space.mesh().h(), space.p(), beta, k.continuity_c());
    Ok(InfSupReport { theory, measured })
}

pub const INFSUP_HEADER: [&str; 12] = [
    "fingerprint",
    "dofs",
    "h",
    "gamma_h",
    "m_h",
    "xi1",
    "xi2",
    "gamma_lb",
    "gamma_lb_abs_beta",
    "m_theory",
    "gamma_h_over_gamma_lb",
    "continuity_holds",
];

impl InfSupReport {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.measured.fingerprint.clone(),
            self.measured.dofs.to_string(),
            num(self.theory.h),
            num(self.measured.gamma_h),
            num(self.measured.m_h),
            num(self.theory.xi1),
            num(self.theory.xi2),
            num(self.theory.gamma_lb),
            num(self.theory.gamma_lb_abs_beta),
            num(self.theory.m),
            num(self.measured.gamma_h / self.theory.gamma_lb),
            self.continuity_holds().to_string(),
        ]
    }
}

pub const CONSTANTS_HEADER: [&str; 15] = [
    "beta",
    "sigma",
    "h",
    "p",
    "c",
    "m",
    "xi1",
    "xi2",
    "gamma_lb",
    "xi1_abs_beta",
    "gamma_lb_abs_beta",
    "xi2_positive",
    "beta_negative",
    "printed_xi1_first",
    "printed_xi1_discrepancy",
];

pub fn constants_row(t: &TheoryConstants) -> Vec<String> {
    vec![
        num(t.beta),
        num(t.sigma),
        num(t.h),
        t.p.to_string(),
        num(t.c),
        num(t.m),
        num(t.xi1),
        num(t.xi2),
        num(t.gamma_lb),
        num(t.xi1_abs_beta),
        num(t.gamma_lb_abs_beta),
        t.xi2_positive.to_string(),
        t.beta_negative.to_string(),
        num(printed_xi1_first()),
        t.printed_xi1_discrepancy().to_string(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::CoefficientSpec;
    use crate::mesh::Mesh;
    use crate::norms::triple_norm;
    use crate::space::Degrees;

    fn setup(n: usize, p: usize, kspec: &str) -> (Arc<BrokenSpace>, CoefficientField) {
        let mesh = Arc::new(Mesh::rectangular([0.0, 1.0, 0.0, 1.0], n, n).unwrap());
        let space = Arc::new(BrokenSpace::new(mesh, Degrees::Uniform(p)).unwrap());
        let k = CoefficientField::new(&kspec.parse::<CoefficientSpec>().unwrap(), &space).unwrap();
        (space, k)
    }

    #[test]
    fn corollary_constants() {
        let t = theory_constants(&PenaltyParams::flat(1.0), 0.5, 2, -0.4, 1.0);
        assert!((t.xi2 - 0.1).abs() <= 1e-15);
        assert!((t.xi1 - 2f64.sqrt()).abs() < 1e-15);
        assert!((t.xi1_abs_beta - 2.28f64.sqrt()).abs() < 1e-15);
        assert!((t.gamma_lb_abs_beta - 1.0 / 228f64.sqrt()).abs() < 1e-15);
        assert!(t.printed_xi1_discrepancy());
        assert_eq!(t.m, 3.0);
        assert!(t.valid());
    }

    #[test]
    fn printed_values() {
        assert!((printed_xi1_first() - 1.697056274847714).abs() < 1e-15);
        assert!((printed_xi1_second() - 1.5099668870541498).abs() < 1e-15);
    }

    #[test]
    fn continuity_bound_terms() {
        let mut p = PenaltyParams::flat(0.5);
        // penalty term: C/(4 * 0.5) + 1 = 1.5 for C = 1 -> M = 3
        assert_eq!(theory_constants(&p, 0.5, 2, -0.4, 1.0).m, 3.0);
        // C = 10 lifts the flux term to 10
        assert_eq!(theory_constants(&p, 0.5, 2, -0.4, 10.0).m, 10.0);
        p.nu = 1.0;
        p.theta = 1.0;
        let t = theory_constants(&p, 0.25, 2, -0.4, 1.0);
        assert!((t.m - 8.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_beta_only_flags() {
        let t = theory_constants(&PenaltyParams::flat(1.0), 0.5, 2, -0.9, 1.0);
        assert!(!t.xi2_positive);
        let t = theory_constants(&PenaltyParams::flat(1.0), 0.5, 2, 0.4, 1.0);
        assert!(!t.beta_negative);
    }

    #[test]
    fn theory_is_pure() {
        let a = theory_constants(&PenaltyParams::flat(1.3), 0.3, 3, -0.2, 2.0);
        let b = theory_constants(&PenaltyParams::flat(1.3), 0.3, 3, -0.2, 2.0);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn uhat_trivial_cases() {
        let (s, k) = setup(2, 2, "checkerboard:1,10");
        let u = s.project_l2(|x| x[0] * x[1]);
        assert_eq!(build_uhat(&u, &k, 0.0).unwrap().coeffs, u.coeffs);
        let mut c = vec![0.0; s.n_dofs()];
        c[s.dof_range(1).start] = 2.0;
        let u = DGFunction::new(s.clone(), c).unwrap();
        let uh = build_uhat(&u, &k, -0.4).unwrap();
        for (a, b) in uh.coeffs.iter().zip(&u.coeffs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_element_gamma_positive() {
        let (s, k) = setup(1, 2, "constant:1");
        let r = infsup_report(&s, &k, &PenaltyParams::flat(1.0), -0.4, &AssemblyOptions::default()).unwrap();
        assert!(r.measured.gamma_h > 0.0 && r.measured.gamma_h <= r.measured.m_h);
    }

    #[test]
    fn scaling_invariance() {
        let (s, k) = setup(2, 2, "constant:1");
        let params = PenaltyParams::flat(1.0);
        let opts = AssemblyOptions::default();
        let b = assemble_reduced(&s, &k, &params, &opts).unwrap();
        let g = build_gram(&s, &k, &params, &opts).unwrap();
        let m1 = measure_constants(&b, &g, "").unwrap();
        let m2 = measure_constants(&(&b * 3.0), &(&g * 3.0), "").unwrap();
        assert!((m1.gamma_h - m2.gamma_h).abs() <= 1e-12 * m1.gamma_h);
        assert!((m1.m_h - m2.m_h).abs() <= 1e-12 * m1.m_h);
    }

    #[test]
    fn size_guard() {
        let b = CsrMatrix::<f64>::identity(DENSE_SPECTRAL_LIMIT + 1);
        let err = measure_constants(&b, &b, "").unwrap_err();
        assert!(matches!(err, DgError::TooLarge { .. }));
    }

    #[test]
    fn rayleigh_quotient_within_symmetric_spectrum_at_beta_zero() {
        // B is not symmetric, so c^T B c / c^T G c is bracketed by the
        // spectrum of the whitened symmetric part, which can reach below
        // gamma_h; the upper end is still below M_h.
        let (s, k) = setup(2, 2, "constant:1");
        let params = PenaltyParams::flat(1.0);
        let opts = AssemblyOptions::default();
        let rep = lemma_check(&s, &k, &params, 0.0, 30, 5).unwrap();
        let m = infsup_report(&s, &k, &params, 0.0, &opts).unwrap().measured;
        let b = csr_to_dense(&assemble_reduced(&s, &k, &params, &opts).unwrap());
        let g = csr_to_dense(&build_gram(&s, &k, &params, &opts).unwrap());
        let l = Cholesky::new(g).unwrap().l();
        let sym = 0.5 * (&b + b.transpose());
        let x = l.solve_lower_triangular(&sym).unwrap();
        let w = l.solve_lower_triangular(&x.transpose()).unwrap();
        let ev = nalgebra::SymmetricEigen::new(0.5 * (&w + w.transpose())).eigenvalues;
        let (lo, hi) = (ev.min(), ev.max());
        for (r1, r2) in rep.r1.iter().zip(&rep.r2) {
            assert!((r1 - 1.0).abs() < 1e-12);
            assert!(*r2 >= lo - 1e-12 && *r2 <= hi + 1e-12, "{r2} not in [{lo}, {hi}]");
            assert!(r2.abs() <= m.m_h * (1.0 + 1e-9));
        }
    }

    #[test]
    fn gram_norm_matches_function_norm_for_uhat() {
        let (s, k) = setup(2, 2, "checkerboard:1,10");
        let params = PenaltyParams::flat(1.0);
        let g = build_gram(&s, &k, &params, &AssemblyOptions::default()).unwrap();
        let u = s.project_l2(|x| (3.0 * x[0]).sin() * x[1]);
        let uh = build_uhat(&u, &k, -0.4).unwrap();
        let a = quad(&g, &uh.coeffs, &uh.coeffs).sqrt();
        let b = triple_norm(&uh, &k, &params).unwrap();
        assert!((a - b).abs() <= 1e-10 * b);
    }
}
