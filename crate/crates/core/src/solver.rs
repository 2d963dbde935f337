//! Linear solves and the end-to-end discrete problem pipeline.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::assembly::{assemble_system, csr_matvec, csr_to_dense, AssembledSystem, AssemblyOptions, PenaltyParams};
use crate::coefficient::{CoefficientField, CoefficientSpec};
use crate::error::{DgError, Result};
use crate::mesh::{ElementOrdering, Mesh, Point};
use crate::norms::{broken_norms, error_norms, triple_norm, ErrorNorms};
use crate::quadrature::QuadratureRule;
use crate::space::{BrokenSpace, DGFunction, Degrees};
use crate::study::{manufactured, CaseId, ManufacturedCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMethod {
    /// Dense LU up to `dense_limit` DOFs, GMRES above.
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: SolveMethod,
    pub tol: f64,
    pub restart: usize,
    pub max_iterations: usize,
    pub dense_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: SolveMethod::Auto,
            tol: 1e-10,
            restart: 60,
            max_iterations: 50_000,
            dense_limit: 5_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodUsed {
    Direct,
    Iterative,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub method: MethodUsed,
    /// `‖Bc - b‖₂ / ‖b‖₂` (0 for `b = 0`).
    pub relative_residual: f64,
    pub iterations: Option<usize>,
    pub wall_time: Duration,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_residual(a: &CsrMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
    let bn = norm2(b);
    let ax = csr_matvec(a, x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    if bn > 0.0 {
        norm2(&r) / bn
    } else {
        norm2(&r)
    }
}

/// Dense LU with up to two steps of iterative refinement.
pub fn solve_dense(a: &CsrMatrix<f64>, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let dense: DMatrix<f64> = csr_to_dense(a);
    let lu = dense.lu();
    let rhs = DVector::from_column_slice(b);
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| DgError::SolverFailure {
            message: "singular matrix in LU factorization".into(),
            residual_history: vec![],
        })?;
    for _ in 0..2 {
        if relative_residual(a, x.as_slice(), b) <= 0.01 * tol {
            break;
        }
        let ax = csr_matvec(a, x.as_slice());
        let r = DVector::from_iterator(b.len(), b.iter().zip(&ax).map(|(bi, ai)| bi - ai));
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    Ok(x.as_slice().to_vec())
}

/// Restarted GMRES on the Jacobi-scaled system `D^{-1} A x = D^{-1} b`.
/// Returns the solution, total inner iterations, and the true relative
/// residual after each restart cycle.
pub fn gmres(a: &CsrMatrix<f64>, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, usize, Vec<f64>)> {
    let n = b.len();
    let bn = norm2(b);
    if bn == 0.0 {
        return Ok((vec![0.0; n], 0, vec![0.0]));
    }
    let mut diag = vec![1.0; n];
    for (i, row) in a.row_iter().enumerate() {
        if let Some(pos) = row.col_indices().iter().position(|&j| j == i) {
            let d = row.values()[pos];
            if d != 0.0 {
                diag[i] = 1.0 / d;
            }
        }
    }
    let scaled_residual = |x: &[f64]| -> (Vec<f64>, f64) {
        let ax = csr_matvec(a, x);
        let r: Vec<f64> = (0..n).map(|i| b[i] - ax[i]).collect();
        let true_rel = norm2(&r) / bn;
        ((0..n).map(|i| diag[i] * r[i]).collect(), true_rel)
    };
    let m = opts.restart.max(1);
    let mut x = vec![0.0; n];
    let mut history = Vec::new();
    let mut total = 0;
    loop {
        let (r, true_rel) = scaled_residual(&x);
        history.push(true_rel);
        if true_rel <= opts.tol {
            return Ok((x, total, history));
        }
        if total >= opts.max_iterations {
            return Err(DgError::SolverFailure {
                message: format!("GMRES did not converge in {total} iterations"),
                residual_history: history,
            });
        }
        let beta = norm2(&r);
        // Aim the inner loop a bit below the target to absorb the scaling.
        let inner_tol = 0.1 * opts.tol * beta / true_rel;
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut steps = 0;
        for j in 0..m {
            let av = csr_matvec(a, &basis[j]);
            let mut w: Vec<f64> = (0..n).map(|i| diag[i] * av[i]).collect();
            for (i, v) in basis.iter().enumerate() {
                let hij: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                hess[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            let hnext = norm2(&w);
            hess[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                return Err(DgError::SolverFailure {
                    message: "GMRES breakdown: zero Hessenberg column".into(),
                    residual_history: history,
                });
            }
            cs[j] = hess[j][j] / denom;
            sn[j] = hess[j + 1][j] / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            steps = j + 1;
            total += 1;
            if g[j + 1].abs() <= inner_tol || hnext <= 1e-300 || total >= opts.max_iterations {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let s: f64 = (i + 1..steps).map(|k| hess[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            for (xk, vk) in x.iter_mut().zip(v) {
                *xk += yi * vk;
            }
        }
    }
}

/// Solves `B c = b`; fails when the relative residual exceeds the tolerance.
pub fn solve_linear(
    system: &AssembledSystem,
    space: &Arc<BrokenSpace>,
    opts: &SolverOptions,
) -> Result<(DGFunction, SolveReport)> {
    let start = Instant::now();
    let n = system.rhs.len();
    if n != space.n_dofs() || system.matrix.nrows() != n {
        return Err(DgError::InvalidInput("system size does not match the space".into()));
    }
    let use_direct = match opts.method {
        SolveMethod::Direct => true,
        SolveMethod::Iterative => false,
        SolveMethod::Auto => n <= opts.dense_limit,
    };
    let (x, method, iterations) = if use_direct {
        (solve_dense(&system.matrix, &system.rhs, opts.tol)?, MethodUsed::Direct, None)
    } else {
        let (x, it, _) = gmres(&system.matrix, &system.rhs, opts)?;
        (x, MethodUsed::Iterative, Some(it))
    };
    let rel = relative_residual(&system.matrix, &x, &system.rhs);
    if !(rel <= opts.tol) {
        return Err(DgError::SolverFailure {
            message: format!("relative residual {rel:.3e} above tolerance {:.1e}", opts.tol),
            residual_history: vec![rel],
        });
    }
    let report = SolveReport {
        method,
        relative_residual: rel,
        iterations,
        wall_time: start.elapsed(),
    };
    Ok((DGFunction::new(Arc::clone(space), x)?, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    /// `f` derived from a manufactured exact solution; the case fixes `K`.
    Manufactured(CaseId),
    Zero,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbvpConfig {
    pub domain: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    pub ordering: ElementOrdering,
    pub degrees: Degrees,
    pub params: PenaltyParams,
    /// Ignored for manufactured sources, whose case prescribes `K`.
    pub coefficient: CoefficientSpec,
    pub source: Source,
    pub solver: SolverOptions,
    pub threads: usize,
}

impl Default for VbvpConfig {
    fn default() -> Self {
        VbvpConfig {
            domain: [0.0, 1.0, 0.0, 1.0],
            nx: 8,
            ny: 8,
            ordering: ElementOrdering::RowMajor,
            degrees: Degrees::Uniform(2),
            params: PenaltyParams::flat(1.0),
            coefficient: CoefficientSpec::Constant(1.0),
            source: Source::Manufactured(CaseId::A),
            solver: SolverOptions::default(),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    pub triple: f64,
    pub l2: f64,
    pub h1: f64,
    pub errors: Option<ErrorNorms>,
}

pub struct VbvpOutcome {
    pub space: Arc<BrokenSpace>,
    pub coefficient: CoefficientField,
    pub system: AssembledSystem,
    pub solution: DGFunction,
    pub report: SolveReport,
    pub norms: NormReport,
    pub case: Option<ManufacturedCase>,
    pub source: Source,
}

impl VbvpOutcome {
    pub fn source(&self) -> Box<dyn Fn(Point) -> f64 + '_> {
        source_fn(self.case.as_ref(), &self.source)
    }
}

pub(crate) fn source_fn<'a>(case: Option<&'a ManufacturedCase>, source: &Source) -> Box<dyn Fn(Point) -> f64 + 'a> {
    match (source, case) {
        (Source::Manufactured(_), Some(c)) => Box::new(move |x| c.source(x)),
        (Source::Constant(v), _) => {
            let v = *v;
            Box::new(move |_| v)
        }
        _ => Box::new(|_| 0.0),
    }
}

/// Mesh, space, coefficient, assembly, solve, and norms in one go.
pub fn solve_vbvp(config: &VbvpConfig) -> Result<VbvpOutcome> {
    let mesh = Arc::new(Mesh::rectangular_with_ordering(config.domain, config.nx, config.ny, config.ordering)?);
    let space = Arc::new(BrokenSpace::new(mesh, config.degrees.clone())?);
    let case = match config.source {
        Source::Manufactured(id) => {
            let c = manufactured(id);
            c.check_mesh(space.mesh())?;
            Some(c)
        }
        _ => None,
    };
    let kspec = case.as_ref().map_or(&config.coefficient, |c| &c.coefficient);
    let k = CoefficientField::new(kspec, &space)?;
    let opts = AssemblyOptions {
        threads: config.threads,
    };
    let system = {
        let f = source_fn(case.as_ref(), &config.source);
        assemble_system(&space, &k, &config.params, &*f, &opts)?
    };
    let (solution, report) = solve_linear(&system, &space, &config.solver)?;
    let (l2, h1) = broken_norms(&solution);
    let triple = triple_norm(&solution, &k, &config.params)?;
    let errors = match &case {
        Some(c) => Some(error_norms(
            &solution,
            &|x| c.exact(x),
            &|x| c.exact_grad(x),
            &k,
            &config.params,
            &QuadratureRule::new(space.quadrature().order + 4),
        )?),
        None => None,
    };
    Ok(VbvpOutcome {
        space,
        coefficient: k,
        system,
        solution,
        report,
        norms: NormReport { triple, l2, h1, errors },
        case,
        source: config.source,
    })
}
