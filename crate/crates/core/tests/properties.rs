use std::sync::Arc;

use proptest::prelude::*;

use fluxdg::assembly::{assemble_system, csr_matvec, AssemblyOptions, PenaltyParams};
use fluxdg::coefficient::{CoefficientField, CoefficientSpec};
use fluxdg::mesh::{ElementOrdering, Mesh};
use fluxdg::norms::{broken_norms, build_gram, triple_norm};
use fluxdg::solver::{solve_linear, SolverOptions};
use fluxdg::space::{BrokenSpace, DGFunction, Degrees};

fn setup(n: usize, p: usize, k: &str) -> (Arc<BrokenSpace>, CoefficientField) {
    let mesh = Arc::new(Mesh::rectangular([0.0, 1.0, 0.0, 1.0], n, n).unwrap());
    let s = Arc::new(BrokenSpace::new(mesh, Degrees::Uniform(p)).unwrap());
    let k = CoefficientField::new(&k.parse::<CoefficientSpec>().unwrap(), &s).unwrap();
    (s, k)
}

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn triple_norm_homogeneous(c in coeffs(36), alpha in -5.0f64..5.0) {
        let (s, k) = setup(2, 2, "checkerboard:1,10");
        let params = PenaltyParams::flat(1.0);
        let u = DGFunction::new(s.clone(), c).unwrap();
        let a = triple_norm(&u.scaled(alpha), &k, &params).unwrap();
        let b = alpha.abs() * triple_norm(&u, &k, &params).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
    }

    #[test]
    fn triple_norm_triangle(c in coeffs(36), d in coeffs(36)) {
        let (s, k) = setup(2, 2, "constant:1");
        let params = PenaltyParams::flat(1.0);
        let u = DGFunction::new(s.clone(), c).unwrap();
        let v = DGFunction::new(s.clone(), d).unwrap();
        let sum = triple_norm(&u.axpy(1.0, &v), &k, &params).unwrap();
        prop_assert!(sum <= triple_norm(&u, &k, &params).unwrap() + triple_norm(&v, &k, &params).unwrap() + 1e-10);
    }

    #[test]
    fn triple_norm_dominates_h1(c in coeffs(36), k0 in 0.1f64..3.0) {
        let (s, _) = setup(2, 2, "constant:1");
        let k = CoefficientField::new(&CoefficientSpec::Constant(k0), &s).unwrap();
        let u = DGFunction::new(s.clone(), c).unwrap();
        let (_, h1) = broken_norms(&u);
        let t = triple_norm(&u, &k, &PenaltyParams::flat(1.0)).unwrap();
        prop_assert!(t >= h1 * k0.sqrt().min(1.0) * (1.0 - 1e-12));
    }

    #[test]
    fn gram_matches_norm(c in coeffs(36), sigma in 0.1f64..5.0) {
        let (s, k) = setup(2, 2, "checkerboard:1,10");
        let params = PenaltyParams::flat(sigma);
        let g = build_gram(&s, &k, &params, &AssemblyOptions::default()).unwrap();
        let gc = csr_matvec(&g, &c);
        let quad: f64 = gc.iter().zip(&c).map(|(a, b)| a * b).sum();
        let u = DGFunction::new(s.clone(), c).unwrap();
        let t = triple_norm(&u, &k, &params).unwrap();
        prop_assert!((quad - t * t).abs() <= 1e-10 * t * t);
    }

    #[test]
    fn assembly_thread_count_invariant(threads in 1usize..6) {
        let (s, k) = setup(3, 2, "checkerboard:1,10");
        let params = PenaltyParams::flat(1.0);
        let f = |x: [f64; 2]| x[0] - x[1] * x[1];
        let one = assemble_system(&s, &k, &params, &f, &AssemblyOptions { threads: 1 }).unwrap();
        let many = assemble_system(&s, &k, &params, &f, &AssemblyOptions { threads }).unwrap();
        prop_assert_eq!(one.matrix.values(), many.matrix.values());
        prop_assert_eq!(one.rhs, many.rhs);
    }
}

#[test]
fn reversed_ordering_same_point_values() {
    let f = |x: [f64; 2]| (2.0 * x[0]).exp() * x[1];
    let solve = |ordering| {
        let mesh = Arc::new(Mesh::rectangular_with_ordering([0.0, 2.0, -1.0, 1.0], 3, 4, ordering).unwrap());
        let s = Arc::new(BrokenSpace::new(mesh, Degrees::Uniform(3)).unwrap());
        let k = CoefficientField::new(&"analytic:1+x^2".parse().unwrap(), &s).unwrap();
        let sys = assemble_system(&s, &k, &PenaltyParams::flat(2.0), &f, &AssemblyOptions::default()).unwrap();
        solve_linear(&sys, &s, &SolverOptions::default()).unwrap().0
    };
    let a = solve(ElementOrdering::RowMajor);
    let b = solve(ElementOrdering::Reversed);
    for x in [[0.1, -0.9], [1.3, 0.2], [1.95, 0.95], [0.7, -0.1]] {
        assert!((a.eval(x).unwrap() - b.eval(x).unwrap()).abs() <= 1e-9);
    }
}
