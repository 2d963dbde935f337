//! Gauss-Legendre rules and Legendre polynomial tabulation on `[-1, 1]`.

use std::f64::consts::PI;

/// Values `P_0(x) .. P_n(x)` and derivatives, by the three-term recurrence.
pub fn legendre_table(n: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
        dp[1] = 1.0;
    }
    for k in 1..n {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        // P'_{k+1} = P'_{k-1} + (2k+1) P_k
        dp[k + 1] = dp[k - 1] + (2.0 * kf + 1.0) * p[k];
    }
    (p, dp)
}

/// `n`-point Gauss-Legendre rule; exact for polynomials of degree `2n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one point");
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_table(n, x);
                dp = d[n];
                let dx = p[n] / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_table(n, x);
            dp = if d[n] != 0.0 { d[n] } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points[i] = -x;
            points[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            points[n / 2] = 0.0;
        }
        GaussLegendre { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Tensorized element rule plus the matching face (line) rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    pub line: GaussLegendre,
    /// Reference points in `[-1, 1]^2` with weights summing to 4.
    pub square: Vec<([f64; 2], f64)>,
}

impl QuadratureRule {
    pub fn new(order: usize) -> Self {
        let line = GaussLegendre::new(order);
        let mut square = Vec::with_capacity(order * order);
        for (&y, &wy) in line.points.iter().zip(&line.weights) {
            for (&x, &wx) in line.points.iter().zip(&line.weights) {
                square.push(([x, y], wx * wy));
            }
        }
        QuadratureRule {
            order,
            line,
            square,
        }
    }
}
