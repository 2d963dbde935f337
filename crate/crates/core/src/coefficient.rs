//! Diffusion coefficient `K(x)` with certified bounds `0 < K0 <= K <= K1`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{DgError, Result};
use crate::mesh::{Mesh, Point};
use crate::space::BrokenSpace;

/// Closed-form coefficient fields available by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticCoefficient {
    /// `1 + x^2`
    OnePlusXSquared,
}

impl AnalyticCoefficient {
    pub fn eval(&self, x: Point) -> f64 {
        match self {
            AnalyticCoefficient::OnePlusXSquared => 1.0 + x[0] * x[0],
        }
    }

    pub fn grad(&self, x: Point) -> [f64; 2] {
        match self {
            AnalyticCoefficient::OnePlusXSquared => [2.0 * x[0], 0.0],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            AnalyticCoefficient::OnePlusXSquared => "1+x^2",
        }
    }
}

/// Textual coefficient description, e.g. `constant:1`, `checkerboard:1,10`,
/// `quadrants:1,10`, `per_element:1,2,3,4`, `analytic:1+x^2`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSpec {
    Constant(f64),
    /// Alternating by element grid parity; `even` where `ix + iy` is even.
    Checkerboard { even: f64, odd: f64 },
    /// Alternating over the four quadrants of the domain, assigned per
    /// element by centroid.
    Quadrants { even: f64, odd: f64 },
    PerElement(Vec<f64>),
    Analytic(AnalyticCoefficient),
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Constant(1.0)
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| DgError::InvalidInput(format!("bad number '{t}' in coefficient spec")))
        })
        .collect()
}

impl FromStr for CoefficientSpec {
    type Err = DgError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let pair = |rest: &str| -> Result<(f64, f64)> {
            match parse_list(rest)?.as_slice() {
                [a, b] => Ok((*a, *b)),
                _ => Err(DgError::InvalidInput(format!("'{s}' needs exactly two values"))),
            }
        };
        match kind.trim() {
            "constant" => match parse_list(rest)?.as_slice() {
                [v] => Ok(CoefficientSpec::Constant(*v)),
                _ => Err(DgError::InvalidInput(format!("'{s}' needs exactly one value"))),
            },
            "checkerboard" => pair(rest).map(|(even, odd)| CoefficientSpec::Checkerboard { even, odd }),
            "quadrants" => pair(rest).map(|(even, odd)| CoefficientSpec::Quadrants { even, odd }),
            "per_element" => parse_list(rest).map(CoefficientSpec::PerElement),
            "analytic" => match rest.trim() {
                "1+x^2" => Ok(CoefficientSpec::Analytic(AnalyticCoefficient::OnePlusXSquared)),
                other => Err(DgError::InvalidInput(format!("unknown analytic coefficient '{other}'"))),
            },
            other => Err(DgError::InvalidInput(format!("unknown coefficient kind '{other}'"))),
        }
    }
}

impl fmt::Display for CoefficientSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientSpec::Constant(v) => write!(f, "constant:{v}"),
            CoefficientSpec::Checkerboard { even, odd } => write!(f, "checkerboard:{even},{odd}"),
            CoefficientSpec::Quadrants { even, odd } => write!(f, "quadrants:{even},{odd}"),
            CoefficientSpec::PerElement(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "per_element:{}", parts.join(","))
            }
            CoefficientSpec::Analytic(a) => write!(f, "analytic:{}", a.name()),
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Constant(f64),
    PerElement(Arc<Vec<f64>>),
    Analytic(AnalyticCoefficient),
}

#[derive(Debug, Clone)]
pub struct CoefficientField {
    kind: Kind,
    k_min: f64,
    k_max: f64,
}

fn grid_coords(mesh: &Mesh, e: usize) -> (usize, usize) {
    let c = mesh.element(e).centroid();
    let d = &mesh.domain;
    let ix = ((c[0] - d.x0) / d.width() * mesh.nx as f64).floor() as usize;
    let iy = ((c[1] - d.y0) / d.height() * mesh.ny as f64).floor() as usize;
    (ix, iy)
}

impl CoefficientField {
    /// Builds the field and certifies its bounds on every volume and face
    /// quadrature point of `space`.
    pub fn new(spec: &CoefficientSpec, space: &BrokenSpace) -> Result<Self> {
        let mesh = space.mesh();
        let n = mesh.n_elements();
        let kind = match spec {
            CoefficientSpec::Constant(v) => Kind::Constant(*v),
            CoefficientSpec::Checkerboard { even, odd } => Kind::PerElement(Arc::new(
                (0..n)
                    .map(|e| {
                        let (ix, iy) = grid_coords(mesh, e);
                        if (ix + iy) % 2 == 0 {
                            *even
                        } else {
                            *odd
                        }
                    })
                    .collect(),
            )),
            CoefficientSpec::Quadrants { even, odd } => {
                let d = &mesh.domain;
                let mid = d.centroid();
                Kind::PerElement(Arc::new(
                    (0..n)
                        .map(|e| {
                            let c = mesh.element(e).centroid();
                            let qx = usize::from(c[0] > mid[0]);
                            let qy = usize::from(c[1] > mid[1]);
                            if (qx + qy) % 2 == 0 {
                                *even
                            } else {
                                *odd
                            }
                        })
                        .collect(),
                ))
            }
            CoefficientSpec::PerElement(v) => {
                if v.len() != n {
                    return Err(DgError::InvalidInput(format!(
                        "{} coefficient values for {} elements",
                        v.len(),
                        n
                    )));
                }
                Kind::PerElement(Arc::new(v.clone()))
            }
            CoefficientSpec::Analytic(a) => Kind::Analytic(*a),
        };
        let mut field = CoefficientField {
            kind,
            k_min: f64::INFINITY,
            k_max: f64::NEG_INFINITY,
        };
        let rule = space.quadrature();
        for e in 0..n {
            let mut samples: Vec<Point> = space.element_points(e, rule).into_iter().map(|(x, _)| x).collect();
            for side in mesh.element_sides(e) {
                samples.extend(rule.line.points.iter().map(|&t| side.point(t)));
            }
            for x in samples {
                let k = field.value(e, x);
                if !(k.is_finite() && k > 0.0) {
                    return Err(DgError::InvalidCoefficient(format!(
                        "K = {k} at ({}, {}) in element {e}; K must be positive",
                        x[0], x[1]
                    )));
                }
                field.k_min = field.k_min.min(k);
                field.k_max = field.k_max.max(k);
            }
        }
        Ok(field)
    }

    /// `K` on element `e` at `x` (one-sided on element boundaries).
    pub fn value(&self, e: usize, x: Point) -> f64 {
        match &self.kind {
            Kind::Constant(v) => *v,
            Kind::PerElement(v) => v[e],
            Kind::Analytic(a) => a.eval(x),
        }
    }

    /// Certified lower bound `K0`.
    pub fn lower(&self) -> f64 {
        self.k_min
    }

    /// Certified upper bound `K1`.
    pub fn upper(&self) -> f64 {
        self.k_max
    }

    /// `C = max{1/K0, 1}` from the continuity estimate.
    pub fn continuity_c(&self) -> f64 {
        continuity_c(self.k_min)
    }
}

pub fn continuity_c(k0: f64) -> f64 {
    (1.0 / k0).max(1.0)
}
