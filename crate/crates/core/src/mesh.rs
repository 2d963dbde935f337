//! Structured rectangular partitions with oriented face topology.
//!
//! Interior faces always store `owner > neighbor`, and the face normal points
//! from the owner into the neighbor. Jumps are `owner trace - neighbor trace`.

use std::fmt::Write as _;

use crate::error::{DgError, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn centroid(&self) -> Point {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    /// Affine map from the reference square `[-1, 1]^2`.
    pub fn to_physical(&self, xi: Point) -> Point {
        [
            self.x0 + 0.5 * (xi[0] + 1.0) * self.width(),
            self.y0 + 0.5 * (xi[1] + 1.0) * self.height(),
        ]
    }

    pub fn to_reference(&self, x: Point) -> Point {
        [
            2.0 * (x[0] - self.x0) / self.width() - 1.0,
            2.0 * (x[1] - self.y0) / self.height() - 1.0,
        ]
    }

    pub fn contains(&self, x: Point) -> bool {
        x[0] >= self.x0 && x[0] <= self.x1 && x[1] >= self.y0 && x[1] <= self.y1
    }
}

/// A straight edge with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
    pub normal: [f64; 2],
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    /// Point at parameter `t` in `[-1, 1]`.
    pub fn point(&self, t: f64) -> Point {
        let s = 0.5 * (t + 1.0);
        [
            self.start[0] + s * (self.end[0] - self.start[0]),
            self.start[1] + s * (self.end[1] - self.start[1]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorFace {
    /// Element `i` of the jump convention (larger index).
    pub owner: usize,
    /// Element `j` (smaller index).
    pub neighbor: usize,
    /// Unit normal from owner toward neighbor.
    pub segment: Segment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub element: usize,
    /// Outward unit normal.
    pub segment: Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ElementOrdering {
    #[default]
    RowMajor,
    /// Row-major indices reversed: `N - 1 - k`.
    Reversed,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: Rect,
    pub nx: usize,
    pub ny: usize,
    pub ordering: ElementOrdering,
    elements: Vec<Rect>,
    interior_faces: Vec<InteriorFace>,
    boundary_faces: Vec<BoundaryFace>,
    diameters: Vec<f64>,
    h: f64,
}

impl Mesh {
    pub fn rectangular(domain: [f64; 4], nx: usize, ny: usize) -> Result<Mesh> {
        Self::rectangular_with_ordering(domain, nx, ny, ElementOrdering::RowMajor)
    }

    /// `domain` is `[a, b, c, d]` for `(a, b) x (c, d)`.
    pub fn rectangular_with_ordering(
        domain: [f64; 4],
        nx: usize,
        ny: usize,
        ordering: ElementOrdering,
    ) -> Result<Mesh> {
        let [a, b, c, d] = domain;
        if nx == 0 || ny == 0 {
            return Err(DgError::InvalidInput(format!(
                "mesh needs nx >= 1 and ny >= 1, got {nx}x{ny}"
            )));
        }
        if !domain.iter().all(|v| v.is_finite()) || !(b > a) || !(d > c) {
            return Err(DgError::InvalidInput(format!(
                "degenerate domain ({a}, {b}) x ({c}, {d})"
            )));
        }
        let n = nx * ny;
        let index = |ix: usize, iy: usize| -> usize {
            let k = ix + nx * iy;
            match ordering {
                ElementOrdering::RowMajor => k,
                ElementOrdering::Reversed => n - 1 - k,
            }
        };
        let xs: Vec<f64> = (0..=nx).map(|i| a + (b - a) * i as f64 / nx as f64).collect();
        let ys: Vec<f64> = (0..=ny).map(|j| c + (d - c) * j as f64 / ny as f64).collect();

        let mut elements = vec![
            Rect {
                x0: 0.0,
                x1: 0.0,
                y0: 0.0,
                y1: 0.0
            };
            n
        ];
        for iy in 0..ny {
            for ix in 0..nx {
                elements[index(ix, iy)] = Rect {
                    x0: xs[ix],
                    x1: xs[ix + 1],
                    y0: ys[iy],
                    y1: ys[iy + 1],
                };
            }
        }

        let mut interior_faces = Vec::with_capacity((nx - 1) * ny + nx * (ny - 1));
        let mut push_interior = |e_a: usize, e_b: usize, start: Point, end: Point, a_to_b: [f64; 2]| {
            let (owner, neighbor, normal) = if e_a > e_b {
                (e_a, e_b, a_to_b)
            } else {
                (e_b, e_a, [-a_to_b[0], -a_to_b[1]])
            };
            interior_faces.push(InteriorFace {
                owner,
                neighbor,
                segment: Segment { start, end, normal },
            });
        };
        for iy in 0..ny {
            for ix in 0..nx - 1 {
                push_interior(
                    index(ix, iy),
                    index(ix + 1, iy),
                    [xs[ix + 1], ys[iy]],
                    [xs[ix + 1], ys[iy + 1]],
                    [1.0, 0.0],
                );
            }
        }
        for iy in 0..ny - 1 {
            for ix in 0..nx {
                push_interior(
                    index(ix, iy),
                    index(ix, iy + 1),
                    [xs[ix], ys[iy + 1]],
                    [xs[ix + 1], ys[iy + 1]],
                    [0.0, 1.0],
                );
            }
        }

        let mut boundary_faces = Vec::with_capacity(2 * (nx + ny));
        for ix in 0..nx {
            boundary_faces.push(BoundaryFace {
                element: index(ix, 0),
                segment: Segment {
                    start: [xs[ix], c],
                    end: [xs[ix + 1], c],
                    normal: [0.0, -1.0],
                },
            });
        }
        for iy in 0..ny {
            boundary_faces.push(BoundaryFace {
                element: index(nx - 1, iy),
                segment: Segment {
                    start: [b, ys[iy]],
                    end: [b, ys[iy + 1]],
                    normal: [1.0, 0.0],
                },
            });
        }
        for ix in 0..nx {
            boundary_faces.push(BoundaryFace {
                element: index(ix, ny - 1),
                segment: Segment {
                    start: [xs[ix], d],
                    end: [xs[ix + 1], d],
                    normal: [0.0, 1.0],
                },
            });
        }
        for iy in 0..ny {
            boundary_faces.push(BoundaryFace {
                element: index(0, iy),
                segment: Segment {
                    start: [a, ys[iy]],
                    end: [a, ys[iy + 1]],
                    normal: [-1.0, 0.0],
                },
            });
        }

        let diameters: Vec<f64> = elements.iter().map(Rect::diameter).collect();
        let h = diameters.iter().copied().fold(0.0, f64::max);
        Ok(Mesh {
            domain: Rect {
                x0: a,
                x1: b,
                y0: c,
                y1: d,
            },
            nx,
            ny,
            ordering,
            elements,
            interior_faces,
            boundary_faces,
            diameters,
            h,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element(&self, e: usize) -> &Rect {
        &self.elements[e]
    }

    pub fn elements(&self) -> &[Rect] {
        &self.elements
    }

    pub fn interior_faces(&self) -> &[InteriorFace] {
        &self.interior_faces
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    pub fn diameter(&self, e: usize) -> f64 {
        self.diameters[e]
    }

    /// Global mesh size `h = max_E diam(E)`.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// `(h, h_min)`: largest and smallest element diameter.
    pub fn metrics(&self) -> (f64, f64) {
        let h_min = self.diameters.iter().copied().fold(f64::INFINITY, f64::min);
        (self.h, h_min)
    }

    /// The four sides of `e` with outward normals (bottom, right, top, left).
    pub fn element_sides(&self, e: usize) -> [Segment; 4] {
        let r = &self.elements[e];
        [
            Segment {
                start: [r.x0, r.y0],
                end: [r.x1, r.y0],
                normal: [0.0, -1.0],
            },
            Segment {
                start: [r.x1, r.y0],
                end: [r.x1, r.y1],
                normal: [1.0, 0.0],
            },
            Segment {
                start: [r.x0, r.y1],
                end: [r.x1, r.y1],
                normal: [0.0, 1.0],
            },
            Segment {
                start: [r.x0, r.y0],
                end: [r.x0, r.y1],
                normal: [-1.0, 0.0],
            },
        ]
    }

    /// Element containing `x`; points on shared edges go to the element with
    /// the smaller grid coordinates on the upper side.
    pub fn locate(&self, x: Point) -> Option<usize> {
        let dom = &self.domain;
        if !dom.contains(x) {
            return None;
        }
        let fx = (x[0] - dom.x0) / dom.width() * self.nx as f64;
        let fy = (x[1] - dom.y0) / dom.height() * self.ny as f64;
        let ix = (fx.floor() as usize).min(self.nx - 1);
        let iy = (fy.floor() as usize).min(self.ny - 1);
        let k = ix + self.nx * iy;
        Some(match self.ordering {
            ElementOrdering::RowMajor => k,
            ElementOrdering::Reversed => self.n_elements() - 1 - k,
        })
    }

    /// Same mesh with every interior face's owner/neighbor swapped and normal
    /// negated. Breaks the `owner > neighbor` convention on purpose; assembled
    /// operators must not change.
    pub fn with_swapped_orientation(&self) -> Mesh {
        let mut m = self.clone();
        for f in &mut m.interior_faces {
            std::mem::swap(&mut f.owner, &mut f.neighbor);
            f.segment.normal = [-f.segment.normal[0], -f.segment.normal[1]];
        }
        m
    }

    pub fn total_edge_length(&self) -> f64 {
        self.interior_faces
            .iter()
            .map(|f| f.segment.length())
            .chain(self.boundary_faces.iter().map(|f| f.segment.length()))
            .sum()
    }

    /// Plain-text summary report.
    pub fn summary(&self) -> String {
        let (h, h_min) = self.metrics();
        let mut s = String::new();
        let d = &self.domain;
        let _ = writeln!(s, "domain {:.17e} {:.17e} {:.17e} {:.17e}", d.x0, d.x1, d.y0, d.y1);
        let _ = writeln!(s, "grid {} {}", self.nx, self.ny);
        let _ = writeln!(s, "ordering {:?}", self.ordering);
        let _ = writeln!(s, "elements {}", self.n_elements());
        let _ = writeln!(s, "interior_faces {}", self.interior_faces.len());
        let _ = writeln!(s, "boundary_faces {}", self.boundary_faces.len());
        let _ = writeln!(s, "h {h:.17e}");
        let _ = writeln!(s, "h_min {h_min:.17e}");
        s
    }
}
