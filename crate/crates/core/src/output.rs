//! Fixed-format report output: CSV with 17 significant digits and legacy
//! ASCII VTK structured points.

use std::io::Write;

use crate::error::Result;
use crate::space::DGFunction;

/// `x` with 17 significant digits, so the value round-trips exactly.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Small CSV table builder; rows are written in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }

    pub fn to_string_lossy(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV content is UTF-8")
    }
}

/// Samples `u` at cell centres of a uniform `n x n` lattice over the domain
/// and writes a legacy VTK `STRUCTURED_POINTS` file with point data `u`.
pub fn write_vtk(u: &DGFunction, n: usize, mut w: impl Write) -> Result<()> {
    let d = &u.space().mesh().domain;
    let n = n.max(1);
    let (dx, dy) = (d.width() / n as f64, d.height() / n as f64);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "fluxdg solution")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {n} {n} 1")?;
    writeln!(w, "ORIGIN {} {} 0", num(d.x0 + 0.5 * dx), num(d.y0 + 0.5 * dy))?;
    writeln!(w, "SPACING {} {} 1", num(dx), num(dy))?;
    writeln!(w, "POINT_DATA {}", n * n)?;
    writeln!(w, "SCALARS u double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for j in 0..n {
        for i in 0..n {
            let x = [d.x0 + (i as f64 + 0.5) * dx, d.y0 + (j as f64 + 0.5) * dy];
            writeln!(w, "{}", num(u.eval(x).unwrap_or(0.0)))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::space::{BrokenSpace, Degrees};
    use std::sync::Arc;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn csv_layout() {
        let mut t = Csv::new(&["a", "b"]);
        t.push(vec!["1".into(), "2".into()]);
        assert_eq!(t.to_string_lossy(), "a,b\n1,2\n");
    }

    #[test]
    fn vtk_header_and_count() {
        let mesh = Arc::new(Mesh::rectangular([0.0, 1.0, 0.0, 1.0], 2, 2).unwrap());
        let space = Arc::new(BrokenSpace::new(mesh, Degrees::Uniform(2)).unwrap());
        let u = space.project_l2(|x| x[0] + x[1]);
        let mut buf = Vec::new();
        write_vtk(&u, 4, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\n"));
        let values: Vec<f64> = s.lines().skip(10).map(|l| l.parse().unwrap()).collect();
        assert_eq!(values.len(), 16);
        // first sample at (0.125, 0.125)
        assert!((values[0] - 0.25).abs() < 1e-12);
    }
}
