//! Probe tables (CSV) and field snapshots (legacy VTK point clouds, CSV).

use std::io::{self, Write};

use crate::math::Vect;

/// Time series of probe values. Column 0 is time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ProbeTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    /// Values use 17 significant digits, so reading them back is exact.
    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    pub fn read_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty probe table")?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", n + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != columns.len() {
                return Err(format!("row {} has {} values, expected {}", n + 1, row.len(), columns.len()));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

/// Named per-particle data for a snapshot.
#[derive(Debug, Default)]
pub struct Snapshot<'a> {
    pub positions: &'a [Vect],
    pub scalars: Vec<(&'a str, &'a [f64])>,
    pub vectors: Vec<(&'a str, &'a [Vect])>,
}

impl Snapshot<'_> {
    pub fn write_vtk(&self, title: &str, mut out: impl Write) -> io::Result<()> {
        let n = self.positions.len();
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "{}", title.replace('\n', " "))?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET POLYDATA")?;
        writeln!(out, "POINTS {n} double")?;
        for p in self.positions {
            writeln!(out, "{:e} {:e} {:e}", p.x, p.y, p.z)?;
        }
        writeln!(out, "VERTICES {n} {}", 2 * n)?;
        for i in 0..n {
            writeln!(out, "1 {i}")?;
        }
        if self.scalars.is_empty() && self.vectors.is_empty() {
            return Ok(());
        }
        writeln!(out, "POINT_DATA {n}")?;
        for (name, values) in &self.scalars {
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in values.iter() {
                writeln!(out, "{v:e}")?;
            }
        }
        for (name, values) in &self.vectors {
            writeln!(out, "VECTORS {name} double")?;
            for v in values.iter() {
                writeln!(out, "{:e} {:e} {:e}", v.x, v.y, v.z)?;
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        let mut header = vec!["x".to_string(), "y".into(), "z".into()];
        header.extend(self.scalars.iter().map(|(n, _)| n.to_string()));
        for (n, _) in &self.vectors {
            header.extend(["x", "y", "z"].iter().map(|c| format!("{n}_{c}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, p) in self.positions.iter().enumerate() {
            let mut cells = vec![p.x, p.y, p.z];
            cells.extend(self.scalars.iter().map(|(_, v)| v[i]));
            for (_, v) in &self.vectors {
                cells.extend(v[i].iter());
            }
            let cells: Vec<String> = cells.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
