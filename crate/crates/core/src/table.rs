//! The `index,cluster,y1,y2` embedding CSV shared by every embedder.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Point2;

/// Planar coordinates tagged with the row index they came from and a
/// cluster (or class) label; -1 marks noise or "no label".
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub index: Vec<usize>,
    pub cluster: Vec<i64>,
    pub coords: Vec<Point2>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("index,cluster,y1,y2\n");
        for ((i, c), y) in self.index.iter().zip(&self.cluster).zip(&self.coords) {
            writeln!(out, "{i},{c},{:?},{:?}", y[0], y[1]).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let err = |row: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "index,cluster,y1,y2" => {}
            _ => return Err(err(1, "expected header 'index,cluster,y1,y2'".into())),
        }
        let mut table = EmbeddingTable {
            index: Vec::new(),
            cluster: Vec::new(),
            coords: Vec::new(),
        };
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = line_no + 1;
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 4 {
                return Err(err(row, format!("expected 4 fields, found {}", cells.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(row, format!("bad coordinate '{s}'")))
            };
            table.index.push(cells[0].parse().map_err(|_| err(row, format!("bad index '{}'", cells[0])))?);
            table.cluster.push(cells[1].parse().map_err(|_| err(row, format!("bad cluster '{}'", cells[1])))?);
            table.coords.push([num(cells[2])?, num(cells[3])?]);
        }
        if table.is_empty() {
            return Err(err(2, "no rows".into()));
        }
        Ok(table)
    }
}
