use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// CSV with a header row of column indices and values at 17 significant digits.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = (0..m.cols()).map(|j| j.to_string()).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV written by [`matrix_to_csv`]. The header row is skipped.
pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::parse("empty CSV matrix"))?;
    let cols = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("CSV row {}: bad number '{field}'", lineno + 1)))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::parse(format!(
                "CSV row {} has {} fields, header has {cols}",
                lineno + 1,
                data.len() - before
            )));
        }
        rows += 1;
    }
    Matrix::new(rows, cols, data).map_err(|e| Error::parse(e.to_string()))
}

/// Binary PGM of a matrix whose entries are intensities in [0, 1].
pub fn pgm_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.data().iter().map(|&v| crate::heatmap::gray_level(v)));
    out
}

pub fn write_pgm_file(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, pgm_bytes(m))?;
    Ok(())
}
