//! Plain-text matrix exchange format.
//!
//! ```text
//! n m
//! a11 a12 ... a1m
//! ...
//! an1 an2 ... anm
//! ```
//!
//! Values are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Matrix;

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix_string(a: &Matrix) -> String {
    let mut out = format!("{} {}\n", a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", format_value(a[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().filter(|l| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("matrix", "missing header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| Error::parse("matrix header", e)))
        .collect::<Result<_>>()?;
    let [n, m] = dims[..] else {
        return Err(Error::parse("matrix header", "expected `n m`"));
    };
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse("matrix", format!("missing row {i}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::parse(format!("matrix row {i}"), e)))
            .collect::<Result<_>>()?;
        if vals.len() != m {
            return Err(Error::parse(
                format!("matrix row {i}"),
                format!("expected {m} values, found {}", vals.len()),
            ));
        }
        for (j, v) in vals.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    if lines.next().is_some() {
        return Err(Error::parse("matrix", "trailing rows"));
    }
    Ok(out)
}

pub fn write_matrix(path: &Path, a: &Matrix) -> Result<()> {
    std::fs::write(path, write_matrix_string(a))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    parse_matrix(&std::fs::read_to_string(path)?)
}
