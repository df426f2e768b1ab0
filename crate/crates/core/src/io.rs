//! Plain-text matrix format used across the toolkit.
//!
//! Line 1 holds `m n` (ASCII decimals, space separated), followed by `m`
//! lines of `n` space-separated reals. Lines starting with `#` are comments
//! and may appear anywhere. Vectors use the same format with `n = 1`.
//! Values are written with Rust's shortest round-trip float formatting, so a
//! written matrix reparses bit-identically.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{CountVector, QueryMatrix};

pub fn write_matrix<W: Write>(out: &mut W, m: &QueryMatrix, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{} {}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let mut line = String::new();
        for j in 0..m.cols() {
            if j > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{}", m.entry(i, j)));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(input: R) -> Result<QueryMatrix> {
    let mut lines = input
        .lines()
        .collect::<std::io::Result<Vec<String>>>()?
        .into_iter()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());

    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing size header".into()))?;
    let mut parts = header.split_whitespace();
    let m: usize = parse_field(parts.next(), "row count")?;
    let n: usize = parse_field(parts.next(), "column count")?;
    if parts.next().is_some() {
        return Err(Error::Parse("size header has trailing fields".into()));
    }
    if m == 0 || n == 0 {
        return Err(Error::EmptyMatrix);
    }

    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("expected {m} data rows, found {i}")))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad real '{t}' on data row {i}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::Parse(format!(
                "data row {i} has {} fields, expected {n}",
                row.len()
            )));
        }
        data.extend(row);
    }
    QueryMatrix::new(DMatrix::from_row_slice(m, n, &data))
}

pub fn write_vector<W: Write>(out: &mut W, v: &CountVector, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{} 1", v.len())?;
    for x in v.iter() {
        writeln!(out, "{x}")?;
    }
    Ok(())
}

pub fn read_vector<R: BufRead>(input: R) -> Result<CountVector> {
    let m = read_matrix(input)?;
    if m.cols() != 1 {
        return Err(Error::Parse(format!(
            "expected a vector (one column), got {} columns",
            m.cols()
        )));
    }
    CountVector::new((0..m.rows()).map(|i| m.entry(i, 0)).collect())
}

pub fn load_matrix(path: &Path) -> Result<QueryMatrix> {
    let file = File::open(path)?;
    Ok(read_matrix(BufReader::new(file))?.with_label(format!("file:{}", path.display())))
}

pub fn save_matrix(path: &Path, m: &QueryMatrix, comments: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_matrix(&mut out, m, comments)
}

pub fn load_vector(path: &Path) -> Result<CountVector> {
    let file = File::open(path)?;
    read_vector(BufReader::new(file))
}

fn parse_field(field: Option<&str>, what: &str) -> Result<usize> {
    field
        .ok_or_else(|| Error::Parse(format!("missing {what}")))?
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("bad {what}")))
}
