//! Plain-text matrix and mask files.
//!
//! Matrix: a header line `m n`, then `m` lines of `n` whitespace-separated
//! numbers. Mask: one observed entry per line as `i j value`, zero-indexed.
//! In both formats blank lines and lines starting with `#` are skipped.
//! Line numbers in errors are 1-based.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::nrmse;
use crate::model::{DenseMatrix, ObservationSet};
use crate::solvers::{solve, SolverConfig};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

pub fn parse_matrix(text: &str) -> Result<DenseMatrix> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing 'm n' header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(hline, "header must be 'm n'"));
    }
    let m: usize = parse_num(dims[0], hline, "row count")?;
    let n: usize = parse_num(dims[1], hline, "column count")?;
    if m == 0 || n == 0 {
        return Err(parse_err(hline, "dimensions must be positive"));
    }
    let mut x = DenseMatrix::zeros(m, n);
    let mut rows = 0;
    for (lineno, line) in lines {
        if rows == m {
            return Err(parse_err(lineno, format!("more than {m} rows")));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != n {
            return Err(parse_err(
                lineno,
                format!("expected {n} values, found {}", toks.len()),
            ));
        }
        for (j, tok) in toks.iter().enumerate() {
            let v: f64 = parse_num(tok, lineno, "number")?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value '{tok}'")));
            }
            x[(rows, j)] = v;
        }
        rows += 1;
    }
    if rows != m {
        return Err(parse_err(
            text.lines().count().max(1),
            format!("expected {m} rows, found {rows}"),
        ));
    }
    Ok(x)
}

/// Writes with the shortest round-trip representation of every entry, so
/// reading the text back gives a bit-identical matrix.
pub fn format_matrix(x: &DenseMatrix) -> String {
    let mut out = format!("{} {}\n", x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:?}", x[(i, j)]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_mask(text: &str, shape: (usize, usize)) -> Result<ObservationSet> {
    let (m, n) = shape;
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (lineno, line) in content_lines(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(lineno, "expected 'i j value'"));
        }
        let i: usize = parse_num(toks[0], lineno, "row index")?;
        let j: usize = parse_num(toks[1], lineno, "column index")?;
        let v: f64 = parse_num(toks[2], lineno, "value")?;
        if i >= m || j >= n {
            return Err(parse_err(
                lineno,
                format!("index ({i}, {j}) outside a {m}x{n} matrix"),
            ));
        }
        if !v.is_finite() {
            return Err(parse_err(lineno, "non-finite value"));
        }
        if !seen.insert((i, j)) {
            return Err(parse_err(lineno, format!("duplicate entry ({i}, {j})")));
        }
        entries.push((i, j, v));
    }
    if entries.is_empty() {
        return Err(Error::EmptyObservation);
    }
    ObservationSet::from_entries(shape, entries)
}

pub fn format_mask(omega: &ObservationSet) -> String {
    let mut out = String::new();
    for (&(i, j), v) in omega.indices().iter().zip(omega.values()) {
        let _ = writeln!(out, "{i} {j} {v:?}");
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    parse_matrix(&fs::read_to_string(path)?)
}

pub fn write_matrix(path: &Path, x: &DenseMatrix) -> Result<()> {
    Ok(fs::write(path, format_matrix(x))?)
}

pub fn read_mask(path: &Path, shape: (usize, usize)) -> Result<ObservationSet> {
    parse_mask(&fs::read_to_string(path)?, shape)
}

pub fn write_mask(path: &Path, omega: &ObservationSet) -> Result<()> {
    Ok(fs::write(path, format_mask(omega))?)
}

/// Summary printed by the `solve` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub solver: String,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub observed: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub final_relative_residual: f64,
    /// Error against the matrix file, meaningful when it holds the full
    /// ground truth.
    pub nrmse_vs_input: Option<f64>,
    pub runtime_ms: f64,
}

/// Completes the entries of `mask_path` and writes the estimate to `out`.
/// The matrix file fixes the shape; its values are only used to report an
/// error figure.
pub fn solve_file(
    matrix_path: &Path,
    mask_path: &Path,
    solver: &SolverConfig,
    rank: usize,
    out: &Path,
) -> Result<SolveSummary> {
    let reference = read_matrix(matrix_path)?;
    let omega = read_mask(mask_path, reference.shape())?;
    solver.validate()?;
    let report = solve(solver, &omega, rank)?;
    write_matrix(out, &report.estimate)?;
    Ok(SolveSummary {
        solver: solver.kind().name().to_string(),
        rows: reference.nrows(),
        cols: reference.ncols(),
        rank,
        observed: omega.len(),
        outer_iterations: report.outer_iterations,
        converged: report.converged,
        final_relative_residual: report.final_relative_residual,
        nrmse_vs_input: nrmse(&report.estimate, &reference).ok(),
        runtime_ms: report.runtime_ms,
    })
}
