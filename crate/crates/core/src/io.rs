//! CSV input and output for point clouds, dense matrices and observations.
//!
//! Readers skip blank lines and lines starting with `#`, accept an optional
//! header row, and report malformed rows with their line number.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::{IndexPair, ObservationSet};
use crate::error::{EdgError, Result};
use crate::geometry::PointCloud;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

fn parse_error(source_name: &str, line: u64, message: impl Into<String>) -> EdgError {
    EdgError::Parse {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

fn csv_error(source_name: &str, err: csv::Error) -> EdgError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => EdgError::Io(e),
        other => parse_error(source_name, line, format!("{other:?}")),
    }
}

/// Numeric rows of a CSV stream with their line numbers. A first row that
/// does not parse as numbers is treated as a header and skipped.
fn numeric_rows<R: Read>(input: R, source_name: &str) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (k, record) in reader(input).records().enumerate() {
        let record = record.map_err(|e| csv_error(source_name, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => {
                if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                    return Err(parse_error(source_name, line, format!("column {} is not finite", col + 1)));
                }
                rows.push((line, values));
            }
            Err(_) if k == 0 => continue,
            Err(e) => {
                let field = record.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or("");
                return Err(parse_error(source_name, line, format!("cannot parse {field:?} as a number: {e}")));
            }
        }
    }
    Ok(rows)
}

fn rectangular(rows: Vec<(u64, Vec<f64>)>, source_name: &str) -> Result<DMatrix<f64>> {
    let Some((_, first)) = rows.first() else {
        return Err(parse_error(source_name, 0, "no data rows"));
    };
    let cols = first.len();
    for (line, row) in &rows {
        if row.len() != cols {
            return Err(parse_error(
                source_name,
                *line,
                format!("expected {cols} columns, found {}", row.len()),
            ));
        }
    }
    let flat: Vec<f64> = rows.into_iter().flat_map(|(_, r)| r).collect();
    Ok(DMatrix::from_row_slice(flat.len() / cols, cols, &flat))
}

/// One point per row, one coordinate per column.
pub fn read_points<R: Read>(input: R, source_name: &str) -> Result<PointCloud> {
    PointCloud::new(rectangular(numeric_rows(input, source_name)?, source_name)?)
}

pub fn read_points_file(path: &Path) -> Result<PointCloud> {
    read_points(File::open(path)?, &path.display().to_string())
}

/// A dense matrix, one row per line.
pub fn read_matrix<R: Read>(input: R, source_name: &str) -> Result<DMatrix<f64>> {
    rectangular(numeric_rows(input, source_name)?, source_name)
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(File::open(path)?, &path.display().to_string())
}

/// Rows `i,j,d2` with 1-based indices. Duplicated pairs are kept, and the
/// set is marked as sampled with replacement when any occur. Without `n`
/// the point count is the largest index seen.
pub fn read_observations<R: Read>(
    input: R,
    source_name: &str,
    n: Option<usize>,
) -> Result<ObservationSet> {
    let rows = numeric_rows(input, source_name)?;
    if rows.is_empty() {
        return Err(parse_error(source_name, 0, "no observations"));
    }
    let mut raw = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        if row.len() != 3 {
            return Err(parse_error(source_name, *line, format!("expected 3 columns i,j,d2, found {}", row.len())));
        }
        let index = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(parse_error(source_name, *line, format!("{v} is not a 1-based index")))
            }
        };
        let (i, j) = (index(row[0])?, index(row[1])?);
        if row[2] < 0.0 {
            return Err(parse_error(source_name, *line, format!("negative squared distance {}", row[2])));
        }
        raw.push((*line, i, j, row[2]));
    }
    let max_index = raw.iter().map(|&(_, i, j, _)| i.max(j)).max().unwrap_or(0);
    let n = n.unwrap_or(max_index);
    let mut pairs = Vec::with_capacity(raw.len());
    let mut values = Vec::with_capacity(raw.len());
    for (line, i, j, d2) in raw {
        let pair = IndexPair::from_one_based(i, j, n)
            .map_err(|e| parse_error(source_name, line, e.to_string()))?;
        pairs.push(pair);
        values.push(d2);
    }
    let distinct: HashSet<_> = pairs.iter().collect();
    let with_replacement = distinct.len() < pairs.len();
    ObservationSet::new(n, pairs, values, with_replacement)
}

pub fn read_observations_file(path: &Path, n: Option<usize>) -> Result<ObservationSet> {
    read_observations(File::open(path)?, &path.display().to_string(), n)
}

fn writer<W: Write>(output: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(output)
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn write_err(e: csv::Error) -> EdgError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => EdgError::Io(e),
        other => EdgError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Full round-trip precision (shortest representation that parses back).
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Writes a header `x1,x2,...` and one row per point.
pub fn write_points<W: Write>(output: W, points: &PointCloud) -> Result<()> {
    let mut w = writer(output);
    let header: Vec<String> = (1..=points.dim()).map(|k| format!("x{k}")).collect();
    w.write_record(&header).map_err(write_err)?;
    write_rows(&mut w, points.coords())?;
    flush(w)
}

/// Writes rows without a header.
pub fn write_matrix<W: Write>(output: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(output);
    write_rows(&mut w, m)?;
    flush(w)
}

fn write_rows<W: Write>(w: &mut csv::Writer<W>, m: &DMatrix<f64>) -> Result<()> {
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| fmt(*v))).map_err(write_err)?;
    }
    Ok(())
}

/// Writes `i,j,d2` rows with 1-based indices.
pub fn write_observations<W: Write>(output: W, obs: &ObservationSet) -> Result<()> {
    let mut w = writer(output);
    w.write_record(["i", "j", "d2"]).map_err(write_err)?;
    for (p, v) in obs.pairs().iter().zip(obs.values()) {
        let (i, j) = p.one_based();
        w.write_record([i.to_string(), j.to_string(), fmt(*v)]).map_err(write_err)?;
    }
    flush(w)
}
