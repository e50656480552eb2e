//! CSV formats and atomic file output.
//!
//! Floats are written as the shortest decimal that parses back to the same
//! `f64`, so reading a file and writing it again reproduces it byte for byte.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::experiment::ReplicateRecord;
use crate::regressor::Dataset;
use crate::scalar::Real;
use crate::spectrum::format_float;

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut buf = BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<fs::File> {
    Ok(fs::File::open(path)?)
}

/// Coordinate column names: `x` in one dimension, `x1 … xd` otherwise.
pub fn coordinate_headers(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|j| format!("x{j}")).collect()
    }
}

fn parse_float<T: Real>(field: &str, row: usize, column: &str) -> Result<T> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}, column {column}: not a number: {field:?}")))?;
    T::from_f64(v).ok_or_else(|| Error::Parse(format!("row {row}, column {column}: out of range")))
}

/// Number of leading coordinate columns in a header (`x` or `x1, x2, …`).
fn coordinate_columns(headers: &csv::StringRecord) -> Result<usize> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.first() == Some(&"x") {
        return Ok(1);
    }
    let dim = names
        .iter()
        .enumerate()
        .take_while(|(j, h)| **h == format!("x{}", j + 1))
        .count();
    if dim == 0 {
        return Err(Error::Parse(format!(
            "expected coordinate columns x or x1..xd, got header {names:?}"
        )));
    }
    Ok(dim)
}

/// Training data with header `x,y` (or `x1,…,xd,y`).
pub fn read_dataset_csv<T: Real, R: Read>(reader: R) -> Result<Dataset<T>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let dim = coordinate_columns(&headers)?;
    if headers.len() != dim + 1 || headers[dim].trim() != "y" {
        return Err(Error::Parse(format!("expected a final y column, got header {headers:?}")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let x = (0..dim)
            .map(|j| parse_float(&rec[j], i + 1, &headers[j]))
            .collect::<Result<Vec<T>>>()?;
        xs.push(x);
        ys.push(parse_float(&rec[dim], i + 1, "y")?);
    }
    Dataset::new(xs, ys)
}

pub fn write_dataset_csv<T: Real, W: Write>(data: &Dataset<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = coordinate_headers(data.dim());
    header.push("y".into());
    w.write_record(&header)?;
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let mut row: Vec<String> = x.iter().map(|&v| format_float(v)).collect();
        row.push(format_float(*y));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Points with header `x` (or `x1,…,xd`); any further columns are ignored.
pub fn read_points_csv<T: Real, R: Read>(reader: R) -> Result<Vec<Vec<T>>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let dim = coordinate_columns(&headers)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        out.push(
            (0..dim)
                .map(|j| parse_float(&rec[j], i + 1, &headers[j]))
                .collect::<Result<Vec<T>>>()?,
        );
    }
    if out.is_empty() {
        return Err(Error::Parse("no points in input".into()));
    }
    Ok(out)
}

/// Predictions with header `x,y_hat` (or `x1,…,xd,y_hat`).
pub fn write_predictions_csv<T: Real, W: Write>(points: &[Vec<T>], values: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = coordinate_headers(points.first().map_or(1, Vec::len));
    header.push("y_hat".into());
    w.write_record(&header)?;
    for (x, v) in points.iter().zip(values) {
        let mut row: Vec<String> = x.iter().map(|&c| format_float(c)).collect();
        row.push(format_float(*v));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Kernel surface with header `x,y,K`.
pub fn write_kernel_grid_csv<T: Real, W: Write>(rows: &[(T, T, T)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "K"])?;
    for &(x, y, k) in rows {
        w.write_record([format_float(x), format_float(y), format_float(k)])?;
    }
    w.flush()?;
    Ok(())
}

const RECORD_HEADER: [&str; 6] = ["n", "replicate", "err", "lambda", "mu", "seed"];

/// Experiment records with header `n,replicate,err,lambda,mu,seed`; failed
/// fits have an empty `err`.
pub fn write_records_csv<W: Write>(records: &[ReplicateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            r.replicate.to_string(),
            r.err.map(format_float).unwrap_or_default(),
            format_float(r.lambda),
            format_float(r.mu),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<ReplicateRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RECORD_HEADER {
        return Err(Error::Parse(format!(
            "expected header {}, got {headers:?}",
            RECORD_HEADER.join(",")
        )));
    }
    let int = |s: &str, row: usize, col: &str| -> Result<u64> {
        s.parse()
            .map_err(|_| Error::Parse(format!("row {row}, column {col}: not an integer: {s:?}")))
    };
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let row = i + 1;
            Ok(ReplicateRecord {
                n: int(&rec[0], row, "n")? as usize,
                replicate: int(&rec[1], row, "replicate")? as usize,
                err: if rec[2].is_empty() {
                    None
                } else {
                    Some(parse_float(&rec[2], row, "err")?)
                },
                lambda: parse_float(&rec[3], row, "lambda")?,
                mu: parse_float(&rec[4], row, "mu")?,
                seed: int(&rec[5], row, "seed")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_is_byte_identical() {
        let data = Dataset::new(
            vec![vec![0.1], vec![-1.0 / 3.0], vec![1e-300]],
            vec![2.0, std::f64::consts::PI, -0.0],
        )
        .unwrap();
        let mut a = Vec::new();
        write_dataset_csv(&data, &mut a).unwrap();
        let back: Dataset<f64> = read_dataset_csv(a.as_slice()).unwrap();
        assert_eq!(back.xs, data.xs);
        let mut b = Vec::new();
        write_dataset_csv(&back, &mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with("x,y\n"));
    }

    #[test]
    fn multi_dimensional_headers() {
        let csv = "x1,x2,y\n0.5,0.25,1\n-0.5,0,2\n";
        let data: Dataset<f64> = read_dataset_csv(csv.as_bytes()).unwrap();
        assert_eq!(data.dim(), 2);
        let pts: Vec<Vec<f64>> = read_points_csv(csv.as_bytes()).unwrap();
        assert_eq!(pts[1], vec![-0.5, 0.0]);
        assert!(read_dataset_csv::<f64, _>("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_dataset_csv::<f64, _>("x,y\n1,oops\n".as_bytes()).is_err());
    }

    #[test]
    fn records_round_trip() {
        let records = vec![
            ReplicateRecord { n: 10, replicate: 0, err: Some(0.125), lambda: 0.23, mu: 0.43, seed: u64::MAX },
            ReplicateRecord { n: 10, replicate: 1, err: None, lambda: 0.23, mu: 0.43, seed: 7 },
        ];
        let mut a = Vec::new();
        write_records_csv(&records, &mut a).unwrap();
        let back = read_records_csv(a.as_slice()).unwrap();
        assert_eq!(back, records);
        let mut b = Vec::new();
        write_records_csv(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, |w| Ok(w.write_all(b"first")?)).unwrap();
        write_atomic(&path, |w| Ok(w.write_all(b"second")?)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        let failed = write_atomic(&path, |_| Err(Error::Parse("boom".into())));
        assert!(failed.is_err());
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/out.csv"), |_| Ok(())).is_err());
    }
}
