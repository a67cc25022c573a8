//! CSV and JSON artifacts.
//!
//! Numbers are written in shortest round-trip form, so reading a file back
//! reproduces every value bitwise.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cascade::CascadeFactorization;
use crate::error::{Error, Result};
use crate::integral::ControlledPath;
use crate::planar::DiffeoGrid;
use crate::rde::Trajectory;
use crate::rough_path::{RoughPath, TimeGrid};

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse(field: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("line {line}: cannot parse {field:?} as a number")))
}

/// Path of the JSON sidecar that accompanies a CSV file.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(false).from_path(path)?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header plus parsed rows; empty cells become `None`.
fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .map(|f| if f.trim().is_empty() { Ok(None) } else { parse(f, line).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn required(cell: Option<f64>, row: usize, col: &str) -> Result<f64> {
    cell.ok_or_else(|| Error::InvalidParameter(format!("data row {row}: missing value in column {col}")))
}

fn expect_header(found: &[String], expected: &[String], path: &Path) -> Result<()> {
    if found != expected {
        return Err(Error::InvalidParameter(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            found.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughPathMeta {
    pub alpha: f64,
    pub d: usize,
    pub steps: usize,
}

fn rough_header(d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=d).map(|i| format!("X_{i}")));
    for i in 1..=d {
        h.extend((1..=d).map(|j| format!("XX_{i}{j}")));
    }
    h
}

/// Row `n` carries `X_{t_n}` and the step tensor `𝕏_{t_n t_{n+1}}`; the last
/// row leaves the tensor columns empty.
pub fn write_rough_path(rp: &RoughPath, path: &Path) -> Result<()> {
    let d = rp.dim();
    let t = rp.grid().points();
    let rows = (0..rp.len()).map(|n| {
        let mut r = vec![format_f64(t[n])];
        r.extend(rp.value(n).iter().map(|v| format_f64(*v)));
        if n + 1 < rp.len() {
            let a = rp.step_area(n);
            for i in 0..d {
                r.extend((0..d).map(|j| format_f64(a[(i, j)])));
            }
        } else {
            r.extend(std::iter::repeat_n(String::new(), d * d));
        }
        r
    });
    write_rows(path, rough_header(d), rows)?;
    write_json(
        &RoughPathMeta {
            alpha: rp.alpha(),
            d,
            steps: rp.grid().steps(),
        },
        &sidecar_path(path),
    )
}

pub fn read_rough_path(path: &Path) -> Result<RoughPath> {
    let meta: RoughPathMeta = read_json(&sidecar_path(path))?;
    let d = meta.d;
    let (header, rows) = read_rows(path)?;
    expect_header(&header, &rough_header(d), path)?;
    let mut times = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    let mut areas = Vec::with_capacity(rows.len().saturating_sub(1));
    for (n, row) in rows.iter().enumerate() {
        times.push(required(row[0], n + 1, "t")?);
        values.push(DVector::from_iterator(
            d,
            (0..d).map(|i| required(row[1 + i], n + 1, &header[1 + i])).collect::<Result<Vec<_>>>()?,
        ));
        if n + 1 < rows.len() {
            let cells = (0..d * d)
                .map(|k| required(row[1 + d + k], n + 1, &header[1 + d + k]))
                .collect::<Result<Vec<_>>>()?;
            areas.push(DMatrix::from_row_slice(d, d, &cells));
        }
    }
    RoughPath::from_parts(TimeGrid::new(times)?, values, areas, meta.alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledMeta {
    /// Rough-path CSV this path is controlled by.
    pub base: String,
    pub ell: usize,
    pub d: usize,
}

fn controlled_header(ell: usize, d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=ell).map(|i| format!("Y_{i}")));
    for i in 1..=ell {
        h.extend((1..=d).map(|j| format!("Yp_{i}{j}")));
    }
    h
}

/// Writes a vector-valued controlled path; `Yp_ij` is `∂Y^i` along `X^j`.
pub fn write_controlled_path(cp: &ControlledPath<'_>, base_file: &str, path: &Path) -> Result<()> {
    let (ell, cols) = cp.shape();
    if cols != 1 {
        return Err(Error::InvalidParameter(format!(
            "only vector-valued controlled paths serialize to CSV, got {cols} columns"
        )));
    }
    let d = cp.base().dim();
    let t = cp.base().grid().points();
    let rows = (0..cp.len()).map(|n| {
        let mut r = vec![format_f64(t[n])];
        r.extend(cp.value(n).iter().map(|v| format_f64(*v)));
        let der = cp.derivative(n);
        for i in 0..ell {
            r.extend((0..d).map(|j| format_f64(der[j][(i, 0)])));
        }
        r
    });
    write_rows(path, controlled_header(ell, d), rows)?;
    write_json(
        &ControlledMeta {
            base: base_file.to_string(),
            ell,
            d,
        },
        &sidecar_path(path),
    )
}

pub fn read_controlled_path<'a>(path: &Path, base: &'a RoughPath) -> Result<ControlledPath<'a>> {
    let meta: ControlledMeta = read_json(&sidecar_path(path))?;
    let (ell, d) = (meta.ell, meta.d);
    let (header, rows) = read_rows(path)?;
    expect_header(&header, &controlled_header(ell, d), path)?;
    let mut values = Vec::with_capacity(rows.len());
    let mut derivs = Vec::with_capacity(rows.len());
    for (n, row) in rows.iter().enumerate() {
        let cells = row[1..]
            .iter()
            .enumerate()
            .map(|(k, c)| required(*c, n + 1, &header[k + 1]))
            .collect::<Result<Vec<_>>>()?;
        values.push(DVector::from_column_slice(&cells[..ell]));
        derivs.push(DMatrix::from_row_slice(ell, d, &cells[ell..]));
    }
    ControlledPath::from_vectors(base, values, derivs)
}

/// `t, y_1..y_m[, J_11..J_mm]`, Jacobian entries row-major.
pub fn write_trajectory(tr: &Trajectory, path: &Path) -> Result<()> {
    let m = tr.last().len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("y_{i}")));
    if tr.jacobians().is_some() {
        for i in 1..=m {
            header.extend((1..=m).map(|j| format!("J_{i}{j}")));
        }
    }
    let rows = (0..tr.len()).map(|k| {
        let mut r = vec![format_f64(tr.times()[k])];
        r.extend(tr.state(k).iter().map(|v| format_f64(*v)));
        if let Some(js) = tr.jacobians() {
            for i in 0..m {
                r.extend((0..m).map(|j| format_f64(js[k][(i, j)])));
            }
        }
        r
    });
    write_rows(path, header, rows)
}

fn matrix_header(m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 1..=m {
        h.extend((1..=m).map(|j| format!("m_{i}{j}")));
    }
    h
}

/// `t, m_11..m_mm`, entries row-major.
pub fn write_matrix_path(times: &[f64], mats: &[DMatrix<f64>], path: &Path) -> Result<()> {
    if times.len() != mats.len() || mats.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "matrix path samples",
            expected: times.len(),
            found: mats.len(),
        });
    }
    let m = mats[0].nrows();
    let rows = times.iter().zip(mats).map(|(t, a)| {
        let mut r = vec![format_f64(*t)];
        for i in 0..m {
            r.extend((0..m).map(|j| format_f64(a[(i, j)])));
        }
        r
    });
    write_rows(path, matrix_header(m), rows)
}

pub fn read_matrix_path(path: &Path) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
    let (header, rows) = read_rows(path)?;
    let cells = header.len().saturating_sub(1);
    let m = (cells as f64).sqrt().round() as usize;
    expect_header(&header, &matrix_header(m), path)?;
    let mut times = Vec::with_capacity(rows.len());
    let mut mats = Vec::with_capacity(rows.len());
    for (n, row) in rows.iter().enumerate() {
        times.push(required(row[0], n + 1, "t")?);
        let vals = (1..=cells).map(|k| required(row[k], n + 1, &header[k])).collect::<Result<Vec<_>>>()?;
        mats.push(DMatrix::from_row_slice(m, m, &vals));
    }
    Ok((times, mats))
}

/// `x1, x2, eta1, eta2`: label and image point per grid sample.
pub fn write_diffeo_grid(grid: &DiffeoGrid, path: &Path) -> Result<()> {
    let header = ["x1", "x2", "eta1", "eta2"].map(String::from).to_vec();
    let rows = (0..grid.ny).flat_map(|b| {
        (0..grid.nx).map(move |a| {
            let (x, v) = (grid.label(a, b), grid.value(a, b));
            vec![format_f64(x[0]), format_f64(x[1]), format_f64(v[0]), format_f64(v[1])]
        })
    });
    write_rows(path, header, rows)
}

/// Row-major nested arrays.
pub fn matrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidParameter("matrix rows must be non-empty and of equal length".into()));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.iter().flatten().copied()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationManifest {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub block_dims: Vec<usize>,
    /// Matrix-path CSV files, one per factor, relative to the manifest.
    pub factors: Vec<String>,
}

/// Writes `<stem>_factor<i>.csv` per factor and `<stem>.json` into `dir`.
pub fn write_cascade(cf: &CascadeFactorization, dir: &Path, stem: &str) -> Result<PathBuf> {
    let mut files = Vec::with_capacity(cf.k());
    for (i, f) in cf.factors.iter().enumerate() {
        let name = format!("{stem}_factor{}.csv", i + 1);
        write_matrix_path(&cf.times, f, &dir.join(&name))?;
        files.push(name);
    }
    let manifest = FactorizationManifest {
        p: matrix_to_rows(&cf.basis.p),
        block_dims: cf.basis.block_dims.clone(),
        factors: files,
    };
    let out = dir.join(format!("{stem}.json"));
    write_json(&manifest, &out)?;
    Ok(out)
}

pub fn read_factorization_manifest(path: &Path) -> Result<FactorizationManifest> {
    read_json(path)
}

pub fn write_json_file<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_json(value, path)
}
