//! Datasets as CSV: a header row whose first column is `y`, then covariates.

use std::fs::File;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads a dataset labelled with `site_id`. Rows are numbered by file line,
/// so the first data row is row 2.
pub fn load_csv_with_site(path: &Path, site_id: usize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| csv_err(path, 1, "", e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(csv_err(path, 1, "", "empty file"));
    }
    if &headers[0] != "y" {
        return Err(csv_err(
            path,
            1,
            &headers[0],
            "first column must be named y",
        ));
    }
    if headers.len() < 2 {
        return Err(csv_err(path, 1, "", "no covariate columns"));
    }
    let p = headers.len() - 1;
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(path, row, "", e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(csv_err(
                path,
                row,
                "",
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                csv_err(
                    path,
                    row,
                    &headers[j],
                    format!("cannot parse '{cell}' as a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(csv_err(
                    path,
                    row,
                    &headers[j],
                    format!("non-finite value '{cell}'"),
                ));
            }
            if j == 0 {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(csv_err(path, 2, "", "no data rows"));
    }
    let n = ys.len();
    let x = Array2::from_shape_vec((n, p), xs).expect("row lengths checked");
    Dataset::new(x, Array1::from(ys), site_id)
}

/// Reads a dataset labelled as the target (site 0).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    load_csv_with_site(path, 0)
}

/// Writes `y,x1,...,xp` with 17 significant digits.
pub fn save_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, 0, "", e.to_string()))?;
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    let io = |e: csv::Error| csv_err(path, 0, "", e.to_string());
    w.write_record(&header).map_err(io)?;
    for i in 0..data.n() {
        let mut rec = vec![fmt_real(data.y()[i])];
        rec.extend(data.x().row(i).iter().map(|&v| fmt_real(v)));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
