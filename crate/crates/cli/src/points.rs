use std::path::Path;

use parot::diffengine::{format_f64, Tensor};

use crate::CliError;

/// Points read from a CSV file. Columns named `x0`, `x1`, ... hold
/// coordinates; every other column is carried through untouched.
pub struct PointTable {
    pub extra_headers: Vec<String>,
    pub extra: Vec<Vec<String>>,
    pub points: Tensor,
}

fn coord_index(h: &str) -> Option<usize> {
    h.strip_prefix('x')?.parse().ok()
}

pub fn read_points(path: &Path) -> Result<PointTable, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .clone();
    let mut coord_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| coord_index(h).map(|k| (k, i)))
        .collect();
    coord_cols.sort();
    if coord_cols.is_empty() || coord_cols.iter().enumerate().any(|(j, &(k, _))| j != k) {
        return Err(CliError::Input(format!(
            "{}: expected coordinate columns x0, x1, ...",
            path.display()
        )));
    }
    let extra_cols: Vec<usize> = (0..headers.len()).filter(|i| coord_index(&headers[*i]).is_none()).collect();
    let d = coord_cols.len();
    let mut data = Vec::new();
    let mut extra = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        for &(_, col) in &coord_cols {
            let cell = &record[col];
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Input(format!("{}: row {}: {cell:?} is not a number", path.display(), line + 2))
            })?;
            data.push(v);
        }
        extra.push(extra_cols.iter().map(|&c| record[c].to_string()).collect());
    }
    if extra.is_empty() {
        return Err(CliError::Input(format!("{}: no rows", path.display())));
    }
    let points = Tensor::new(vec![extra.len(), d], data).map_err(parot::Error::from)?;
    Ok(PointTable {
        extra_headers: extra_cols.iter().map(|&c| headers[c].to_string()).collect(),
        extra,
        points,
    })
}

/// Writes carried-through columns, then coordinates, then `tail` columns.
pub fn write_points(
    path: &Path,
    extra_headers: &[String],
    extra: &[Vec<String>],
    points: &Tensor,
    tail: &[(&str, Vec<String>)],
) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    let d = points.shape()[1];
    let mut header: Vec<String> = extra_headers.to_vec();
    header.extend((0..d).map(|k| format!("x{k}")));
    header.extend(tail.iter().map(|(h, _)| h.to_string()));
    writer.write_record(&header).map_err(|e| CliError::Output(e.to_string()))?;
    for r in 0..points.rows() {
        let mut row: Vec<String> = extra.get(r).cloned().unwrap_or_default();
        row.extend(points.row(r).iter().map(|&v| format_f64(v)));
        row.extend(tail.iter().map(|(_, col)| col[r].clone()));
        writer.write_record(&row).map_err(|e| CliError::Output(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
