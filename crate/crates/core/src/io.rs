//! Atomic artifact writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{validation, Error, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Static covariates as `unit,x0,x1,...`, returned with rows in `unit_ids` order.
pub fn load_covariates<R: std::io::Read>(source: R, unit_ids: &[&str]) -> Result<nalgebra::DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
    let header = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    if header.len() < 2 || &header[0] != "unit" {
        return Err(Error::Parse { line: 1, message: "covariate header must be unit,x0,...".into() });
    }
    let p = header.len() - 1;
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != p + 1 {
            return Err(Error::Parse { line, message: format!("expected {} fields, found {}", p + 1, record.len()) });
        }
        let values = (1..=p)
            .map(|k| {
                record[k].parse::<f64>().map_err(|e| Error::Parse { line, message: format!("bad number {:?}: {e}", &record[k]) })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((record[0].to_string(), values));
    }
    let mut x = nalgebra::DMatrix::zeros(unit_ids.len(), p);
    for (i, id) in unit_ids.iter().enumerate() {
        let (_, values) =
            rows.iter().find(|(u, _)| u == id).ok_or_else(|| validation(format!("no covariates for unit {id:?}")))?;
        for (k, v) in values.iter().enumerate() {
            x[(i, k)] = *v;
        }
    }
    Ok(x)
}
