//! CSV ingestion: a header row, float feature columns and, when the last
//! header is `label`, a final integer label column.

use std::path::Path;

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let labeled = headers.iter().next_back().map(str::trim) == Some("label");
    let n_features = headers.len() - usize::from(labeled);
    if n_features == 0 {
        return Err(Error::Format(format!("{}: no feature columns", path.display())));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != headers.len() {
            return Err(Error::Format(format!(
                "{}:{line}: expected {} fields, found {}",
                path.display(),
                headers.len(),
                record.len()
            )));
        }
        for field in record.iter().take(n_features) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("{}:{line}: `{field}` is not a number", path.display()))
            })?;
            data.push(v);
        }
        if labeled {
            let field = record.get(n_features).expect("length checked");
            let l: usize = field.trim().parse().map_err(|_| {
                Error::Format(format!("{}:{line}: label `{field}` is not a class index", path.display()))
            })?;
            labels.push(l);
        }
    }
    let rows = data.len() / n_features;
    if rows == 0 {
        return Err(Error::EmptyData(format!("{} has no rows", path.display())));
    }
    let name = path
        .file_stem()
        .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned());
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(
        Tensor::new(vec![rows, n_features], data)?,
        labeled.then_some(labels),
        num_classes,
        Provenance::new(name, "all", None),
    )
}

/// Writes flattened samples as `x0,x1,...[,label]` with a header row.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = d.features.row_len();
    let mut header: Vec<String> = (0..n).map(|k| format!("x{k}")).collect();
    if d.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..d.len() {
        let mut rec: Vec<String> = d.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(labels) = &d.labels {
            rec.push(labels[i].to_string());
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::codec::write_atomic(path.as_ref(), &bytes)
}
