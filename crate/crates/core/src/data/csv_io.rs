//! Generic CSV datasets: header `label,f0,f1,...` for real features or
//! `label,t0,t1,...` for token indices.

use std::path::Path;

use super::{Dataset, Inputs};
use crate::error::{Error, Result};

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(Error::Format(format!(
            "{}: header must start with `label` followed by feature columns",
            path.display()
        )));
    }
    let tokens = match header.get(1).and_then(|h| h.chars().next()) {
        Some('f') => false,
        Some('t') => true,
        _ => {
            return Err(Error::Format(format!(
                "{}: feature columns must be named f0.. or t0..",
                path.display()
            )))
        }
    };
    let width = header.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut ids = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |col: usize| {
            Error::Format(format!(
                "{}: row {}, column {col}: cannot parse `{}`",
                path.display(),
                row + 2,
                record.get(col).unwrap_or("")
            ))
        };
        labels.push(record[0].trim().parse::<usize>().map_err(|_| bad(0))?);
        for col in 1..=width {
            let cell = record.get(col).ok_or_else(|| bad(col))?.trim();
            if tokens {
                ids.push(cell.parse::<usize>().map_err(|_| bad(col))?);
            } else {
                values.push(cell.parse::<f64>().map_err(|_| bad(col))?);
            }
        }
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let inputs = if tokens {
        Inputs::Tokens { length: width, ids }
    } else {
        Inputs::Dense {
            sample_shape: vec![width],
            values,
        }
    };
    Dataset::new(inputs, labels, classes, format!("csv:{}", path.display()))
}

pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let (prefix, width) = match &data.inputs {
        Inputs::Dense { sample_shape, .. } => ("f", sample_shape.iter().product::<usize>()),
        Inputs::Tokens { length, .. } => ("t", *length),
    };
    let mut header = vec!["label".to_string()];
    header.extend((0..width).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (i, y) in data.labels.iter().enumerate() {
        let mut rec = vec![y.to_string()];
        match &data.inputs {
            Inputs::Dense { values, .. } => rec.extend(
                values[i * width..(i + 1) * width]
                    .iter()
                    .map(|v| format!("{v:?}")),
            ),
            Inputs::Tokens { ids, .. } => {
                rec.extend(ids[i * width..(i + 1) * width].iter().map(|v| v.to_string()))
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
