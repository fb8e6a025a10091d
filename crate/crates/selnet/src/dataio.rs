//! CSV ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use selnet_core::data::{Dataset, Provenance, Targets};
use selnet_core::Tensor;

use crate::error::{Error, Result};

/// A column given by header name or zero-based position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target: Column,
    /// Feature columns; every non-target column when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Column>>,
    #[serde(default = "yes")]
    pub header: bool,
    pub task: TargetKind,
    /// Class count; inferred from the largest label when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
}

fn yes() -> bool {
    true
}

fn resolve(col: &Column, names: &[String]) -> Result<usize> {
    match col {
        Column::Index(i) if *i < names.len() => Ok(*i),
        Column::Index(i) => Err(Error::Schema(format!(
            "column {i} out of range for {} columns",
            names.len()
        ))),
        Column::Name(n) => names
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| Error::Schema(format!("no column named {n:?}"))),
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |e: csv::Error| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Schema(format!("{}: {e}", path.display())),
    };

    let mut names: Vec<String> = if schema.header {
        rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect()
    } else {
        Vec::new()
    };
    let mut records = rdr.records();
    let first = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::EmptyDataset(path.to_path_buf())),
    };
    if names.is_empty() {
        names = (0..first.len()).map(|i| i.to_string()).collect();
    }
    if first.len() != names.len() {
        return Err(Error::Schema(format!(
            "{}: header has {} columns but the first row has {}",
            path.display(),
            names.len(),
            first.len()
        )));
    }
    let target = resolve(&schema.target, &names)?;
    let features: Vec<usize> = match &schema.features {
        Some(cols) => cols.iter().map(|c| resolve(c, &names)).collect::<Result<_>>()?,
        None => (0..names.len()).filter(|&i| i != target).collect(),
    };
    if features.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    if features.contains(&target) {
        return Err(Error::Schema("the target column is also listed as a feature".into()));
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut parse_row = |rec: &csv::StringRecord| -> Result<()> {
        let line = rec.position().map_or(0, |p| p.line());
        let cell = |j: usize| -> Result<f64> {
            let raw = rec.get(j).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    column: names[j].clone(),
                    value: raw.to_owned(),
                })
        };
        for &j in &features {
            x.push(cell(j)?);
        }
        y.push(cell(target)?);
        Ok(())
    };
    parse_row(&first)?;
    for rec in records {
        parse_row(&rec.map_err(csv_err)?)?;
    }

    let m = y.len();
    let targets = match schema.task {
        TargetKind::Regression => Targets::Values(y),
        TargetKind::Classification => {
            let mut labels = Vec::with_capacity(m);
            for (i, v) in y.iter().enumerate() {
                if *v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Schema(format!(
                        "row {}: class label {v} is not a non-negative integer",
                        i + 1
                    )));
                }
                labels.push(*v as usize);
            }
            let classes = schema
                .classes
                .unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1);
            Targets::Classes { labels, classes }
        }
    };
    let mut data = Dataset::new(
        Tensor::matrix(m, features.len(), x)?,
        targets,
        Provenance {
            source: path.display().to_string(),
            ..Provenance::default()
        },
    )?;
    data.feature_names = features.iter().map(|&j| names[j].clone()).collect();
    Ok(data)
}
