use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::SeriesTensor;

/// Column roles of a long-format CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub time_column: String,
    pub variable_column: String,
    /// Attribute columns, target first.
    pub attribute_columns: Vec<String>,
}

impl CsvSchema {
    /// `timestamp, variable_id, attr_0 .. attr_{C-1}` in header order.
    pub fn positional(header: &[String]) -> Result<Self> {
        if header.len() < 3 {
            return Err(Error::Data(format!(
                "header needs timestamp, variable id and >= 1 attribute column, got {header:?}"
            )));
        }
        Ok(CsvSchema {
            time_column: header[0].clone(),
            variable_column: header[1].clone(),
            attribute_columns: header[2..].to_vec(),
        })
    }
}

/// Reads a long-format CSV into a dense `[T, N, C]` series.
///
/// With `schema == None` the header is interpreted positionally. Timestamps
/// are ordered numerically when every one parses as a number, otherwise
/// lexicographically (ISO-8601 sorts correctly). Variables are ordered by id.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&CsvSchema>) -> Result<SeriesTensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => CsvSchema::positional(&header)?,
    };
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column `{name}` not in header {header:?}")))
    };
    let time_idx = col(&schema.time_column)?;
    let var_idx = col(&schema.variable_column)?;
    let attr_idx: Vec<usize> = schema
        .attribute_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    if attr_idx.is_empty() {
        return Err(Error::Data("schema declares no attribute columns".into()));
    }

    // variable -> timestamp -> attribute values
    let mut cells: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let mut values = Vec::with_capacity(attr_idx.len());
        for (&i, name) in attr_idx.iter().zip(&schema.attribute_columns) {
            let raw = field(i);
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                column: name.clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: name.clone(),
                    value: raw.to_string(),
                });
            }
            values.push(v);
        }
        let (t, var) = (field(time_idx).to_string(), field(var_idx).to_string());
        if cells.entry(var.clone()).or_default().insert(t.clone(), values).is_some() {
            return Err(Error::Data(format!(
                "line {line}: duplicate row for variable `{var}` at `{t}`"
            )));
        }
    }
    if cells.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }

    let all_times: BTreeSet<&String> = cells.values().flat_map(|m| m.keys()).collect();
    let ragged: Vec<String> = cells
        .iter()
        .filter(|(_, m)| m.len() != all_times.len())
        .map(|(v, m)| format!("{v} ({} of {} timestamps)", m.len(), all_times.len()))
        .collect();
    if !ragged.is_empty() {
        return Err(Error::Ragged(ragged.join(", ")));
    }

    let mut times: Vec<&String> = all_times.into_iter().collect();
    let numeric: Option<Vec<f64>> = times.iter().map(|t| t.parse::<f64>().ok()).collect();
    if let Some(keys) = numeric {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        times = order.into_iter().map(|i| times[i]).collect();
    }

    let (t_len, n, c) = (times.len(), cells.len(), attr_idx.len());
    let mut data = Vec::with_capacity(t_len * n * c);
    for t in &times {
        for per_var in cells.values() {
            data.extend_from_slice(&per_var[*t]);
        }
    }
    SeriesTensor::new(
        Tensor::new(vec![t_len, n, c], data)?,
        cells.keys().cloned().collect(),
        schema.attribute_columns.clone(),
    )
}
