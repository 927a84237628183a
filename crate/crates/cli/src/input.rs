//! CSV ingestion for population frames and samples.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use sbll_core::{make_srs, PopulationFrame, SampleData, SimpleRandomSampling};

use crate::error::CliError;

/// Population frame read from `id, x1, ..., xd`, with the row ids in file
/// order.
#[derive(Debug, Clone)]
pub struct Population {
    pub ids: Vec<String>,
    pub frame: PopulationFrame,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub ids: Vec<String>,
    pub data: SampleData,
}

fn parse_number(raw: &str, path: &Path, line: u64, column: &str) -> Result<f64, CliError> {
    let value: f64 = raw.trim().parse().map_err(|_| {
        CliError::Input(format!("{}:{line}: column '{column}': cannot parse '{raw}' as a number", path.display()))
    })?;
    if !value.is_finite() {
        return Err(CliError::Input(format!("{}:{line}: column '{column}': value '{raw}' is not finite", path.display())));
    }
    Ok(value)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<(u64, csv::StringRecord)>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record));
    }
    Ok((headers, rows))
}

fn id_column(headers: &[String], path: &Path) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| CliError::Input(format!("{}: missing required 'id' column", path.display())))
}

/// Reads the population file. `vars` picks covariate columns by name;
/// otherwise every column other than `id` is a covariate.
pub fn read_population(path: &Path, vars: Option<&[String]>) -> Result<Population, CliError> {
    let (headers, rows) = read_table(path)?;
    let id_col = id_column(&headers, path)?;
    let available: Vec<usize> = (0..headers.len()).filter(|&c| c != id_col).collect();
    let chosen: Vec<usize> = match vars {
        None => available,
        Some(names) => names
            .iter()
            .map(|name| {
                available
                    .iter()
                    .copied()
                    .find(|&c| headers[c] == *name)
                    .ok_or_else(|| CliError::Config(format!("{}: no covariate column named '{name}'", path.display())))
            })
            .collect::<Result<_, _>>()?,
    };
    if chosen.is_empty() {
        return Err(CliError::Input(format!("{}: no covariate columns", path.display())));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut seen = HashMap::new();
    let mut columns = vec![Vec::with_capacity(rows.len()); chosen.len()];
    for (line, record) in &rows {
        let id = record[id_col].trim().to_string();
        if let Some(first) = seen.insert(id.clone(), *line) {
            return Err(CliError::Input(format!("{}:{line}: duplicate id '{id}' (first seen on line {first})", path.display())));
        }
        for (col, &c) in columns.iter_mut().zip(&chosen) {
            col.push(parse_number(&record[c], path, *line, &headers[c])?);
        }
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let names = chosen.iter().map(|&c| headers[c].clone()).collect();
    let frame = PopulationFrame::new(columns, None, names)?;
    Ok(Population { ids, frame })
}

/// Reads `id, y` and attaches it to `population` under simple random
/// sampling of the file's size.
pub fn read_sample(path: &Path, population: &Population) -> Result<Sample, CliError> {
    let (headers, rows) = read_table(path)?;
    let id_col = id_column(&headers, path)?;
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| CliError::Input(format!("{}: missing required 'y' column", path.display())))?;
    let lookup: HashMap<&str, usize> = population.ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let mut seen = HashMap::new();
    let mut ids = Vec::with_capacity(rows.len());
    let mut indices = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (line, record) in &rows {
        let id = record[id_col].trim();
        let row = *lookup
            .get(id)
            .ok_or_else(|| CliError::Input(format!("{}:{line}: id '{id}' is not in the population file", path.display())))?;
        if let Some(first) = seen.insert(id.to_string(), *line) {
            return Err(CliError::Input(format!("{}:{line}: duplicate id '{id}' (first seen on line {first})", path.display())));
        }
        y.push(parse_number(&record[y_col], path, *line, "y")?);
        indices.push(row);
        ids.push(id.to_string());
    }
    if ids.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let big_n = population.frame.len();
    let design = if ids.len() == big_n { SimpleRandomSampling::census(big_n)? } else { make_srs(big_n, ids.len())? };
    let data = SampleData::new(indices, y, Arc::new(design))?;
    Ok(Sample { ids, data })
}
