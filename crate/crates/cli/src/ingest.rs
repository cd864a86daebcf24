//! CSV ingestion and learner construction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use selboost::baselearner::{BaseLearner, Smoothing, SplineConfig};
use selboost::linalg;
use serde::Serialize;

use crate::config::{LearnerConfig, RunConfig, DEVIATION_SUFFIX};
use crate::error::{CliError, Result};

/// Columns of a CSV file as raw strings, keyed by header name.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: usize,
    cells: BTreeMap<String, Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
        let headers: Vec<String> =
            rd.headers().map_err(|e| CliError::Data(e.to_string()))?.iter().map(str::to_string).collect();
        let mut cols: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        let mut rows = 0;
        for rec in rd.records() {
            let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
            rows += 1;
            for (c, v) in rec.iter().enumerate() {
                cols[c].push(v.to_string());
            }
        }
        let cells = headers.iter().cloned().zip(cols).collect();
        Ok(Self { headers, rows, cells })
    }

    fn raw(&self, name: &str) -> Result<&[String]> {
        self.cells.get(name).map(|v| v.as_slice()).ok_or_else(|| CliError::Data(format!("missing column '{name}'")))
    }

    /// Numeric column; rows are reported 1-based, header excluded.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        self.raw(name)?
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.is_empty() {
                    return Err(CliError::Data(format!("row {}, column '{name}': missing value", i + 1)));
                }
                s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::Data(format!("row {}, column '{name}': cannot parse '{s}' as a number", i + 1))
                })
            })
            .collect()
    }

    pub fn categorical(&self, name: &str) -> Result<Vec<String>> {
        let v = self.raw(name)?;
        if let Some(i) = v.iter().position(|s| s.is_empty()) {
            return Err(CliError::Data(format!("row {}, column '{name}': missing value", i + 1)));
        }
        Ok(v.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Centering {
    pub response_mean: f64,
    /// Means subtracted from numeric columns entering linear or group
    /// learners.
    pub column_means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub y: DVector<f64>,
    pub learners: Vec<BaseLearner>,
    pub centering: Centering,
    /// Factor levels (reference first) per factor learner name.
    pub factor_levels: BTreeMap<String, Vec<String>>,
    /// Column mean removed from each one-column linear learner.
    pub linear_means: BTreeMap<String, f64>,
}

pub fn center(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| x - m).collect(), m)
}

fn centered_column(table: &Table, name: &str, means: &mut BTreeMap<String, f64>) -> Result<DVector<f64>> {
    let (v, m) = center(&table.numeric(name)?);
    means.insert(name.to_string(), m);
    Ok(DVector::from_vec(v))
}

pub fn ingest(table: &Table, cfg: &RunConfig) -> Result<Ingested> {
    if table.rows < 3 {
        return Err(CliError::Data(format!("need at least 3 rows, found {}", table.rows)));
    }
    let (y, response_mean) = center(&table.numeric(&cfg.response)?);
    let mut column_means = BTreeMap::new();
    let mut factor_levels = BTreeMap::new();
    let mut linear_means = BTreeMap::new();
    let mut learners = Vec::new();
    for decl in &cfg.learners {
        let id = learners.len();
        let name = decl.name();
        match decl {
            LearnerConfig::Linear { column, .. } => {
                learners.push(BaseLearner::linear(
                    id,
                    name.clone(),
                    &centered_column(table, column, &mut column_means)?,
                )?);
                linear_means.insert(name, column_means[column]);
            }
            LearnerConfig::Group { columns, .. } => {
                let cols =
                    columns.iter().map(|c| centered_column(table, c, &mut column_means)).collect::<Result<Vec<_>>>()?;
                learners.push(BaseLearner::group(id, name, DMatrix::from_columns(&cols))?);
            }
            LearnerConfig::Factor { column, .. } => {
                let raw = table.categorical(column)?;
                let levels: Vec<String> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
                if levels.len() < 2 {
                    return Err(CliError::Data(format!("factor '{column}' has fewer than two levels")));
                }
                let mut x = DMatrix::zeros(raw.len(), levels.len() - 1);
                for (i, v) in raw.iter().enumerate() {
                    let k = levels.iter().position(|l| l == v).unwrap();
                    if k > 0 {
                        x[(i, k - 1)] = 1.0;
                    }
                }
                let x = linalg::center_columns(&x, &linalg::column_means(&x));
                factor_levels.insert(name.clone(), levels);
                learners.push(BaseLearner::group(id, name, x)?);
            }
            LearnerConfig::Spline { column, degree, knots, diff_order, lambda, df, split_linear, .. } => {
                let c = table.numeric(column)?;
                let cfg_s = SplineConfig::new(*degree, *knots, *diff_order)?;
                let smoothing = match (lambda, df) {
                    (Some(l), None) => Smoothing::Lambda(*l),
                    (None, Some(d)) => Smoothing::Df(*d),
                    _ => Smoothing::Df(4.0),
                };
                if *split_linear {
                    learners.push(BaseLearner::linear(
                        id,
                        name.clone(),
                        &centered_column(table, column, &mut column_means)?,
                    )?);
                    linear_means.insert(name.clone(), column_means[column]);
                    let dev = format!("{name}{DEVIATION_SUFFIX}");
                    learners.push(BaseLearner::spline(id + 1, dev, &c, cfg_s, smoothing, true)?);
                } else {
                    learners.push(BaseLearner::spline(id, name, &c, cfg_s, smoothing, false)?);
                }
            }
        }
    }
    Ok(Ingested {
        y: DVector::from_vec(y),
        learners,
        centering: Centering { response_mean, column_means },
        factor_levels,
        linear_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centering_small_column() {
        let (v, m) = center(&[1.0, 2.0, 3.0]);
        assert_eq!(v, vec![-1.0, 0.0, 1.0]);
        assert_eq!(m, 2.0);
    }

    #[test]
    fn malformed_cell_names_row_and_column() {
        let mut csv = String::from("y,x\n");
        for i in 1..=9 {
            let x = if i == 7 { "abc".to_string() } else { i.to_string() };
            csv.push_str(&format!("{i},{x}\n"));
        }
        let t = Table::from_reader(csv.as_bytes()).unwrap();
        let e = t.numeric("x").unwrap_err().to_string();
        assert!(e.contains("row 7") && e.contains("'x'") && e.contains("abc"), "{e}");
        assert!(t.numeric("nope").unwrap_err().to_string().contains("missing column 'nope'"));
    }

    #[test]
    fn quoted_fields_and_missing_values() {
        let csv = "y,\"a, b\"\n1,2\n2,\n3,4\n";
        let t = Table::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(t.headers[1], "a, b");
        assert!(t.numeric("a, b").unwrap_err().to_string().contains("row 2"));
    }
}
