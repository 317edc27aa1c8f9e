//! Headered CSV inputs for `fit`, one schema per model:
//!
//! | model           | columns                                              |
//! |-----------------|------------------------------------------------------|
//! | `nonlinear`     | `y`, `x`, optional `w1..`                            |
//! | `linear`        | `y`, `x1..`, optional `w1..`                         |
//! | `log-symmetric` | `t` (> 0), `x1..`, optional `w1..`                   |
//! | `eiv`           | `X1`, `X2`, optional `tau1`, `tau2`                  |
//! | `mixed`         | `subject`, `y`, `x1..`, optional `z1..`              |
//!
//! Linear predictors get an intercept. Without `w` columns the dispersion
//! is a single `sigma2`; with them `log σ²_i = γ₁ + γ₂w₁ + …`. Mixed
//! models always carry a random intercept, with `z` columns adding random
//! slopes; rows of one subject need not be contiguous.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::DensityFamily;
use crate::model::{ModelSpec, ObservationBlock};
use crate::sim::ModelKind;
use crate::zoo::{
    ErrorsInVariables, ExpLinear, HeteroNonlinear, LinearMean, LogSymmetric, LogisticMean, MixedEffects, VarianceLink,
};

/// Parsed table: lower-cased headers and numeric rows.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_reader(file)
    }

    fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rd
            .headers()
            .map_err(|e| Error::Parse(format!("header: {e}")))?
            .iter()
            .map(|h| h.to_ascii_lowercase())
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            let line = rec.position().map_or(0, |p| p.line());
            let values = rec
                .iter()
                .zip(&headers)
                .map(|(s, h)| {
                    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        Error::Parse(format!(
                            "row {row} (line {line}), column '{h}': '{s}' is not a finite number"
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(values);
        }
        if rows.is_empty() {
            return Err(Error::Parse("data file has no rows".into()));
        }
        Ok(Self { headers, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str, model: ModelKind) -> Result<usize> {
        self.col(name)
            .ok_or_else(|| Error::Parse(format!("model '{}' needs a '{name}' column", model.name())))
    }

    /// Columns `prefix1, prefix2, …` (or a bare `prefix`), in numeric order.
    fn numbered(&self, prefix: &str) -> Vec<usize> {
        let mut found: Vec<(usize, usize)> = self
            .headers
            .iter()
            .enumerate()
            .filter_map(|(c, h)| {
                let rest = h.strip_prefix(prefix)?;
                if rest.is_empty() {
                    Some((0, c))
                } else {
                    rest.parse::<usize>().ok().map(|k| (k, c))
                }
            })
            .collect();
        found.sort();
        found.into_iter().map(|(_, c)| c).collect()
    }

    fn check_known(&self, used: &[usize], model: ModelKind, expected: &str) -> Result<()> {
        match (0..self.headers.len()).find(|c| !used.contains(c)) {
            Some(c) => Err(Error::Parse(format!(
                "unexpected column '{}' for model '{}' (expected {expected})",
                self.headers[c],
                model.name()
            ))),
            None => Ok(()),
        }
    }
}

/// Reads `path` and builds the model of kind `model` under `family`.
pub fn load_model(model: ModelKind, path: &Path, family: DensityFamily) -> Result<ModelSpec> {
    build_model(model, &Table::read(path)?, family)
}

/// As [`load_model`], from CSV text.
pub fn parse_model(model: ModelKind, csv_text: &str, family: DensityFamily) -> Result<ModelSpec> {
    build_model(model, &Table::from_reader(csv_text.as_bytes())?, family)
}

fn scale_columns(row: &[f64], ws: &[usize]) -> Vec<f64> {
    if ws.is_empty() {
        return Vec::new();
    }
    std::iter::once(1.0).chain(ws.iter().map(|&c| row[c])).collect()
}

fn dispersion(ws: &[usize]) -> (VarianceLink, usize) {
    if ws.is_empty() {
        (VarianceLink::Identity, 1)
    } else {
        (VarianceLink::Exp, ws.len() + 1)
    }
}

fn build_model(model: ModelKind, t: &Table, family: DensityFamily) -> Result<ModelSpec> {
    match model {
        ModelKind::Nonlinear => {
            let (y, x) = (t.require("y", model)?, t.require("x", model)?);
            let ws = t.numbered("w");
            t.check_known(&[&[y, x][..], &ws].concat(), model, "y, x, w1..")?;
            let blocks = t
                .rows
                .iter()
                .map(|r| ObservationBlock::scalar(r[y], vec![r[x]], scale_columns(r, &ws)))
                .collect();
            let (link, p2) = dispersion(&ws);
            HeteroNonlinear::new(Arc::new(LogisticMean), link, p2).into_model(blocks, family)
        }
        ModelKind::Linear | ModelKind::LogSymmetric => {
            let resp = if model == ModelKind::Linear { "y" } else { "t" };
            let y = t.require(resp, model)?;
            let xs = t.numbered("x");
            let ws = t.numbered("w");
            t.check_known(&[&[y][..], &xs, &ws].concat(), model, &format!("{resp}, x1.., w1.."))?;
            let blocks = t
                .rows
                .iter()
                .map(|r| {
                    let x = std::iter::once(1.0).chain(xs.iter().map(|&c| r[c])).collect();
                    ObservationBlock::scalar(r[y], x, scale_columns(r, &ws))
                })
                .collect();
            let (link, p2) = dispersion(&ws);
            let k = xs.len() + 1;
            if model == ModelKind::Linear {
                HeteroNonlinear::new(Arc::new(LinearMean::new(k)), link, p2).into_model(blocks, family)
            } else {
                LogSymmetric::new(Arc::new(ExpLinear { k }), link, p2).into_model(blocks, family)
            }
        }
        ModelKind::Eiv => {
            let (x1, x2) = (t.require("x1", model)?, t.require("x2", model)?);
            let (t1, t2) = (t.col("tau1"), t.col("tau2"));
            let used: Vec<usize> = [Some(x1), Some(x2), t1, t2].into_iter().flatten().collect();
            t.check_known(&used, model, "X1, X2, tau1, tau2")?;
            let blocks = t
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let tau = |c: Option<usize>| -> Result<DMatrix<f64>> {
                        let v = c.map_or(0.0, |c| r[c]);
                        if v < 0.0 {
                            return Err(Error::Parse(format!(
                                "row {}: measurement-error variance must be >= 0, got {v}",
                                i + 1
                            )));
                        }
                        Ok(DMatrix::from_element(1, 1, v))
                    };
                    Ok(ErrorsInVariables::observation(&[r[x1]], &[r[x2]], &tau(t1)?, &tau(t2)?))
                })
                .collect::<Result<Vec<_>>>()?;
            ErrorsInVariables::new(1, 1).into_model(blocks, family)
        }
        ModelKind::Mixed => {
            let (s, y) = (t.require("subject", model)?, t.require("y", model)?);
            let xs = t.numbered("x");
            let zs = t.numbered("z");
            t.check_known(&[&[s, y][..], &xs, &zs].concat(), model, "subject, y, x1.., z1..")?;
            // Group rows by subject in order of first appearance.
            let mut ids: Vec<f64> = Vec::new();
            let mut groups: Vec<Vec<&Vec<f64>>> = Vec::new();
            for r in &t.rows {
                match ids.iter().position(|&id| id == r[s]) {
                    Some(g) => groups[g].push(r),
                    None => {
                        ids.push(r[s]);
                        groups.push(vec![r]);
                    }
                }
            }
            let (k, rdim) = (xs.len() + 1, zs.len() + 1);
            let blocks = groups
                .iter()
                .map(|rows| {
                    let yv = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[y]));
                    let x = rows
                        .iter()
                        .flat_map(|r| std::iter::once(1.0).chain(xs.iter().map(|&c| r[c])))
                        .collect();
                    let z = rows
                        .iter()
                        .flat_map(|r| std::iter::once(1.0).chain(zs.iter().map(|&c| r[c])))
                        .collect();
                    ObservationBlock::new(yv, x, z)
                })
                .collect();
            MixedEffects::linear(k, rdim).into_model(blocks, family)
        }
    }
}
