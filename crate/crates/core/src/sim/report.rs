use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Replication, SimConfig};
use crate::error::{Error, Result};
use crate::estimation::EstimatorSet;

/// One `(n, parameter, estimator)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub n: usize,
    pub parameter: String,
    pub truth: f64,
    pub estimator: String,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Monte Carlo standard error of `bias`; NaN with fewer than two usable replications.
    pub bias_se: f64,
    pub used: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimReport {
    pub model: String,
    pub family: String,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<String>,
    pub params: Vec<String>,
    pub rows: Vec<SimRow>,
}

impl SimReport {
    pub(crate) fn new(cfg: &SimConfig, params: &[String], est: &EstimatorSet) -> Self {
        Self {
            model: cfg.model.name().into(),
            family: cfg.family().map(|f| f.label()).unwrap_or_else(|_| cfg.family.clone()),
            reps: cfg.reps,
            seed: cfg.seed,
            estimators: est.names().iter().map(|s| s.to_string()).collect(),
            params: params.to_vec(),
            rows: Vec::new(),
        }
    }

    /// Folds replications in order, so the result is bit-stable.
    pub(crate) fn add(&mut self, n: usize, truth: &DVector<f64>, reps: &[Replication]) {
        for (e, name) in self.estimators.clone().iter().enumerate() {
            let ok: Vec<&DVector<f64>> = reps.iter().filter_map(|r| r.estimates[e].as_ref()).collect();
            let m = ok.len();
            for (r, param) in self.params.iter().enumerate() {
                let (mut sum, mut sq) = (0.0, 0.0);
                for t in &ok {
                    let d = t[r] - truth[r];
                    sum += d;
                    sq += d * d;
                }
                let mf = m as f64;
                let bias = if m > 0 { sum / mf } else { f64::NAN };
                let rmse = if m > 0 {
                    (sq / mf).sqrt().max(bias.abs())
                } else {
                    f64::NAN
                };
                let bias_se = if m > 1 {
                    let var = ok.iter().map(|t| (t[r] - truth[r] - bias).powi(2)).sum::<f64>() / (mf - 1.0);
                    (var / mf).sqrt()
                } else {
                    f64::NAN
                };
                self.rows.push(SimRow {
                    n,
                    parameter: param.clone(),
                    truth: truth[r],
                    estimator: name.clone(),
                    mean: truth[r] + bias,
                    bias,
                    rmse,
                    bias_se,
                    used: m,
                    failed: reps.len() - m,
                });
            }
        }
    }

    pub fn row(&self, n: usize, parameter: &str, estimator: &str) -> Option<&SimRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.parameter == parameter && r.estimator == estimator)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        v.dedup();
        v
    }

    /// Full-precision CSV, one line per cell.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Vec<SimRow>> {
        csv::Reader::from_reader(r)
            .deserialize()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| Error::Parse(format!("report row {}: {e}", i + 1))))
            .collect()
    }

    /// Aligned table: `n`, parameter, truth, then Bias and √MSE per estimator.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "model: {}   family: {}   replications: {}   seed: {}",
            self.model, self.family, self.reps, self.seed
        );
        let mut header = vec!["n".to_string(), "parameter".into(), "true".into()];
        for e in &self.estimators {
            let e = e.to_uppercase();
            header.push(format!("{e} bias"));
            header.push(format!("{e} rmse"));
        }
        let mut lines = vec![header];
        for n in self.sizes() {
            for p in &self.params {
                let mut line = vec![n.to_string(), p.clone()];
                let mut truth = String::new();
                for e in &self.estimators {
                    if let Some(r) = self.row(n, p, e) {
                        truth = sig6(r.truth);
                        line.push(sig6(r.bias));
                        line.push(sig6(r.rmse));
                    }
                }
                line.insert(2, truth);
                lines.push(line);
            }
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l.get(c).map_or(0, |s| s.chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 1 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        let mut notes = Vec::new();
        for n in self.sizes() {
            for e in &self.estimators {
                if let Some(r) = self.rows.iter().find(|r| r.n == n && &r.estimator == e) {
                    if r.failed > 0 {
                        notes.push(format!(
                            "n={n} {}: {} of {} replications excluded",
                            e.to_uppercase(),
                            r.failed,
                            r.failed + r.used
                        ));
                    }
                }
            }
        }
        for note in notes {
            let _ = writeln!(out, "{note}");
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(sig6(-40.0712345), "-40.0712");
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
        assert_eq!(sig6(0.0), "0");
    }
}
