use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{information_criteria, FitResult};
use crate::family::PsiMoments;
use crate::sim::sig6;

/// One number of a fit report. `parameter` is empty for scalar quantities
/// (`loglik`, `aic`, `bic`, `aicc`, `converged`, `iterations`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub estimator: String,
    pub quantity: String,
    pub parameter: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub model: String,
    pub family: String,
    pub n_obs: usize,
    pub params: Vec<String>,
    pub estimators: Vec<String>,
    pub records: Vec<FitRecord>,
}

impl FitReport {
    pub fn new(model: &str, family: &str, res: &FitResult) -> Self {
        let mut records = Vec::new();
        let mut push = |est: &str, quantity: &str, parameter: &str, value: f64| {
            records.push(FitRecord {
                estimator: est.into(),
                quantity: quantity.into(),
                parameter: parameter.into(),
                value,
            })
        };
        let p = res.names.len();
        let estimators: Vec<String> = res.requested.names().iter().map(|s| s.to_string()).collect();
        for name in &estimators {
            let Some(e) = res.estimate(name) else { continue };
            for (r, param) in res.names.iter().enumerate() {
                push(name, "estimate", param, e.theta[r]);
            }
            if let Some(se) = &e.std_err {
                for (r, param) in res.names.iter().enumerate() {
                    push(name, "std_err", param, se[r]);
                }
            }
            if name == "mle" {
                if let Some(b) = &res.bias {
                    for (r, param) in res.names.iter().enumerate() {
                        push(name, "bias", param, b[r]);
                    }
                }
            }
            push(name, "loglik", "", e.loglik);
            if let Ok(ic) = information_criteria(e.loglik, res.n_obs, p) {
                push(name, "aic", "", ic.aic);
                push(name, "bic", "", ic.bic);
                push(name, "aicc", "", ic.aicc);
            }
            push(name, "converged", "", if e.converged { 1.0 } else { 0.0 });
            push(name, "iterations", "", e.iterations as f64);
        }
        Self {
            model: model.into(),
            family: family.into(),
            n_obs: res.n_obs,
            params: res.names.clone(),
            estimators,
            records,
        }
    }

    pub fn value(&self, estimator: &str, quantity: &str, parameter: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.estimator == estimator && r.quantity == quantity && r.parameter == parameter)
            .map(|r| r.value)
    }

    /// Full-precision CSV (shortest round-trip representation of each value).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Vec<FitRecord>> {
        csv::Reader::from_reader(r)
            .deserialize()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| Error::Parse(format!("report row {}: {e}", i + 1))))
            .collect()
    }

    /// Estimates with standard errors in parentheses, one column per estimator.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "model: {}   family: {}   observations: {}",
            self.model, self.family, self.n_obs
        );
        let mut lines = vec![std::iter::once("parameter".to_string())
            .chain(self.estimators.iter().map(|e| e.to_uppercase()))
            .collect::<Vec<_>>()];
        for p in &self.params {
            let mut line = vec![p.clone()];
            for e in &self.estimators {
                line.push(match (self.value(e, "estimate", p), self.value(e, "std_err", p)) {
                    (Some(v), Some(s)) => format!("{} ({})", sig6(v), sig6(s)),
                    (Some(v), None) => sig6(v),
                    _ => "-".into(),
                });
            }
            lines.push(line);
        }
        for (label, q) in [("log-lik", "loglik"), ("AIC", "aic"), ("BIC", "bic"), ("AICc", "aicc")] {
            let mut line = vec![label.to_string()];
            for e in &self.estimators {
                line.push(self.value(e, q, "").map_or("-".into(), sig6));
            }
            lines.push(line);
        }
        let mut status = vec!["status".to_string()];
        for e in &self.estimators {
            status.push(
                match (self.value(e, "converged", ""), self.value(e, "iterations", "")) {
                    (Some(c), Some(it)) => {
                        let word = if c == 1.0 { "converged" } else { "NOT converged" };
                        if it > 0.0 {
                            format!("{word} ({it} it.)")
                        } else {
                            word.into()
                        }
                    }
                    _ => "failed".into(),
                },
            );
        }
        lines.push(status);
        out.push_str(&align(&lines));
        out
    }
}

/// Left-aligned first column, right-aligned others.
pub(crate) fn align(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            lines
                .iter()
                .map(|l| l.get(c).map_or(0, |s| s.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for l in lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

const PSI_COLUMNS: [&str; 10] = [
    "q",
    "psi21",
    "psi22",
    "psi32",
    "psi33",
    "c",
    "c_star",
    "omega_tilde",
    "eta1",
    "eta2",
];

fn psi_values(m: &PsiMoments) -> [f64; 9] {
    [
        m.psi21,
        m.psi22,
        m.psi32,
        m.psi33,
        m.c,
        m.c_star,
        m.omega_tilde,
        m.eta1,
        m.eta2,
    ]
}

pub fn psi_table_text(family: &str, rows: &[PsiMoments]) -> String {
    let mut lines = vec![PSI_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for m in rows {
        lines.push(
            std::iter::once(m.q.to_string())
                .chain(psi_values(m).iter().map(|&v| sig6(v)))
                .collect(),
        );
    }
    format!("family: {family}\n{}", align(&lines))
}

pub fn psi_table_csv<W: Write>(rows: &[PsiMoments], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    wr.write_record(PSI_COLUMNS).map_err(err)?;
    for m in rows {
        let rec: Vec<String> = std::iter::once(m.q.to_string())
            .chain(psi_values(m).iter().map(|v| v.to_string()))
            .collect();
        wr.write_record(&rec).map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}
