#![allow(dead_code)]

pub mod oracle;

use nalgebra::DVector;

pub fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Relative discrepancy with an absolute floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}
