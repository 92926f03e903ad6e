//! Central finite differences for black-box scalar functions.
//!
//! These are verification oracles: they never share code with the analytic
//! derivatives they are used to check.

use alloc::vec::Vec;

use crate::la::DenseMatrix;

/// Central-difference gradient with step `h`.
pub fn gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + h;
        let plus = f(&point);
        point[i] = x[i] - h;
        let minus = f(&point);
        point[i] = x[i];
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Central-difference Hessian with step `h`.
///
/// Diagonal entries use the three-point second difference; off-diagonal
/// entries the four-point cross difference.
pub fn hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DenseMatrix {
    let n = x.len();
    let mut point = x.to_vec();
    let mut out = DenseMatrix::zeros(n, n);
    let center = f(x);
    for i in 0..n {
        point[i] = x[i] + h;
        let plus = f(&point);
        point[i] = x[i] - h;
        let minus = f(&point);
        point[i] = x[i];
        out.set(i, i, (plus - 2.0 * center + minus) / (h * h));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            point[i] = x[i] + h;
            point[j] = x[j] + h;
            let pp = f(&point);
            point[j] = x[j] - h;
            let pm = f(&point);
            point[i] = x[i] - h;
            point[j] = x[j] + h;
            let mp = f(&point);
            point[j] = x[j] - h;
            let mm = f(&point);
            point[i] = x[i];
            point[j] = x[j];
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}
