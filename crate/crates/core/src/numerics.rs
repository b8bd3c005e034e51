//! Minimal dense kernels and elementwise nonlinearities.
//!
//! All arithmetic is `f64` with fixed left-to-right accumulation so that
//! reruns are bit-identical. Dimensions are checked, never assumed.

use crate::error::{Error, Result};

/// Dense row-major matrix with explicit dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `Wx + b`. Each output row is the row dot product accumulated left to
/// right, with the bias added last.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() || w.rows != b.len() {
        return Err(Error::Config(format!(
            "affine dimension mismatch: W is {}x{}, x has {}, b has {}",
            w.rows,
            w.cols,
            x.len(),
            b.len()
        )));
    }
    let mut out = Vec::with_capacity(w.rows);
    for r in 0..w.rows {
        let mut acc = 0.0;
        for (wv, xv) in w.row(r).iter().zip(x) {
            acc += wv * xv;
        }
        out.push(acc + b[r]);
    }
    Ok(out)
}

/// `W^T y`, used by backward passes.
pub fn matvec_transpose(w: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if w.rows != y.len() {
        return Err(Error::Config(format!(
            "matvec_transpose dimension mismatch: W is {}x{}, y has {}",
            w.rows,
            w.cols,
            y.len()
        )));
    }
    let mut out = vec![0.0; w.cols];
    for r in 0..w.rows {
        let yr = y[r];
        for (o, wv) in out.iter_mut().zip(w.row(r)) {
            *o += yr * wv;
        }
    }
    Ok(out)
}

/// Inner product. Panics on length mismatch (programmer error).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Softmax with max-subtraction so large scores cannot overflow.
pub fn softmax(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::Config("softmax of empty input".into()));
    }
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Numerically stable logistic function (branch on sign).
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Name of the worst parameter when `max_rel_err` exceeds the tolerance.
    pub failing_param: Option<String>,
}

/// Compares `analytic` against central differences of `loss_fn` at `theta`.
///
/// Relative error is `|a - n| / max(|a|, |n|)`, falling back to absolute
/// error when both magnitudes are below 1e-8. The loss is evaluated twice at
/// the starting point first; if the two values differ bitwise the function is
/// not deterministic and the check aborts.
pub fn grad_check<F, N>(
    mut loss_fn: F,
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
    tol: f64,
    name_of: N,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
    N: Fn(usize) -> String,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Config(format!(
            "grad_check eps {eps} outside [1e-6, 1e-4]"
        )));
    }
    if theta.len() != analytic.len() {
        return Err(Error::Config(format!(
            "grad_check length mismatch: {} params vs {} gradients",
            theta.len(),
            analytic.len()
        )));
    }
    let l0 = loss_fn(theta);
    let l1 = loss_fn(theta);
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::Numerical(format!(
            "loss_fn is not deterministic: {l0} vs {l1} at the same point"
        )));
    }

    let mut buf = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        failing_param: None,
    };
    for i in 0..buf.len() {
        let orig = buf[i];
        buf[i] = orig + eps;
        let lp = loss_fn(&buf);
        buf[i] = orig - eps;
        let lm = loss_fn(&buf);
        buf[i] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[i];
        let err = if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / a.abs().max(numeric.abs())
        };
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    if report.max_rel_err > tol {
        report.failing_param = Some(name_of(report.worst_index));
    }
    Ok(report)
}
