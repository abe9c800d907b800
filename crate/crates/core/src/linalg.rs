//! Small dense-matrix helpers shared by the filters.

use nalgebra::DMatrix;

use crate::error::{FilterError, Result};

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// Intended for the small, non-generator matrices of the interaction-picture
/// filter; transition matrices go through uniformization instead.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(FilterError::NonFinite("matrix exponential argument"));
    }
    if norm > 700.0 {
        return Err(FilterError::ExponentialOverflow { scale: norm });
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / f64::powi(2.0, squarings as i32);

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if one_norm(&term) <= f64::EPSILON * one_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::ExponentialOverflow { scale: norm });
    }
    Ok(result)
}

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `m^power` by binary powering.
pub fn matrix_power(m: &DMatrix<f64>, mut power: u64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut base = m.clone();
    while power > 0 {
        if power & 1 == 1 {
            result = &result * &base;
        }
        power >>= 1;
        if power > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Row vector times matrix: `(v^T M)_j`.
pub fn row_times(v: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| v.iter().enumerate().map(|(i, vi)| vi * m[(i, j)]).sum())
        .collect()
}

pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| v.iter().enumerate().map(|(j, vj)| m[(i, j)] * vj).sum())
        .collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn max_abs_vec_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm(&z).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_diagonal_and_rotation() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.5, -2.0]));
        let e = expm(&d).unwrap();
        assert!((e[(0, 0)] - 1.5f64.exp()).abs() < 1e-13 * 1.5f64.exp());
        assert!((e[(1, 1)] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);

        // exp of [[0, -w], [w, 0]] is a rotation by w.
        let w = 3.0;
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let e = expm(&r).unwrap();
        assert!((e[(0, 0)] - w.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - w.sin()).abs() < 1e-13);
    }

    #[test]
    fn expm_inverse_pair() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.4, 0.2, 0.7, -2.0, 0.1, 0.3, 1.6, 0.5]);
        let prod = expm(&a).unwrap() * expm(&(-&a)).unwrap();
        assert!(max_abs_diff(&prod, &DMatrix::identity(3, 3)) < 1e-12);
    }

    #[test]
    fn expm_refuses_overflow() {
        let a = DMatrix::from_element(1, 1, 1000.0);
        assert!(matches!(expm(&a), Err(FilterError::ExponentialOverflow { .. })));
    }

    #[test]
    fn power_matches_repeated_product() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let mut direct = DMatrix::identity(2, 2);
        for _ in 0..13 {
            direct = &direct * &m;
        }
        assert!(max_abs_diff(&direct, &matrix_power(&m, 13)) < 1e-15);
    }

    #[test]
    fn log_sum_exp_handles_large_offsets() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
