//! Short-time extrapolation `t log q(t) = L + a t log t + b t [+ c h^2/t^2]`.
//!
//! The `t log t` and `t` terms absorb a power-law prefactor. The optional
//! last term absorbs the leading lattice correction: the cumulant of a
//! nearest-neighbour walk is `(cosh(theta h) - 1)/h^2` rather than
//! `theta^2/2`, which shifts `t log p_t` by a multiple of `h^2/t^2` at the
//! Gaussian scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Extrapolated `t -> 0` value.
    pub limit: f64,
    /// Coefficients in column order `[1, t log t, t, h^2/t^2]`.
    pub coefficients: Vec<f64>,
    pub predicted: Vec<f64>,
    pub residual_rms: f64,
    pub residual_max: f64,
    /// Standard error of `limit` from the residual variance; 0 when the
    /// fit has no spare degrees of freedom.
    pub limit_stderr: f64,
    pub mesh_term: bool,
}

/// Least-squares fit of the short-time model. `mesh` adds the lattice term.
/// Terms are dropped from the right when there are too few points.
pub fn fit_short_time(ts: &[f64], values: &[f64], mesh: Option<f64>) -> Result<FitResult> {
    if ts.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: ts.len(),
            got: values.len(),
        });
    }
    if ts.iter().chain(values).any(|v| !v.is_finite()) || ts.iter().any(|&t| t <= 0.0) {
        return Err(Error::validation(
            "fit needs finite values at positive times",
        ));
    }
    let n = ts.len();
    if n == 0 {
        return Err(Error::Undefined("no points to fit".into()));
    }
    let mut cols = if mesh.is_some() { 4 } else { 3 };
    // Keep at least one degree of freedom for the residual when possible.
    while cols > 1 && n < cols + 1 {
        cols -= 1;
    }
    let cols = cols.min(n);
    let h2 = mesh.map_or(0.0, |h| h * h);
    let column = |j: usize, t: f64| match j {
        0 => 1.0,
        1 => t * t.ln(),
        2 => t,
        _ => h2 / (t * t),
    };
    let mut a = DMatrix::<f64>::zeros(n, cols);
    for (i, &t) in ts.iter().enumerate() {
        for j in 0..cols {
            a[(i, j)] = column(j, t);
        }
    }
    // Column equilibration before the SVD.
    let scales: Vec<f64> = (0..cols)
        .map(|j| {
            let s = a.column(j).amax();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).unscale_mut(*s);
    }
    let b = DVector::from_column_slice(values);
    let svd = a.clone().svd(true, true);
    let sol = svd
        .solve(&b, 1e-13)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    let predicted: Vec<f64> = (&a * &sol).iter().copied().collect();
    let coefficients: Vec<f64> = sol.iter().zip(&scales).map(|(c, s)| c / s).collect();
    let res: Vec<f64> = predicted.iter().zip(values).map(|(p, v)| v - p).collect();
    let residual_rms = (res.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    let residual_max = res.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let dof = n.saturating_sub(cols);
    let limit_stderr = if dof > 0 {
        let sigma2 = res.iter().map(|r| r * r).sum::<f64>() / dof as f64;
        // (A^T A)^{-1} = V diag(1/s^2) V^T in the equilibrated coordinates.
        let v_t = svd.v_t.as_ref().expect("svd computed with V");
        let var00: f64 = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > 1e-13 * svd.singular_values[0])
            .map(|(k, s)| v_t[(k, 0)] * v_t[(k, 0)] / (s * s))
            .sum();
        (sigma2 * var00).sqrt() / scales[0]
    } else {
        0.0
    };
    let mut coefficients = coefficients;
    coefficients.resize(if mesh.is_some() { 4 } else { 3 }, 0.0);
    Ok(FitResult {
        limit: coefficients[0],
        coefficients,
        predicted,
        residual_rms,
        residual_max,
        limit_stderr,
        mesh_term: cols == 4,
    })
}

/// `n` log-spaced points from `hi` down to `lo`.
pub fn log_grid_decreasing(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
