//! Short-time probes: `t log p_t(x,y)` and `t log T_t 1_A(x)` against
//! `-d^2/2`, and the integrated Gaussian estimate threshold.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit_short_time, FitResult};
use crate::form::SpectralCache;
use crate::metric::IntrinsicMetric;
use crate::space::{Region, StateSpace, Vertex};

/// Diffusive-regime factor: `t >= DIFFUSIVE * h^2 / sigma^2`.
pub const DIFFUSIVE_FACTOR: f64 = 25.0;
/// Hop budget: `d^2/(2t) <= HOP_FACTOR * d/h`.
pub const HOP_FACTOR: f64 = 0.8;

pub const OUTSIDE_WINDOW: &str = "outside continuum validity window";

/// Times where a lattice is trusted to behave like its continuum limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidityWindow {
    pub t_min: f64,
    pub t_max: f64,
}

impl ValidityWindow {
    pub fn empty() -> Self {
        ValidityWindow {
            t_min: f64::INFINITY,
            t_max: f64::NEG_INFINITY,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.t_min > self.t_max
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }
}

/// Window for a probe across distance `d`. Spaces without a continuum tag
/// get an empty window.
pub fn validity_window(space: &StateSpace, d: f64) -> ValidityWindow {
    match space.continuum() {
        Some((h, sigma)) => {
            let diffusive = DIFFUSIVE_FACTOR * h * h / (sigma * sigma);
            let hops = if d > 0.0 && d.is_finite() {
                d * h / (2.0 * HOP_FACTOR)
            } else {
                0.0
            };
            ValidityWindow {
                t_min: diffusive.max(hops),
                t_max: f64::INFINITY,
            }
        }
        None => ValidityWindow::empty(),
    }
}

/// One short-time probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticProbe {
    pub kind: String,
    /// Strictly decreasing.
    pub t_grid: Vec<f64>,
    /// `ln q(t)`; `NaN` for dropped points.
    pub log_values: Vec<f64>,
    /// `t ln q(t)`.
    pub raw: Vec<f64>,
    pub in_window: Vec<bool>,
    /// Model prediction per grid point (`NaN` where not fitted).
    pub model_fit: Vec<f64>,
    pub limit: f64,
    pub fit_residual: f64,
    pub limit_stderr: f64,
    pub coefficients: Vec<f64>,
    pub distance: f64,
    pub target: f64,
    pub deviation: f64,
    pub window: ValidityWindow,
    pub flags: Vec<String>,
}

impl AsymptoticProbe {
    pub fn outside_window(&self) -> bool {
        self.flags.iter().any(|f| f == OUTSIDE_WINDOW)
    }
}

/// `|L - target| / |target|`, or `|L|` when the target is 0.
pub fn relative_deviation(limit: f64, target: f64) -> f64 {
    if target == 0.0 {
        limit.abs()
    } else {
        (limit - target).abs() / target.abs()
    }
}

pub(crate) fn prepare_grid(t_grid: &[f64]) -> Result<Vec<f64>> {
    if t_grid.is_empty() {
        return Err(Error::InvalidTime("empty time grid".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidTime(format!(
            "grid time {t} must be positive"
        )));
    }
    let mut g = t_grid.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g.dedup();
    Ok(g)
}

/// Fit `t ln q` over the window and assemble a probe.
pub(crate) fn assemble(
    kind: &str,
    space: &StateSpace,
    grid: Vec<f64>,
    log_values: Vec<f64>,
    distance: f64,
    target: f64,
) -> Result<AsymptoticProbe> {
    let window = validity_window(space, distance);
    assemble_windowed(
        kind,
        space.mesh(),
        window,
        grid,
        log_values,
        distance,
        target,
    )
}

/// As [`assemble`] with an explicit window.
pub(crate) fn assemble_windowed(
    kind: &str,
    mesh: Option<f64>,
    window: ValidityWindow,
    grid: Vec<f64>,
    log_values: Vec<f64>,
    distance: f64,
    target: f64,
) -> Result<AsymptoticProbe> {
    let mut flags = Vec::new();
    let raw: Vec<f64> = grid
        .iter()
        .zip(&log_values)
        .map(|(t, l)| if l.is_finite() { t * l } else { f64::NAN })
        .collect();
    if raw.iter().any(|r| r.is_nan()) {
        flags.push("grid points dropped: value not computable".to_string());
    }
    let in_window: Vec<bool> = grid.iter().map(|&t| window.contains(t)).collect();
    let ncols = if mesh.is_some() { 4 } else { 3 };
    let usable = |i: usize| raw[i].is_finite();
    let windowed: Vec<usize> = (0..grid.len())
        .filter(|&i| usable(i) && in_window[i])
        .collect();
    let chosen: Vec<usize> = if windowed.len() > ncols {
        windowed
    } else {
        flags.push(OUTSIDE_WINDOW.to_string());
        (0..grid.len()).filter(|&i| usable(i)).collect()
    };
    let ts: Vec<f64> = chosen.iter().map(|&i| grid[i]).collect();
    let vs: Vec<f64> = chosen.iter().map(|&i| raw[i]).collect();
    let fit: FitResult = fit_short_time(&ts, &vs, mesh)?;
    let mut model_fit = vec![f64::NAN; grid.len()];
    for (k, &i) in chosen.iter().enumerate() {
        model_fit[i] = fit.predicted[k];
    }
    Ok(AsymptoticProbe {
        kind: kind.to_string(),
        t_grid: grid,
        log_values,
        raw,
        in_window,
        model_fit,
        limit: fit.limit,
        fit_residual: fit.residual_max,
        limit_stderr: fit.limit_stderr,
        coefficients: fit.coefficients,
        distance,
        target,
        deviation: relative_deviation(fit.limit, target),
        window,
        flags,
    })
}

/// `t log p_t(x,y)` against `-d(x,y)^2/2`.
pub fn varadhan_kernel(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    x: Vertex,
    y: Vertex,
    t_grid: &[f64],
) -> Result<AsymptoticProbe> {
    let space = cache.space();
    space.check_vertex(x)?;
    space.check_vertex(y)?;
    let grid = prepare_grid(t_grid)?;
    let logs: Vec<f64> = grid
        .par_iter()
        .map(|&t| cache.heat_kernel(t, x, y).map(|k| k.log_value))
        .collect::<Result<_>>()?;
    let d = metric.lower(x, y);
    assemble("varadhan_kernel", space, grid, logs, d, -d * d / 2.0)
}

/// `t log T_t 1_A(x)` against `-d(A,x)^2/2`.
pub fn varadhan_indicator(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    a: &Region,
    x: Vertex,
    t_grid: &[f64],
) -> Result<AsymptoticProbe> {
    let space = cache.space();
    space.check_vertex(x)?;
    let grid = prepare_grid(t_grid)?;
    let f = a.indicator(space.len());
    let logs: Vec<f64> = grid
        .par_iter()
        .map(|&t| cache.log_semigroup_at(t, &f, x))
        .collect::<Result<_>>()?;
    let d = metric.set_distance(a, x);
    assemble("varadhan_indicator", space, grid, logs, d, -d * d / 2.0)
}

/// Outcome of the integrated Gaussian estimate scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianThreshold {
    /// Smallest time from which the bound holds on the sampled grid.
    pub t_star: f64,
    pub no_violation: bool,
    /// Violated at the largest sampled time as well.
    pub violated_at_grid_max: bool,
    pub distance: f64,
    /// `(t, ln LHS, ln RHS)` per grid point, increasing in t.
    pub samples: Vec<(f64, f64, f64)>,
}

pub const DEFAULT_THRESHOLD_GRID: (f64, f64, usize) = (1e-4, 10.0, 81);

/// Locate where `(1_A, T_t 1_B) <= sqrt(m(A) m(B)) exp(-d(A,B)^2 / 2t)`
/// starts to hold. Bisection refines the crossing above the largest
/// violated grid time.
pub fn gaussian_bound_threshold(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    a: &Region,
    b: &Region,
    t_grid: Option<&[f64]>,
) -> Result<GaussianThreshold> {
    let space = cache.space();
    let mut grid = match t_grid {
        Some(g) => prepare_grid(g)?,
        None => {
            let (lo, hi, n) = DEFAULT_THRESHOLD_GRID;
            crate::fit::log_grid_decreasing(lo, hi, n)
        }
    };
    grid.reverse();
    let d = metric.region_distance(a, b);
    let log_rhs_base = 0.5 * (a.mass(space).ln() + b.mass(space).ln());
    let log_gap = |t: f64| -> Result<(f64, f64)> {
        let lhs = cache.log_pairing(t, a.vertices(), b.vertices())?;
        let rhs = log_rhs_base - d * d / (2.0 * t);
        Ok((lhs, rhs))
    };
    let samples: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .map(|&t| log_gap(t).map(|(l, r)| (t, l, r)))
        .collect::<Result<_>>()?;
    // Tolerate roundoff where the bound is an identity-level equality.
    let violated = |l: f64, r: f64| l > r + 1e-12 * r.abs().max(1.0);
    let last_bad = samples.iter().rposition(|&(_, l, r)| violated(l, r));
    let Some(i) = last_bad else {
        return Ok(GaussianThreshold {
            t_star: grid[0],
            no_violation: true,
            violated_at_grid_max: false,
            distance: d,
            samples,
        });
    };
    if i + 1 == samples.len() {
        return Ok(GaussianThreshold {
            t_star: grid[i],
            no_violation: false,
            violated_at_grid_max: true,
            distance: d,
            samples,
        });
    }
    let (mut lo, mut hi) = (grid[i].ln(), grid[i + 1].ln());
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (l, r) = log_gap(mid.exp())?;
        if violated(l, r) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(GaussianThreshold {
        t_star: hi.exp(),
        no_violation: false,
        violated_at_grid_max: false,
        distance: d,
        samples,
    })
}
