//! Empirical constants for volume doubling, the weak Poincaré inequality and
//! the parabolic Harnack inequality, plus a volume-scaling check.
//!
//! Balls are open and measured with the certified lower metric bound, so
//! they are never smaller than the true balls.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::fit_short_time;
use crate::form::SpectralCache;
use crate::metric::IntrinsicMetric;
use crate::space::{Region, StateSpace, Vertex};

/// Values below this are treated as numerically zero in Harnack ratios.
pub const HARNACK_FLOOR: f64 = 1e-280;
pub const HARNACK_TIME_SAMPLES: usize = 8;
const HARNACK_MAX_SOURCES: usize = 9;
const HARNACK_MAX_CENTERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InequalityKind {
    Vd,
    Pi,
    Hi,
    VolScale,
}

impl InequalityKind {
    pub fn name(self) -> &'static str {
        match self {
            InequalityKind::Vd => "vd",
            InequalityKind::Pi => "pi",
            InequalityKind::Hi => "hi",
            InequalityKind::VolScale => "volscale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalitySample {
    pub center: Vertex,
    pub radius: f64,
    /// `NaN` when the sample has no time coordinate.
    pub time: f64,
    pub value: f64,
    /// Kind-specific columns named by the report's `detail_columns`.
    pub details: Vec<f64>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub kind: InequalityKind,
    pub region: String,
    pub radii: Vec<f64>,
    pub times: Vec<f64>,
    pub detail_columns: Vec<String>,
    pub samples: Vec<InequalitySample>,
    /// Max over unflagged samples.
    pub best: f64,
    pub flags: Vec<String>,
}

fn best_of(samples: &[InequalitySample]) -> f64 {
    samples
        .iter()
        .filter(|s| s.flag.is_none())
        .map(|s| s.value)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn ball_inside(ball: &[Vertex], region: &Region) -> bool {
    ball.iter().all(|&v| region.contains(v))
}

fn mass_of(space: &StateSpace, vs: &[Vertex]) -> f64 {
    vs.iter().map(|&v| space.mass(v)).sum()
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::validation(
            "radii must be a nonempty list of positive lengths",
        ));
    }
    Ok(())
}

/// `N = max log2(m(B_2r)/m(B_r))` over centers of `region` with
/// `B_2r ⊆ region`.
///
/// Also re-checks `vol(r') <= (r'/r)^(N + 0.1) vol(r)` for nested radius
/// pairs of each center; violations are counted in the flags.
pub fn doubling_exponent(
    space: &StateSpace,
    metric: &IntrinsicMetric,
    region: &Region,
    radii: &[f64],
) -> Result<InequalityReport> {
    check_radii(radii)?;
    let mut radii = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    let per_center: Vec<Vec<InequalitySample>> = region
        .vertices()
        .par_iter()
        .map(|&x| {
            radii
                .iter()
                .filter_map(|&r| {
                    let big = metric.ball(x, 2.0 * r);
                    if !ball_inside(&big, region) {
                        return None;
                    }
                    let small = metric.ball(x, r);
                    let (vr, v2r) = (mass_of(space, &small), mass_of(space, &big));
                    Some(InequalitySample {
                        center: x,
                        radius: r,
                        time: f64::NAN,
                        value: (v2r / vr).log2(),
                        details: vec![small.len() as f64, big.len() as f64, vr, v2r],
                        flag: None,
                    })
                })
                .collect()
        })
        .collect();
    let samples: Vec<InequalitySample> = per_center.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::Undefined(format!(
            "no admissible balls with B_2r inside {}",
            region.description()
        )));
    }
    let best = best_of(&samples);
    let mut flags = Vec::new();
    let violations = nested_volume_violations(space, metric, &samples, best + 0.1);
    if violations > 0 {
        flags.push(format!(
            "nested volume check failed for {violations} radius pairs"
        ));
    }
    Ok(InequalityReport {
        kind: InequalityKind::Vd,
        region: region.description().to_string(),
        radii,
        times: Vec::new(),
        detail_columns: ["n_ball_r", "n_ball_2r", "vol_r", "vol_2r"]
            .map(String::from)
            .to_vec(),
        samples,
        best,
        flags,
    })
}

/// Count nested pairs `r < r'` at a sampled center with
/// `vol(r') > (r'/r)^exponent vol(r)`.
pub fn nested_volume_violations(
    space: &StateSpace,
    metric: &IntrinsicMetric,
    samples: &[InequalitySample],
    exponent: f64,
) -> usize {
    let mut count = 0;
    for a in samples {
        for b in samples {
            if a.center != b.center || b.radius <= a.radius {
                continue;
            }
            let va = mass_of(space, &metric.ball(a.center, a.radius));
            let vb = mass_of(space, &metric.ball(a.center, b.radius));
            if vb > (b.radius / a.radius).powf(exponent) * va * (1.0 + 1e-12) {
                count += 1;
            }
        }
    }
    count
}

/// Weak Poincaré constant at one ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareResult {
    pub center: Vertex,
    pub radius: f64,
    pub kappa: f64,
    /// Smallest positive generalized eigenvalue.
    pub lambda: f64,
    pub ball_r: Vec<Vertex>,
    pub ball_2r: Vec<Vertex>,
    /// Optimizer on the full vertex set: its values on `B_r` plus the
    /// energy-minimizing extension over the part of `B_2r` connected to
    /// `B_r`; 0 elsewhere.
    pub eigenfunction: Vec<f64>,
}

/// `(sum_{B_r} (u - u_r)^2 m, energy of u over edges inside B_2r)`, where the
/// energy counts `sum_{v in B_2r} gamma(u)(v) m(v)` restricted to edges with
/// both ends in the ball.
pub fn poincare_terms(
    space: &StateSpace,
    ball_r: &[Vertex],
    ball_2r: &[Vertex],
    u: &[f64],
) -> (f64, f64) {
    let mr = mass_of(space, ball_r);
    let mean = ball_r.iter().map(|&v| u[v] * space.mass(v)).sum::<f64>() / mr;
    let var = ball_r
        .iter()
        .map(|&v| (u[v] - mean).powi(2) * space.mass(v))
        .sum();
    let mut inside = vec![false; space.len()];
    for &v in ball_2r {
        inside[v] = true;
    }
    let mut energy = 0.0;
    for &v in ball_2r {
        for &(y, w) in space.neighbors(v) {
            if inside[y] {
                energy += w * (u[v] - u[y]).powi(2);
            }
        }
    }
    (var, energy)
}

/// `kappa = 1/(r^2 lambda*)` with `lambda*` the smallest positive
/// eigenvalue of (energy on `B_2r`, variance on `B_r`).
pub fn poincare_constant(
    space: &StateSpace,
    metric: &IntrinsicMetric,
    x: Vertex,
    r: f64,
) -> Result<PoincareResult> {
    space.check_vertex(x)?;
    check_radii(&[r])?;
    let ball_r = metric.ball(x, r);
    let ball_2r = metric.ball(x, 2.0 * r);
    if ball_r.len() < 2 {
        return Err(Error::Undefined(format!(
            "ball of radius {r} at vertex {x} has {} vertex; Poincaré constant undefined",
            ball_r.len()
        )));
    }
    let n = space.len();
    let mut in_big = vec![false; n];
    for &v in &ball_2r {
        in_big[v] = true;
    }
    let mut in_small = vec![false; n];
    for &v in &ball_r {
        in_small[v] = true;
    }
    // Vertices of B_2r joined to B_r by edges inside B_2r.
    let mut keep = vec![false; n];
    let mut stack: Vec<Vertex> = ball_r.clone();
    for &v in &ball_r {
        keep[v] = true;
    }
    while let Some(v) = stack.pop() {
        for &(y, _) in space.neighbors(v) {
            if in_big[y] && !keep[y] {
                keep[y] = true;
                stack.push(y);
            }
        }
    }
    let outer: Vec<Vertex> = ball_2r
        .iter()
        .copied()
        .filter(|&v| keep[v] && !in_small[v])
        .collect();
    let ni = ball_r.len();
    let ne = outer.len();
    let mut idx = vec![usize::MAX; n];
    for (i, &v) in ball_r.iter().chain(&outer).enumerate() {
        idx[v] = i;
    }
    // Energy quadratic form: each inside edge counted from both ends.
    let mut k = DMatrix::<f64>::zeros(ni + ne, ni + ne);
    for v in ball_r.iter().chain(&outer).copied() {
        for &(y, w) in space.neighbors(v) {
            if idx[y] == usize::MAX {
                continue;
            }
            let (a, b) = (idx[v], idx[y]);
            k[(a, a)] += 2.0 * w;
            k[(a, b)] -= 2.0 * w;
        }
    }
    // Harmonic extension: K_S = K_II - K_IE K_EE^{-1} K_EI.
    let kii = k.view((0, 0), (ni, ni)).into_owned();
    let (ks, ext) = if ne > 0 {
        let kie = k.view((0, ni), (ni, ne)).into_owned();
        let kee = k.view((ni, ni), (ne, ne)).into_owned();
        let chol = Cholesky::new(kee)
            .ok_or_else(|| Error::Numerical("outer block of the ball is singular".into()))?;
        let x_ei = chol.solve(&kie.transpose());
        (&kii - &kie * &x_ei, Some(x_ei))
    } else {
        (kii, None)
    };
    let sqrt_m: Vec<f64> = ball_r.iter().map(|&v| space.mass(v).sqrt()).collect();
    let total: f64 = ball_r.iter().map(|&v| space.mass(v)).sum();
    let mut s = DMatrix::<f64>::zeros(ni, ni);
    let shift = 1.0 + ks.iter().map(|v| v.abs()).fold(0.0, f64::max) / total * 4.0 * ni as f64;
    for a in 0..ni {
        for b in 0..ni {
            let sa = sqrt_m[a] / total.sqrt();
            let sb = sqrt_m[b] / total.sqrt();
            s[(a, b)] = ks[(a, b)] / (sqrt_m[a] * sqrt_m[b]) + shift * sa * sb;
        }
    }
    let eig = SymmetricEigen::new(s);
    let (kmin, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("ball has at least two vertices");
    let mut eigenfunction = vec![0.0; n];
    let vi: Vec<f64> = (0..ni)
        .map(|a| eig.eigenvectors[(a, kmin)] / sqrt_m[a])
        .collect();
    for (a, &v) in ball_r.iter().enumerate() {
        eigenfunction[v] = vi[a];
    }
    if let Some(x_ei) = ext {
        for (e, &v) in outer.iter().enumerate() {
            eigenfunction[v] = -(0..ni).map(|a| x_ei[(e, a)] * vi[a]).sum::<f64>();
        }
    }
    let scale = ks.iter().map(|v| v.abs()).fold(0.0, f64::max) / total;
    let kappa = if lambda > 1e-12 * scale {
        1.0 / (r * r * lambda)
    } else {
        f64::INFINITY
    };
    Ok(PoincareResult {
        center: x,
        radius: r,
        kappa,
        lambda,
        ball_r,
        ball_2r,
        eigenfunction,
    })
}

/// Poincaré constants over centers and radii, as a report.
pub fn poincare_report(
    space: &StateSpace,
    metric: &IntrinsicMetric,
    region: &Region,
    radii: &[f64],
) -> Result<InequalityReport> {
    check_radii(radii)?;
    let mut samples = Vec::new();
    for &r in radii {
        for &x in region.vertices() {
            if !ball_inside(&metric.ball(x, 2.0 * r), region) {
                continue;
            }
            let sample = match poincare_constant(space, metric, x, r) {
                Ok(p) => InequalitySample {
                    center: x,
                    radius: r,
                    time: f64::NAN,
                    value: p.kappa,
                    details: vec![p.ball_r.len() as f64, p.ball_2r.len() as f64, p.lambda],
                    flag: (!p.kappa.is_finite()).then(|| "ball splits; kappa infinite".into()),
                },
                Err(Error::Undefined(msg)) => InequalitySample {
                    center: x,
                    radius: r,
                    time: f64::NAN,
                    value: f64::NAN,
                    details: vec![f64::NAN; 3],
                    flag: Some(msg),
                },
                Err(e) => return Err(e),
            };
            samples.push(sample);
        }
    }
    if samples.is_empty() {
        return Err(Error::Undefined(
            "no admissible balls for the Poincaré sweep".into(),
        ));
    }
    Ok(InequalityReport {
        kind: InequalityKind::Pi,
        region: region.description().to_string(),
        radii: radii.to_vec(),
        times: Vec::new(),
        detail_columns: ["n_ball_r", "n_ball_2r", "lambda"]
            .map(String::from)
            .to_vec(),
        best: best_of(&samples),
        samples,
        flags: Vec::new(),
    })
}

fn spread(items: &[Vertex], k: usize) -> Vec<Vertex> {
    if items.len() <= k {
        return items.to_vec();
    }
    let mut out: Vec<Vertex> = (0..k)
        .map(|i| items[(i * (items.len() - 1) + (k - 1) / 2) / (k - 1).max(1)])
        .collect();
    out.dedup();
    out
}

/// Parabolic Harnack constant for the solutions `u_s = p_s(x0, .)`.
///
/// `time_factors` are cylinder end times in units of `r^2` and must be at
/// least 4 so that `]t - 4r^2, t[` lies in positive time. Each sample is a
/// (center, radius, time) triple; its value is the largest ratio
/// `sup_{Q-} u / inf_{Q+} u` over up to ten sources in `B_2r` (always
/// including the center). Time intervals are sampled on half-open grids
/// `(a, b]` with eight points. `centers` defaults to up to five admissible
/// vertices spread over the region.
pub fn harnack_constant(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    region: &Region,
    radii: &[f64],
    time_factors: &[f64],
    centers: Option<&[Vertex]>,
) -> Result<InequalityReport> {
    check_radii(radii)?;
    if time_factors.is_empty() || time_factors.iter().any(|f| !(*f >= 4.0 && f.is_finite())) {
        return Err(Error::InvalidTime(
            "Harnack time factors must be at least 4 (window ]t - 4r^2, t[ in positive time)"
                .into(),
        ));
    }
    let mut tasks = Vec::new();
    for &r in radii {
        let admissible: Vec<Vertex> = region
            .vertices()
            .iter()
            .copied()
            .filter(|&x| ball_inside(&metric.ball(x, 2.0 * r), region))
            .collect();
        let chosen = match centers {
            Some(c) => c
                .iter()
                .copied()
                .filter(|x| admissible.contains(x))
                .collect(),
            None => spread(&admissible, HARNACK_MAX_CENTERS),
        };
        for x in chosen {
            for &f in time_factors {
                tasks.push((x, r, f));
            }
        }
    }
    if tasks.is_empty() {
        return Err(Error::Undefined("no admissible Harnack cylinders".into()));
    }
    let samples: Vec<InequalitySample> = tasks
        .par_iter()
        .map(|&(x, r, f)| harnack_sample(cache, metric, x, r, f))
        .collect::<Result<_>>()?;
    let mut flags = vec!["time windows sampled on half-open grids (a, b]".to_string()];
    let excluded = samples.iter().filter(|s| s.flag.is_some()).count();
    if excluded > 0 {
        flags.push(format!(
            "{excluded} samples excluded below the numerical floor"
        ));
    }
    Ok(InequalityReport {
        kind: InequalityKind::Hi,
        region: region.description().to_string(),
        radii: radii.to_vec(),
        times: time_factors.to_vec(),
        detail_columns: ["sup_minus", "inf_plus", "sources", "worst_source"]
            .map(String::from)
            .to_vec(),
        best: best_of(&samples),
        samples,
        flags,
    })
}

fn harnack_sample(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    x: Vertex,
    r: f64,
    factor: f64,
) -> Result<InequalitySample> {
    let r2 = r * r;
    let t = factor * r2;
    let ball = metric.ball(x, r);
    let big = metric.ball(x, 2.0 * r);
    let mut sources = spread(&big, HARNACK_MAX_SOURCES);
    if !sources.contains(&x) {
        sources.push(x);
    }
    let grid = |a: f64, b: f64| -> Vec<f64> {
        (1..=HARNACK_TIME_SAMPLES)
            .map(|j| a + (b - a) * j as f64 / HARNACK_TIME_SAMPLES as f64)
            .collect()
    };
    let minus = grid(t - 3.0 * r2, t - 2.0 * r2);
    let plus = grid(t - r2, t);
    let floor = HARNACK_FLOOR.ln();
    let mut best: Option<(f64, f64, f64, Vertex)> = None;
    for &x0 in &sources {
        let mut sup = f64::NEG_INFINITY;
        for &s in &minus {
            for &y in &ball {
                sup = sup.max(cache.heat_kernel(s, x0, y)?.log_value);
            }
        }
        let mut inf = f64::INFINITY;
        for &s in &plus {
            for &y in &ball {
                inf = inf.min(cache.heat_kernel(s, x0, y)?.log_value);
            }
        }
        if inf < floor {
            continue;
        }
        let ratio = sup - inf;
        if best.is_none_or(|b| ratio > b.0) {
            best = Some((ratio, sup, inf, x0));
        }
    }
    Ok(match best {
        Some((ratio, sup, inf, x0)) => InequalitySample {
            center: x,
            radius: r,
            time: t,
            value: ratio.exp(),
            details: vec![sup.exp(), inf.exp(), sources.len() as f64, x0 as f64],
            flag: None,
        },
        None => InequalitySample {
            center: x,
            radius: r,
            time: t,
            value: f64::NAN,
            details: vec![f64::NAN, f64::NAN, sources.len() as f64, f64::NAN],
            flag: Some("inf over Q+ below numerical floor for every source".into()),
        },
    })
}

/// One row of the volume-scaling table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeScalingRow {
    pub t: f64,
    pub radius: f64,
    pub volume: f64,
    pub t_log_volume: f64,
    /// `(N/2)|t log t| + t |log vol(sqrt(eps), x)|`.
    pub bound: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeScalingReport {
    pub center: Vertex,
    pub epsilon: f64,
    pub exponent: f64,
    pub base_volume: f64,
    pub rows: Vec<VolumeScalingRow>,
    pub fitted_limit: f64,
    pub all_bounds_hold: bool,
}

/// Table of `t log vol(sqrt(eps t), x)` with the proof bound checked per
/// point. Balls always contain `x`, so the volume never drops below `m(x)`.
pub fn volume_scaling_curve(
    space: &StateSpace,
    metric: &IntrinsicMetric,
    x: Vertex,
    epsilon: f64,
    t_grid: &[f64],
    exponent: f64,
) -> Result<VolumeScalingReport> {
    space.check_vertex(x)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::validation(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let grid = crate::asymptotics::prepare_grid(t_grid)?;
    let vol = |r: f64| mass_of(space, &metric.ball(x, r));
    let base = vol(epsilon.sqrt());
    let rows: Vec<VolumeScalingRow> = grid
        .iter()
        .map(|&t| {
            let radius = (epsilon * t).sqrt();
            let v = vol(radius);
            let tl = t * v.ln();
            let bound = 0.5 * exponent * (t * t.ln()).abs() + t * base.ln().abs();
            VolumeScalingRow {
                t,
                radius,
                volume: v,
                t_log_volume: tl,
                bound,
                bound_holds: tl.abs() <= bound * (1.0 + 1e-12),
            }
        })
        .collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.t_log_volume).collect();
    let fitted_limit = fit_short_time(&ts, &vs, None)?.limit;
    Ok(VolumeScalingReport {
        center: x,
        epsilon,
        exponent,
        base_volume: base,
        all_bounds_hold: rows.iter().all(|r| r.bound_holds),
        rows,
        fitted_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_lattice_1d, build_two_state};

    #[test]
    fn single_vertex_balls_contribute_zero() {
        let s = build_lattice_1d(16, 1.0, 1.0).unwrap();
        let m = IntrinsicMetric::certified(&s);
        let rep = doubling_exponent(&s, &m, &Region::full(&s), &[0.01]).unwrap();
        assert!(rep.samples.iter().all(|x| x.value == 0.0));
        assert_eq!(rep.best, 0.0);
    }

    #[test]
    fn no_admissible_balls_is_an_error() {
        let s = build_lattice_1d(16, 1.0, 1.0).unwrap();
        let m = IntrinsicMetric::certified(&s);
        let r = Region::interval(&s, 0.4, 0.6).unwrap();
        assert!(doubling_exponent(&s, &m, &r, &[0.3]).is_err());
    }

    #[test]
    fn poincare_one_vertex_ball_is_undefined() {
        let s = build_lattice_1d(16, 1.0, 1.0).unwrap();
        let m = IntrinsicMetric::certified(&s);
        assert!(matches!(
            poincare_constant(&s, &m, 8, 0.01),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn poincare_eigenfunction_attains_equality() {
        let s = build_lattice_1d(64, 1.0, 1.0).unwrap();
        let m = IntrinsicMetric::certified(&s);
        let p = poincare_constant(&s, &m, 32, 0.1).unwrap();
        let (var, energy) = poincare_terms(&s, &p.ball_r, &p.ball_2r, &p.eigenfunction);
        assert!((var - p.kappa * 0.01 * energy).abs() <= 1e-8 * var.max(1e-300));
    }

    #[test]
    fn two_state_harnack_is_finite() {
        let s = build_two_state(1.0, 1.0, 1.0).unwrap();
        let m = IntrinsicMetric::certified(&s);
        let c = SpectralCache::new(s.clone()).unwrap();
        let rep = harnack_constant(&c, &m, &Region::full(&s), &[0.5], &[8.0], None).unwrap();
        assert!(rep.best.is_finite() && rep.best >= 1.0);
        assert!(harnack_constant(&c, &m, &Region::full(&s), &[0.5], &[2.0], None).is_err());
    }

    #[test]
    fn volume_curve_example() {
        let s = build_lattice_1d(256, 1.0, 1.0).unwrap();
        let m = IntrinsicMetric::certified(&s);
        let rep = volume_scaling_curve(&s, &m, 128, 1.0, &[0.01], 1.0).unwrap();
        assert!((rep.rows[0].t_log_volume + 0.0161).abs() < 2e-4);
    }
}
