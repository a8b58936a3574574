//! Exact simulation of the rescaled chain `X^s_t = X_{s t}` and checkpoint
//! tube probabilities.
//!
//! Sample `i` of a run with master seed `z` draws from ChaCha8 stream `i`
//! of key `z`, so results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{prepare_grid, AsymptoticProbe};
use crate::energy::{ac2_energy, Curve, CurvePoint, DEFAULT_QUADRATURE};
use crate::error::{Error, Result};
use crate::fdd::{fdd_ldp_curve, fdd_log_probability, CylinderEvent, RateBracket, TimePartition};
use crate::form::SpectralCache;
use crate::metric::IntrinsicMetric;
use crate::space::{Region, StateSpace, Vertex};

pub const MIN_TUBE_SAMPLES: usize = 1000;
/// Exact FDD replaces Monte Carlo when `vertices * checkpoints` is at most
/// this.
pub const EXACT_FDD_LIMIT: usize = 1_000_000;
const WILSON_Z: f64 = 1.959_963_984_540_054;

/// One path on the rescaled horizon `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    /// Increasing, in `(0, 1]`.
    pub jump_times: Vec<f64>,
    /// `vertices[0]` is the start; `vertices[k+1]` is entered at
    /// `jump_times[k]`.
    pub vertices: Vec<Vertex>,
    pub seed: u64,
    pub stream: u64,
}

impl PathSample {
    /// Position at rescaled time `t`.
    pub fn at(&self, t: f64) -> Vertex {
        self.vertices[self.jump_times.partition_point(|&u| u <= t)]
    }

    pub fn end(&self) -> Vertex {
        *self.vertices.last().unwrap()
    }
}

/// Jump tables of a space.
struct Jumper {
    rate: Vec<f64>,
    // Cumulative jump probabilities per vertex.
    cum: Vec<Vec<(Vertex, f64)>>,
}

impl Jumper {
    fn new(space: &StateSpace) -> Self {
        let mut rate = Vec::with_capacity(space.len());
        let mut cum = Vec::with_capacity(space.len());
        for x in 0..space.len() {
            let total: f64 = space.neighbors(x).iter().map(|e| e.1).sum();
            rate.push(space.jump_rate(x));
            let mut acc = 0.0;
            let mut row: Vec<(Vertex, f64)> = space
                .neighbors(x)
                .iter()
                .map(|&(y, w)| {
                    acc += w / total;
                    (y, acc)
                })
                .collect();
            if let Some(last) = row.last_mut() {
                last.1 = 1.0;
            }
            cum.push(row);
        }
        Jumper { rate, cum }
    }

    fn holding(&self, x: Vertex, rng: &mut ChaCha8Rng) -> f64 {
        if self.rate[x] <= 0.0 {
            return f64::INFINITY;
        }
        let u = 1.0 - rng.random::<f64>();
        -u.ln() / self.rate[x]
    }

    fn jump(&self, x: Vertex, rng: &mut ChaCha8Rng) -> Vertex {
        let u: f64 = rng.random();
        let row = &self.cum[x];
        row[row.partition_point(|e| e.1 <= u).min(row.len() - 1)].0
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_scale(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTime(format!(
            "time scale s = {s} must be positive"
        )))
    }
}

fn simulate(jumper: &Jumper, s: f64, x0: Vertex, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Vertex>) {
    let mut times = Vec::new();
    let mut vertices = vec![x0];
    let mut x = x0;
    let mut tau = 0.0;
    loop {
        tau += jumper.holding(x, rng);
        if tau > s {
            return (times, vertices);
        }
        x = jumper.jump(x, rng);
        times.push(tau / s);
        vertices.push(x);
    }
}

/// Path of stream 0 for `seed`.
pub fn sample_path(cache: &SpectralCache, s: f64, x0: Vertex, seed: u64) -> Result<PathSample> {
    sample_path_stream(cache.space(), s, x0, seed, 0)
}

pub fn sample_path_stream(
    space: &StateSpace,
    s: f64,
    x0: Vertex,
    seed: u64,
    stream: u64,
) -> Result<PathSample> {
    check_scale(s)?;
    space.check_vertex(x0)?;
    let jumper = Jumper::new(space);
    let (jump_times, vertices) = simulate(&jumper, s, x0, &mut stream_rng(seed, stream));
    Ok(PathSample {
        jump_times,
        vertices,
        seed,
        stream,
    })
}

/// Counts of `X^s_1` over `n` paths from `x0`.
pub fn endpoint_counts(
    space: &StateSpace,
    s: f64,
    x0: Vertex,
    n: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    check_scale(s)?;
    space.check_vertex(x0)?;
    let jumper = Jumper::new(space);
    let ends: Vec<Vertex> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            *simulate(&jumper, s, x0, &mut stream_rng(seed, i))
                .1
                .last()
                .unwrap()
        })
        .collect();
    let mut counts = vec![0u64; space.len()];
    for v in ends {
        counts[v] += 1;
    }
    Ok(counts)
}

/// Paths within distance `delta` of `gamma` at every checkpoint.
#[derive(Debug, Clone)]
pub struct TubeEvent {
    pub center: Curve,
    pub delta: f64,
    pub checkpoints: TimePartition,
}

impl TubeEvent {
    pub fn new(center: Curve, delta: f64, checkpoints: TimePartition) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::validation(format!(
                "tube radius must be positive, got {delta}"
            )));
        }
        Ok(TubeEvent {
            center,
            delta,
            checkpoints,
        })
    }

    /// Center vertex at each checkpoint.
    pub fn centers(&self, space: &StateSpace) -> Result<Vec<Vertex>> {
        self.checkpoints
            .times()
            .iter()
            .map(|&t| match self.center.eval(t)? {
                CurvePoint::Vertex(v) => space.check_vertex(v).map(|_| v),
                CurvePoint::Coords(c) => space.nearest_vertex(&c),
            })
            .collect()
    }

    /// Balls `B(gamma(t_j), delta)` at the checkpoints.
    pub fn sets(&self, space: &StateSpace, metric: &IntrinsicMetric) -> Result<Vec<Region>> {
        Ok(self
            .centers(space)?
            .into_iter()
            .map(|v| metric.ball_region(v, self.delta))
            .collect())
    }

    /// The same event as a cylinder with the starting law `m` on the first
    /// ball.
    pub fn cylinder(&self, space: &StateSpace, metric: &IntrinsicMetric) -> Result<CylinderEvent> {
        CylinderEvent::new(
            space,
            self.checkpoints.clone(),
            self.sets(space, metric)?,
            None,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeEstimate {
    pub hits: u64,
    pub samples: u64,
    pub estimate: f64,
    /// Wilson 95% interval.
    pub lower: f64,
    pub upper: f64,
    /// Binomial standard error at the estimate.
    pub std_error: f64,
    pub flags: Vec<String>,
}

pub fn wilson_interval(hits: u64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lower = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let upper = if hits as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lower, upper)
}

/// Monte Carlo estimate of the tube probability at scale `s`.
pub fn tube_probability(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    event: &TubeEvent,
    s: f64,
    n_samples: usize,
    seed: u64,
) -> Result<TubeEstimate> {
    check_scale(s)?;
    if n_samples < MIN_TUBE_SAMPLES {
        return Err(Error::validation(format!(
            "tube estimates need at least {MIN_TUBE_SAMPLES} samples, got {n_samples}"
        )));
    }
    let space = cache.space();
    let sets = event.sets(space, metric)?;
    let masks: Vec<Vec<bool>> = sets.iter().map(|a| a.mask(space.len())).collect();
    let start = &sets[0];
    let mut acc = 0.0;
    let start_cum: Vec<f64> = start
        .vertices()
        .iter()
        .map(|&v| {
            acc += space.mass(v);
            acc
        })
        .collect();
    let checkpoints: Vec<f64> = event.checkpoints.times().iter().map(|t| t * s).collect();
    let jumper = Jumper::new(space);
    let hits: u64 = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let u = rng.random::<f64>() * acc;
            let k = start_cum
                .partition_point(|&c| c <= u)
                .min(start_cum.len() - 1);
            let x0 = start.vertices()[k];
            u64::from(stays_in_tube(&jumper, x0, &checkpoints, &masks, &mut rng))
        })
        .sum();
    let n = n_samples as u64;
    let estimate = hits as f64 / n as f64;
    let (lower, upper) = wilson_interval(hits, n);
    let mut flags = Vec::new();
    if hits == 0 {
        flags.push("no hits: only the upper confidence bound is informative".to_string());
    }
    Ok(TubeEstimate {
        hits,
        samples: n,
        estimate,
        lower,
        upper,
        std_error: (estimate * (1.0 - estimate) / n as f64).sqrt(),
        flags,
    })
}

fn stays_in_tube(
    jumper: &Jumper,
    x0: Vertex,
    checkpoints: &[f64],
    masks: &[Vec<bool>],
    rng: &mut ChaCha8Rng,
) -> bool {
    let mut x = x0;
    let mut tau = 0.0;
    let mut next = 0;
    loop {
        let leave = tau + jumper.holding(x, rng);
        while next < checkpoints.len() && checkpoints[next] <= leave {
            if !masks[next][x] {
                return false;
            }
            next += 1;
        }
        if next == checkpoints.len() {
            return true;
        }
        tau = leave;
        x = jumper.jump(x, rng);
    }
}

/// How a grid point of a tube scan was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeMethod {
    ExactFdd,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeLdp {
    pub method: TubeMethod,
    /// Extrapolation of `s log P`; its target is `-rate` of the tube sets.
    pub probe: AsymptoticProbe,
    pub rate_bracket: RateBracket,
    /// `H~` of the center curve.
    pub center_energy: f64,
    /// `[-H~(gamma), -rate(enlarged tube)]`.
    pub energy_bracket: (f64, f64),
    pub flags: Vec<String>,
}

/// `s log P(tube)` over `s_grid`, extrapolated and compared with the rate
/// and energy brackets. Small problems are computed exactly; otherwise each
/// grid point is a Monte Carlo estimate with `n_samples` paths.
#[allow(clippy::too_many_arguments)]
pub fn tube_ldp_estimate(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    event: &TubeEvent,
    s_grid: &[f64],
    n_samples: usize,
    seed: u64,
    beta: f64,
) -> Result<TubeLdp> {
    let space = cache.space();
    let grid = prepare_grid(s_grid)?;
    let cylinder = event.cylinder(space, metric)?;
    let exact = space.len() * event.checkpoints.times().len() <= EXACT_FDD_LIMIT;
    let mut curve = fdd_ldp_curve(cache, metric, &cylinder, &grid, beta)?;
    let mut flags = Vec::new();
    let method = if exact {
        TubeMethod::ExactFdd
    } else {
        let logs: Vec<f64> = grid
            .iter()
            .map(|&s| {
                tube_probability(cache, metric, event, s, n_samples, seed).map(|e| {
                    if e.hits > 0 {
                        e.estimate.ln()
                    } else {
                        f64::NAN
                    }
                })
            })
            .collect::<Result<_>>()?;
        if logs.iter().all(|l| l.is_nan()) {
            flags.push("every grid point underflowed; no extrapolation".to_string());
        } else {
            let rate = curve.bracket.original.rate;
            curve.probe = crate::asymptotics::assemble_windowed(
                "tube",
                space.mesh(),
                curve.probe.window,
                grid,
                logs,
                (2.0 * rate).sqrt(),
                -rate,
            )?;
        }
        TubeMethod::MonteCarlo
    };
    let center = ac2_energy(&event.center, DEFAULT_QUADRATURE)?;
    flags.extend(center.flags.iter().map(|f| format!("center curve: {f}")));
    curve.probe.kind = "tube".to_string();
    Ok(TubeLdp {
        method,
        energy_bracket: (-center.value, -curve.bracket.enlarged.rate),
        center_energy: center.value,
        rate_bracket: curve.bracket,
        probe: curve.probe,
        flags,
    })
}

/// Exact tube probability through the cylinder event.
pub fn tube_probability_exact(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    event: &TubeEvent,
    s: f64,
) -> Result<f64> {
    let cylinder = event.cylinder(cache.space(), metric)?;
    fdd_log_probability(cache, &cylinder, s).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_lattice_1d, build_two_state};

    #[test]
    fn tiny_scale_paths_are_constant() {
        let s = build_lattice_1d(16, 1.0, 1.0).unwrap();
        let c = SpectralCache::new(s).unwrap();
        let p = sample_path(&c, 1e-9, 5, 1).unwrap();
        assert!(p.jump_times.is_empty() && p.end() == 5);
    }

    #[test]
    fn paths_are_reproducible_and_adjacent() {
        let s = build_lattice_1d(16, 1.0, 1.0).unwrap();
        let c = SpectralCache::new(s.clone()).unwrap();
        let a = sample_path(&c, 0.05, 8, 42).unwrap();
        let b = sample_path(&c, 0.05, 8, 42).unwrap();
        assert_eq!(a, b);
        assert!(!a.jump_times.is_empty());
        assert!(a.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.jump_times.iter().all(|t| *t > 0.0 && *t <= 1.0));
        assert!(a.vertices.windows(2).all(|w| s.weight(w[0], w[1]) > 0.0));
        assert_eq!(a.at(0.0), 8);
        assert_ne!(a, sample_path(&c, 0.05, 8, 43).unwrap());
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 1000);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.01);
        let (lo, hi) = wilson_interval(500, 1000);
        assert!(lo < 0.5 && hi > 0.5 && (hi - lo - 0.062).abs() < 2e-3);
    }

    #[test]
    fn tube_needs_samples() {
        let s = build_two_state(1.0, 1.0, 1.0).unwrap();
        let c = SpectralCache::new(s.clone()).unwrap();
        let m = IntrinsicMetric::certified(&s);
        let curve = Curve::new(
            crate::energy::CurveContext::graph(std::sync::Arc::new(s)),
            crate::energy::CurveShape::Samples {
                t: vec![0.0, 1.0],
                points: vec![CurvePoint::Vertex(0), CurvePoint::Vertex(1)],
            },
            8,
        )
        .unwrap();
        let e = TubeEvent::new(curve, 5.0, TimePartition::uniform(2).unwrap()).unwrap();
        assert!(tube_probability(&c, &m, &e, 0.1, 10, 0).is_err());
        let full = tube_probability(&c, &m, &e, 0.1, 1000, 0).unwrap();
        assert_eq!(full.hits, 1000);
        assert!(TubeEvent::new(e.center.clone(), 0.0, TimePartition::uniform(1).unwrap()).is_err());
    }
}
