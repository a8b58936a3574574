//! Finite-dimensional distributions of the rescaled process `X_{s t}` and
//! their quadratic rate, computed by dynamic programming over chains.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{assemble_windowed, prepare_grid, AsymptoticProbe, ValidityWindow};
use crate::asymptotics::{validity_window, OUTSIDE_WINDOW};
use crate::error::{Error, Result};
use crate::form::SpectralCache;
use crate::metric::IntrinsicMetric;
use crate::propagate::log_sum_exp;
use crate::space::{Region, StateSpace, Vertex};

/// DP ties within this relative margin go to the smallest vertex index.
pub const TIE_TOL: f64 = 1e-12;

/// `0 = t_0 < t_1 < ... < t_n = 1`. The one-point partition `{0}` stands
/// for an event on the starting position only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimePartition {
    times: Vec<f64>,
}

impl TimePartition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::validation("partition must start at 0"));
        }
        if times.len() > 1 && *times.last().unwrap() != 1.0 {
            return Err(Error::validation("partition must end at 1"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation(
                "partition times must be strictly increasing (repeated times are rejected)",
            ));
        }
        Ok(TimePartition { times })
    }

    /// `{0, 1/n, ..., 1}`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return TimePartition::new(vec![0.0]);
        }
        let mut t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        t[n] = 1.0;
        TimePartition::new(t)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of increments.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn increments(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn is_refined_by(&self, other: &TimePartition) -> bool {
        self.times.iter().all(|t| other.times.contains(t))
    }
}

/// `{X_{s t_i} in A_i for all i}` with a starting law on `A_0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderEvent {
    partition: TimePartition,
    sets: Vec<Region>,
    /// Dense over vertices, supported on `A_0`, summing to 1.
    initial: Vec<f64>,
}

impl CylinderEvent {
    /// `initial = None` uses `m` restricted to `A_0` and normalized.
    pub fn new(
        space: &StateSpace,
        partition: TimePartition,
        sets: Vec<Region>,
        initial: Option<&[(Vertex, f64)]>,
    ) -> Result<Self> {
        if sets.len() != partition.times.len() {
            return Err(Error::DimensionMismatch {
                expected: partition.times.len(),
                got: sets.len(),
            });
        }
        if let Some(i) = sets.iter().position(|s| s.is_empty()) {
            return Err(Error::validation(format!("set A_{i} is empty")));
        }
        for s in &sets {
            if let Some(&v) = s.vertices().last() {
                space.check_vertex(v)?;
            }
        }
        let n = space.len();
        let mut law = vec![0.0; n];
        match initial {
            None => {
                for &v in sets[0].vertices() {
                    law[v] = space.mass(v);
                }
            }
            Some(entries) => {
                for &(v, w) in entries {
                    space.check_vertex(v)?;
                    if !(w >= 0.0 && w.is_finite()) {
                        return Err(Error::validation("initial weights must be nonnegative"));
                    }
                    if w > 0.0 && !sets[0].contains(v) {
                        return Err(Error::validation(format!(
                            "initial law charges vertex {v} outside A_0"
                        )));
                    }
                    law[v] += w;
                }
            }
        }
        let total: f64 = law.iter().sum();
        if !(total > 0.0) {
            return Err(Error::validation("initial law has zero mass"));
        }
        law.iter_mut().for_each(|w| *w /= total);
        Ok(CylinderEvent {
            partition,
            sets,
            initial: law,
        })
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn sets(&self) -> &[Region] {
        &self.sets
    }

    pub fn initial_law(&self) -> &[f64] {
        &self.initial
    }

    /// Insert a constraint `X_{s t} in A` at a new time `t in (0,1)`.
    pub fn insert(&self, space: &StateSpace, t: f64, set: Region) -> Result<CylinderEvent> {
        if !(t > 0.0 && t < 1.0) || self.partition.times.contains(&t) {
            return Err(Error::validation(format!("cannot insert time {t}")));
        }
        let pos = self.partition.times.partition_point(|&u| u < t);
        let mut times = self.partition.times.clone();
        times.insert(pos, t);
        let mut sets = self.sets.clone();
        sets.insert(pos, set);
        let law: Vec<(Vertex, f64)> = self
            .initial
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(v, w)| (v, *w))
            .collect();
        CylinderEvent::new(space, TimePartition::new(times)?, sets, Some(&law))
    }

    /// Same times and starting law, different sets. The law is restricted
    /// to the new `A_0` without renormalizing, so it may lose mass.
    fn with_sets(&self, sets: Vec<Region>) -> (Vec<Region>, Vec<f64>) {
        let law = self
            .initial
            .iter()
            .enumerate()
            .map(|(v, w)| if sets[0].contains(v) { *w } else { 0.0 })
            .collect();
        (sets, law)
    }
}

fn log_probability_raw(
    cache: &SpectralCache,
    partition: &TimePartition,
    sets: &[Region],
    law: &[f64],
    s: f64,
) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidTime(format!(
            "time scale s = {s} must be positive"
        )));
    }
    let n = cache.len();
    let restrict = |logs: &mut Vec<f64>, a: &Region| {
        let mask = a.mask(n);
        for (v, l) in logs.iter_mut().enumerate() {
            if !mask[v] {
                *l = f64::NEG_INFINITY;
            }
        }
    };
    let mut logs: Vec<f64> = law.iter().map(|w| w.ln()).collect();
    restrict(&mut logs, &sets[0]);
    for (i, dt) in partition.increments().into_iter().enumerate() {
        let a = &sets[i + 1];
        let prop = cache
            .uniformizer()
            .log_row(s * dt, &logs, Some(a.vertices()));
        logs = prop.log_values;
        restrict(&mut logs, a);
    }
    Ok(log_sum_exp(logs).min(0.0))
}

/// `ln P(X_{s t_i} in A_i, i = 0..n)`, exact up to rounding, by restricted
/// row propagation in log space.
pub fn fdd_log_probability(cache: &SpectralCache, event: &CylinderEvent, s: f64) -> Result<f64> {
    log_probability_raw(cache, &event.partition, &event.sets, &event.initial, s)
}

pub fn fdd_probability(cache: &SpectralCache, event: &CylinderEvent, s: f64) -> Result<f64> {
    fdd_log_probability(cache, event, s).map(f64::exp)
}

/// Optimal chain and its rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRate {
    pub rate: f64,
    pub chain: Vec<Vertex>,
}

/// `min_{x_i in A_i} sum d(x_i, x_{i+1})^2 / (2 (t_{i+1} - t_i))`.
///
/// Backward cost-to-go followed by a forward greedy pass; near-ties go to
/// the smallest vertex, so the returned chain is the lexicographically
/// smallest optimal one. The rate is re-summed along the chain in forward
/// order.
pub fn chain_rate(
    metric: &IntrinsicMetric,
    partition: &TimePartition,
    sets: &[Region],
) -> Result<ChainRate> {
    if sets.len() != partition.times.len() {
        return Err(Error::DimensionMismatch {
            expected: partition.times.len(),
            got: sets.len(),
        });
    }
    let dts = partition.increments();
    let stages = sets.len();
    let cost = |i: usize, x: Vertex, y: Vertex| {
        let d = metric.lower(x, y);
        d * d / (2.0 * dts[i])
    };
    // togo[i][k]: best cost from the k-th vertex of A_i to the end.
    let mut togo: Vec<Vec<f64>> = vec![Vec::new(); stages];
    togo[stages - 1] = vec![0.0; sets[stages - 1].len()];
    for i in (0..stages - 1).rev() {
        let next = &sets[i + 1];
        togo[i] = sets[i]
            .vertices()
            .iter()
            .map(|&x| {
                next.vertices()
                    .iter()
                    .zip(&togo[i + 1])
                    .map(|(&y, j)| cost(i, x, y) + j)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
    }
    let pick = |candidates: &mut dyn Iterator<Item = (usize, f64)>| -> usize {
        let all: Vec<(usize, f64)> = candidates.collect();
        let best = all.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let margin = TIE_TOL * (1.0 + best.abs());
        all.iter()
            .find(|c| c.1 <= best + margin)
            .expect("nonempty stage")
            .0
    };
    let mut chain = Vec::with_capacity(stages);
    let mut k = pick(&mut togo[0].iter().copied().enumerate());
    chain.push(sets[0].vertices()[k]);
    for i in 0..stages - 1 {
        let x = sets[i].vertices()[k];
        let next = &sets[i + 1];
        k = pick(
            &mut next
                .vertices()
                .iter()
                .zip(&togo[i + 1])
                .map(|(&y, j)| cost(i, x, y) + j)
                .enumerate(),
        );
        chain.push(next.vertices()[k]);
    }
    let rate = chain
        .windows(2)
        .enumerate()
        .map(|(i, w)| cost(i, w[0], w[1]))
        .sum();
    Ok(ChainRate { rate, chain })
}

pub fn fdd_rate(metric: &IntrinsicMetric, event: &CylinderEvent) -> Result<ChainRate> {
    chain_rate(metric, &event.partition, &event.sets)
}

/// Rates on the original, shrunken and enlarged sets:
/// `enlarged <= rate <= shrunk`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateBracket {
    pub beta: f64,
    pub original: ChainRate,
    /// `None` when some shrunken set is empty; the rate is then `+inf`.
    pub shrunk: Option<ChainRate>,
    pub enlarged: ChainRate,
}

impl RateBracket {
    pub fn rate_shrunk(&self) -> f64 {
        self.shrunk.as_ref().map_or(f64::INFINITY, |c| c.rate)
    }

    /// `[-rate(shrunk), -rate(enlarged)]`.
    pub fn limit_bracket(&self) -> (f64, f64) {
        (-self.rate_shrunk(), -self.enlarged.rate)
    }
}

fn shrunk_sets(metric: &IntrinsicMetric, event: &CylinderEvent, beta: f64) -> Option<Vec<Region>> {
    event.sets.iter().map(|a| metric.shrink(a, beta)).collect()
}

fn enlarged_sets(metric: &IntrinsicMetric, event: &CylinderEvent, beta: f64) -> Vec<Region> {
    event.sets.iter().map(|a| metric.enlarge(a, beta)).collect()
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "beta must be positive, got {beta}"
        )))
    }
}

pub fn fdd_rate_bracket(
    metric: &IntrinsicMetric,
    event: &CylinderEvent,
    beta: f64,
) -> Result<RateBracket> {
    check_beta(beta)?;
    let shrunk = match shrunk_sets(metric, event, beta) {
        Some(sets) => Some(chain_rate(metric, &event.partition, &sets)?),
        None => None,
    };
    Ok(RateBracket {
        beta,
        original: fdd_rate(metric, event)?,
        shrunk,
        enlarged: chain_rate(
            metric,
            &event.partition,
            &enlarged_sets(metric, event, beta),
        )?,
    })
}

/// Log-probabilities on shrunken, original and enlarged sets with the
/// original starting law, so `shrunk <= original <= enlarged`.
pub fn fdd_log_probability_sandwich(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    event: &CylinderEvent,
    s: f64,
    beta: f64,
) -> Result<(f64, f64, f64)> {
    check_beta(beta)?;
    let lo = match shrunk_sets(metric, event, beta) {
        Some(sets) => {
            let (sets, law) = event.with_sets(sets);
            log_probability_raw(cache, &event.partition, &sets, &law, s)?
        }
        None => f64::NEG_INFINITY,
    };
    let mid = fdd_log_probability(cache, event, s)?;
    let (sets, law) = event.with_sets(enlarged_sets(metric, event, beta));
    let hi = log_probability_raw(cache, &event.partition, &sets, &law, s)?;
    Ok((lo, mid, hi))
}

/// Default `beta`: two mesh widths, or twice the shortest edge distance on
/// spaces without a mesh.
pub fn default_beta(space: &StateSpace, metric: &IntrinsicMetric) -> f64 {
    if let Some(h) = space.mesh() {
        return 2.0 * h;
    }
    let shortest = (0..space.len())
        .flat_map(|x| space.neighbors(x).iter().map(move |&(y, _)| (x, y)))
        .map(|(x, y)| metric.lower(x, y))
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if shortest.is_finite() {
        2.0 * shortest
    } else {
        1.0
    }
}

/// Window in `s` where every stage of the optimal chain is in its
/// continuum window.
pub fn fdd_validity_window(
    space: &StateSpace,
    metric: &IntrinsicMetric,
    rate: &ChainRate,
    partition: &TimePartition,
) -> ValidityWindow {
    if space.continuum().is_none() {
        return ValidityWindow::empty();
    }
    let s_min = rate
        .chain
        .windows(2)
        .zip(partition.increments())
        .map(|(w, dt)| validity_window(space, metric.lower(w[0], w[1])).t_min / dt)
        .fold(0.0, f64::max);
    let s_min = if s_min > 0.0 {
        s_min
    } else {
        validity_window(space, 0.0).t_min
    };
    ValidityWindow {
        t_min: s_min,
        t_max: f64::INFINITY,
    }
}

/// `s log P` over a grid with the extrapolated limit and rate bracket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FddCurve {
    pub probe: AsymptoticProbe,
    pub bracket: RateBracket,
    pub log_p_shrunk: Vec<f64>,
    pub log_p_enlarged: Vec<f64>,
    /// `-rate(shrunk) <= limit <= -rate(enlarged)`.
    pub inside_bracket: bool,
}

pub fn fdd_ldp_curve(
    cache: &SpectralCache,
    metric: &IntrinsicMetric,
    event: &CylinderEvent,
    s_grid: &[f64],
    beta: f64,
) -> Result<FddCurve> {
    let space = cache.space();
    let grid = prepare_grid(s_grid)?;
    let bracket = fdd_rate_bracket(metric, event, beta)?;
    let triples: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .map(|&s| fdd_log_probability_sandwich(cache, metric, event, s, beta))
        .collect::<Result<_>>()?;
    let window = fdd_validity_window(space, metric, &bracket.original, &event.partition);
    let logs: Vec<f64> = triples.iter().map(|t| t.1).collect();
    let rate = bracket.original.rate;
    let mut probe = assemble_windowed(
        "fdd",
        space.mesh(),
        window,
        grid,
        logs,
        (2.0 * rate).sqrt(),
        -rate,
    )?;
    if window.is_empty() && !probe.outside_window() {
        probe.flags.push(OUTSIDE_WINDOW.to_string());
    }
    let (lo, hi) = bracket.limit_bracket();
    let inside_bracket = probe.limit >= lo && probe.limit <= hi;
    Ok(FddCurve {
        probe,
        log_p_shrunk: triples.iter().map(|t| t.0).collect(),
        log_p_enlarged: triples.iter().map(|t| t.2).collect(),
        bracket,
        inside_bracket,
    })
}

/// A set description resolved against a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    Full,
    Vertices {
        vertices: Vec<Vertex>,
    },
    /// Coordinate interval on the first axis.
    Interval {
        lo: f64,
        hi: f64,
    },
    #[serde(rename = "box")]
    Boxed {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Open intrinsic ball around the vertex nearest `center`.
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

impl SetSpec {
    pub fn resolve(&self, space: &StateSpace, metric: &IntrinsicMetric) -> Result<Region> {
        match self {
            SetSpec::Full => Ok(Region::full(space)),
            SetSpec::Vertices { vertices } => {
                Region::new(space, vertices.iter().copied(), format!("{vertices:?}"))
            }
            SetSpec::Interval { lo, hi } => Region::interval(space, *lo, *hi),
            SetSpec::Boxed { lo, hi } => Region::boxed(space, lo, hi),
            SetSpec::Ball { center, radius } => {
                let x = space.nearest_vertex(center)?;
                if !(*radius > 0.0) {
                    return Err(Error::validation("ball radius must be positive"));
                }
                Ok(metric.ball_region(x, *radius))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub vertices: Vec<Vertex>,
    pub weights: Vec<f64>,
}

/// Event file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub times: Vec<f64>,
    pub sets: Vec<SetSpec>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub beta: Option<f64>,
}

impl EventSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(toml::from_str(&text)?)
    }

    /// The event and its `beta` (default [`default_beta`]).
    pub fn build(
        &self,
        space: &StateSpace,
        metric: &IntrinsicMetric,
    ) -> Result<(CylinderEvent, f64)> {
        let partition = TimePartition::new(self.times.clone())?;
        let sets = self
            .sets
            .iter()
            .map(|s| s.resolve(space, metric))
            .collect::<Result<Vec<_>>>()?;
        let law: Option<Vec<(Vertex, f64)>> = match &self.initial {
            Some(init) => {
                if init.vertices.len() != init.weights.len() {
                    return Err(Error::DimensionMismatch {
                        expected: init.vertices.len(),
                        got: init.weights.len(),
                    });
                }
                Some(
                    init.vertices
                        .iter()
                        .copied()
                        .zip(init.weights.iter().copied())
                        .collect(),
                )
            }
            None => None,
        };
        let event = CylinderEvent::new(space, partition, sets, law.as_deref())?;
        let beta = match self.beta {
            Some(b) => {
                check_beta(b)?;
                b
            }
            None => default_beta(space, metric),
        };
        Ok((event, beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_lattice_1d, build_two_state};

    fn two_state_event(s: &StateSpace) -> CylinderEvent {
        CylinderEvent::new(
            s,
            TimePartition::uniform(1).unwrap(),
            vec![
                Region::singleton(s, 0).unwrap(),
                Region::singleton(s, 1).unwrap(),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn partition_validation() {
        assert!(TimePartition::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimePartition::new(vec![0.1, 1.0]).is_err());
        assert!(TimePartition::new(vec![0.0, 0.9]).is_err());
        assert_eq!(
            TimePartition::uniform(4).unwrap().increments(),
            vec![0.25; 4]
        );
    }

    #[test]
    fn start_only_event_is_certain() {
        let s = build_lattice_1d(8, 1.0, 1.0).unwrap();
        let c = SpectralCache::new(s.clone()).unwrap();
        let e = CylinderEvent::new(
            &s,
            TimePartition::uniform(0).unwrap(),
            vec![Region::interval(&s, 0.0, 0.3).unwrap()],
            None,
        )
        .unwrap();
        assert!((fdd_probability(&c, &e, 0.1).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_state_transition() {
        let s = build_two_state(1.0, 1.0, 1.0).unwrap();
        let c = SpectralCache::new(s.clone()).unwrap();
        let e = two_state_event(&s);
        let p = fdd_probability(&c, &e, 0.5).unwrap();
        assert!((p - 0.5 * (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        let m = IntrinsicMetric::certified(&s);
        let r = fdd_rate(&m, &e).unwrap();
        assert!((r.rate - 0.5).abs() < 1e-12);
        assert_eq!(r.chain, vec![0, 1]);
        assert!(fdd_probability(&c, &e, 0.0).is_err());
    }

    #[test]
    fn insertion_checks() {
        let s = build_two_state(1.0, 1.0, 1.0).unwrap();
        let e = two_state_event(&s);
        assert!(e.insert(&s, 1.0, Region::full(&s)).is_err());
        let f = e.insert(&s, 0.25, Region::full(&s)).unwrap();
        assert_eq!(f.partition().times(), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn set_spec_parses() {
        let spec: EventSpec = toml::from_str(
            r#"
            times = [0.0, 1.0]
            sets = [{ kind = "interval", lo = 0.0, hi = 0.2 }, { kind = "full" }]
            "#,
        )
        .unwrap();
        let s = build_lattice_1d(10, 1.0, 1.0).unwrap();
        let m = IntrinsicMetric::certified(&s);
        let (e, beta) = spec.build(&s, &m).unwrap();
        assert_eq!(e.sets()[0].vertices(), &[0, 1, 2]);
        assert!((beta - 0.2).abs() < 1e-15);
        let bad = toml::from_str::<EventSpec>("times = [0.0]\nsets = [{ kind = \"blob\" }]");
        assert!(bad.is_err());
    }
}
