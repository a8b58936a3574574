//! Curve energies: the discrete energy over a partition, its supremum over
//! partitions, the metric derivative and the AC² energy.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdd::TimePartition;
use crate::metric::IntrinsicMetric;
use crate::space::{StateSpace, Vertex};

pub const DEFAULT_RESOLUTION: usize = 1 << 12;
pub const DEFAULT_QUADRATURE: usize = 64;
pub const DEFAULT_MAX_LEVEL: usize = 16;
pub const RANDOM_PARTITIONS: usize = 16;
/// Graph-context quotients need a displacement of at least this many
/// metric-resolution units.
pub const GRAPH_SPAN: f64 = 8.0;
const RANDOM_SEED: u64 = 0x5eed_ca11;

pub const LOWER_BOUND_ONLY: &str = "lower bound only";
pub const DIVERGENT: &str = "divergent";
pub const NOT_AC2: &str = "not AC2";

/// `h = 2^-4, ..., 2^-10`.
pub fn default_h_grid() -> Vec<f64> {
    (4..=10).map(|k| 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone)]
pub enum CurveContext {
    Euclidean {
        dim: usize,
    },
    /// Distances are the certified lower bounds of `metric`.
    Graph {
        space: Arc<StateSpace>,
        metric: Arc<IntrinsicMetric>,
    },
}

impl CurveContext {
    pub fn graph(space: Arc<StateSpace>) -> Self {
        let metric = Arc::new(IntrinsicMetric::certified(&space));
        CurveContext::Graph { space, metric }
    }

    pub fn distance(&self, a: &CurvePoint, b: &CurvePoint) -> f64 {
        match (self, a, b) {
            (CurveContext::Graph { metric, .. }, CurvePoint::Vertex(x), CurvePoint::Vertex(y)) => {
                metric.lower(*x, *y)
            }
            (_, CurvePoint::Coords(p), CurvePoint::Coords(q)) => p
                .iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            _ => f64::NAN,
        }
    }

    /// Smallest positive distance the context can resolve; 0 for
    /// Euclidean contexts.
    pub fn resolution(&self) -> f64 {
        match self {
            CurveContext::Euclidean { .. } => 0.0,
            CurveContext::Graph { space, metric } => (0..space.len())
                .flat_map(|x| space.neighbors(x).iter().map(move |&(y, _)| (x, y)))
                .map(|(x, y)| metric.lower(x, y))
                .filter(|d| *d > 0.0)
                .fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurvePoint {
    Coords(Vec<f64>),
    Vertex(Vertex),
}

/// Closed-form or sampled curve description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveShape {
    /// `start + (end - start) t^power`.
    Line {
        start: Vec<f64>,
        end: Vec<f64>,
        #[serde(default = "unit_power")]
        power: f64,
    },
    /// Planar arc `center + radius (cos th, sin th)`, `th` from `theta0`
    /// to `theta1`.
    Circle {
        center: Vec<f64>,
        radius: f64,
        theta0: f64,
        theta1: f64,
    },
    /// Coordinate `i` is `sum_k coefficients[i][k] t^k`.
    Poly { coefficients: Vec<Vec<f64>> },
    /// `left` on `[0, at)`, `right` on `[at, 1]`.
    Step {
        left: Vec<f64>,
        right: Vec<f64>,
        at: f64,
    },
    /// Points at increasing times from 0 to 1.
    Samples {
        t: Vec<f64>,
        points: Vec<CurvePoint>,
    },
}

fn unit_power() -> f64 {
    1.0
}

impl CurveShape {
    fn closed_form(&self, t: f64) -> Option<Vec<f64>> {
        Some(match self {
            CurveShape::Line { start, end, power } => {
                let s = t.powf(*power);
                start
                    .iter()
                    .zip(end)
                    .map(|(a, b)| a + (b - a) * s)
                    .collect()
            }
            CurveShape::Circle {
                center,
                radius,
                theta0,
                theta1,
            } => {
                let th = theta0 + (theta1 - theta0) * t;
                vec![center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
            CurveShape::Poly { coefficients } => coefficients
                .iter()
                .map(|c| c.iter().rev().fold(0.0, |acc, a| acc * t + a))
                .collect(),
            CurveShape::Step { left, right, at } => {
                if t < *at {
                    left.clone()
                } else {
                    right.clone()
                }
            }
            CurveShape::Samples { .. } => return None,
        })
    }

    fn dim(&self) -> Result<usize> {
        let d = match self {
            CurveShape::Line { start, end, .. } => {
                if start.len() != end.len() {
                    return Err(Error::DimensionMismatch {
                        expected: start.len(),
                        got: end.len(),
                    });
                }
                start.len()
            }
            CurveShape::Circle { center, .. } => {
                if center.len() != 2 {
                    return Err(Error::validation("circle needs a planar center"));
                }
                2
            }
            CurveShape::Poly { coefficients } => coefficients.len(),
            CurveShape::Step { left, right, .. } => {
                if left.len() != right.len() {
                    return Err(Error::DimensionMismatch {
                        expected: left.len(),
                        got: right.len(),
                    });
                }
                left.len()
            }
            CurveShape::Samples { points, .. } => match points.first() {
                Some(CurvePoint::Coords(c)) => c.len(),
                _ => 0,
            },
        };
        Ok(d)
    }

    /// Smooth closed forms get Richardson-extrapolated derivatives.
    fn is_smooth(&self) -> bool {
        matches!(
            self,
            CurveShape::Line { .. } | CurveShape::Circle { .. } | CurveShape::Poly { .. }
        )
    }
}

/// A curve `[0,1] -> X` held as samples: linear interpolation in Euclidean
/// contexts, nearest sample in graph contexts.
#[derive(Debug, Clone)]
pub struct Curve {
    context: CurveContext,
    shape: CurveShape,
    ts: Vec<f64>,
    points: Vec<CurvePoint>,
    spacing: f64,
}

impl Curve {
    /// Closed forms are sampled at `resolution + 1` uniform times.
    pub fn new(context: CurveContext, shape: CurveShape, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::validation("curve resolution must be positive"));
        }
        let dim = shape.dim()?;
        let (ts, coords): (Vec<f64>, Vec<CurvePoint>) = match &shape {
            CurveShape::Samples { t, points } => {
                if t.len() != points.len() {
                    return Err(Error::DimensionMismatch {
                        expected: t.len(),
                        got: points.len(),
                    });
                }
                if t.len() < 2 || t[0] != 0.0 || *t.last().unwrap() != 1.0 {
                    return Err(Error::validation("sample times must run from 0 to 1"));
                }
                if t.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::validation(
                        "sample times must be strictly increasing",
                    ));
                }
                (t.clone(), points.clone())
            }
            _ => (0..=resolution)
                .map(|k| {
                    let t = k as f64 / resolution as f64;
                    (t, CurvePoint::Coords(shape.closed_form(t).unwrap()))
                })
                .unzip(),
        };
        let points = match &context {
            CurveContext::Euclidean { dim: d } => {
                for p in &coords {
                    match p {
                        CurvePoint::Coords(c)
                            if c.len() == *d && c.iter().all(|v| v.is_finite()) => {}
                        CurvePoint::Coords(c) => {
                            return Err(Error::DimensionMismatch {
                                expected: *d,
                                got: c.len(),
                            })
                        }
                        CurvePoint::Vertex(_) => {
                            return Err(Error::validation("vertex samples need a graph context"))
                        }
                    }
                }
                if dim != *d && !coords.is_empty() {
                    return Err(Error::DimensionMismatch {
                        expected: *d,
                        got: dim,
                    });
                }
                coords
            }
            CurveContext::Graph { space, .. } => coords
                .into_iter()
                .map(|p| match p {
                    CurvePoint::Vertex(v) => space.check_vertex(v).map(|_| CurvePoint::Vertex(v)),
                    CurvePoint::Coords(c) => space.nearest_vertex(&c).map(CurvePoint::Vertex),
                })
                .collect::<Result<_>>()?,
        };
        let spacing = ts.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        Ok(Curve {
            context,
            shape,
            ts,
            points,
            spacing,
        })
    }

    pub fn euclidean(shape: CurveShape) -> Result<Self> {
        let dim = shape.dim()?;
        Curve::new(CurveContext::Euclidean { dim }, shape, DEFAULT_RESOLUTION)
    }

    pub fn context(&self) -> &CurveContext {
        &self.context
    }

    pub fn shape(&self) -> &CurveShape {
        &self.shape
    }

    /// Largest gap between samples.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn is_smooth(&self) -> bool {
        self.shape.is_smooth() && matches!(self.context, CurveContext::Euclidean { .. })
    }

    pub fn eval(&self, t: f64) -> Result<CurvePoint> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidTime(format!("curve time {t} outside [0, 1]")));
        }
        let k = self
            .ts
            .partition_point(|&s| s <= t)
            .clamp(1, self.ts.len() - 1);
        let (t0, t1) = (self.ts[k - 1], self.ts[k]);
        Ok(
            match (&self.context, &self.points[k - 1], &self.points[k]) {
                (CurveContext::Euclidean { .. }, CurvePoint::Coords(a), CurvePoint::Coords(b)) => {
                    let u = (t - t0) / (t1 - t0);
                    CurvePoint::Coords(a.iter().zip(b).map(|(p, q)| p + (q - p) * u).collect())
                }
                _ => {
                    if t - t0 < t1 - t {
                        self.points[k - 1].clone()
                    } else {
                        self.points[k].clone()
                    }
                }
            },
        )
    }

    pub fn distance(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.context.distance(&self.eval(s)?, &self.eval(t)?))
    }
}

/// Sum in a fixed pairwise tree order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// `1/2 sum d(x_i, x_{i+1})^2 / (t_{i+1} - t_i)` for a chain of points.
pub fn chain_energy(context: &CurveContext, points: &[CurvePoint], times: &[f64]) -> Result<f64> {
    if points.len() != times.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: points.len(),
        });
    }
    let terms: Vec<f64> = (1..points.len())
        .map(|i| {
            let d = context.distance(&points[i - 1], &points[i]);
            0.5 * d * d / (times[i] - times[i - 1])
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

pub fn discrete_energy(curve: &Curve, partition: &TimePartition) -> Result<f64> {
    let points = partition
        .times()
        .iter()
        .map(|&t| curve.eval(t))
        .collect::<Result<Vec<_>>>()?;
    chain_energy(&curve.context, &points, partition.times())
}

/// `sum d(gamma(t_i), gamma(t_{i+1}))`.
pub fn chord_length(curve: &Curve, partition: &TimePartition) -> Result<f64> {
    let t = partition.times();
    let d = (1..t.len())
        .map(|i| curve.distance(t[i - 1], t[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyEstimate {
    pub value: f64,
    /// Last dyadic level evaluated.
    pub level: usize,
    /// `H_level - H_{level-1}`.
    pub increment: f64,
    pub converged: bool,
    /// Increments stopped shrinking.
    pub divergent: bool,
    /// Energy per dyadic level, from level 0.
    pub levels: Vec<f64>,
    /// Best of the random partitions at the final level.
    pub random_max: f64,
    pub flags: Vec<String>,
}

/// `sup_Delta H_Delta` over dyadic refinements, stopping once an increment
/// falls below `tol`. Levels are capped by `max_level` and by the curve's
/// sample spacing. Sixteen random partitions of the final size are probed
/// as well.
pub fn energy_sup(curve: &Curve, tol: f64, max_level: usize) -> Result<EnergyEstimate> {
    if !(tol > 0.0) {
        return Err(Error::validation("tolerance must be positive"));
    }
    let cap = max_level.min((1.0 / curve.spacing).log2().floor().max(1.0) as usize);
    let mut levels = vec![discrete_energy(curve, &TimePartition::uniform(1)?)?];
    let mut converged = false;
    for k in 1..=cap {
        levels.push(discrete_energy(curve, &TimePartition::uniform(1 << k)?)?);
        if levels[k] - levels[k - 1] < tol {
            converged = true;
            break;
        }
    }
    let level = levels.len() - 1;
    let increment = if level > 0 {
        levels[level] - levels[level - 1]
    } else {
        0.0
    };
    let divergent =
        !converged && level >= 2 && increment >= 0.9 * (levels[level - 1] - levels[level - 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(RANDOM_SEED);
    let intervals = 1usize << level;
    let mut random_max = f64::NEG_INFINITY;
    for _ in 0..RANDOM_PARTITIONS {
        let mut t: Vec<f64> = (0..intervals - 1).map(|_| rng.random::<f64>()).collect();
        t.push(0.0);
        t.push(1.0);
        t.sort_by(f64::total_cmp);
        t.dedup();
        if let Ok(p) = TimePartition::new(t) {
            random_max = random_max.max(discrete_energy(curve, &p)?);
        }
    }
    let mut flags = Vec::new();
    if !converged {
        flags.push(LOWER_BOUND_ONLY.to_string());
    }
    if divergent {
        flags.push(DIVERGENT.to_string());
    }
    Ok(EnergyEstimate {
        value: levels[level].max(random_max),
        level,
        increment,
        converged,
        divergent,
        levels,
        random_max,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedEstimate {
    pub t: f64,
    pub value: f64,
    /// `(h, d(gamma(t-h), gamma(t+h)) / 2h)` for the admissible steps.
    pub quotients: Vec<(f64, f64)>,
    pub richardson: bool,
    pub flags: Vec<String>,
}

/// `|gamma'|(t)` from symmetric quotients. Smooth Euclidean curves use
/// Richardson extrapolation in `h^2` over the two smallest admissible
/// steps; other curves use the smallest admissible step. Steps finer than
/// the sample spacing are dropped and flagged; on graphs a step must also
/// move the curve by at least [`GRAPH_SPAN`] resolution units.
pub fn metric_derivative(curve: &Curve, t: f64, h_grid: &[f64]) -> Result<SpeedEstimate> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidTime(format!(
            "derivative time {t} must be in (0, 1)"
        )));
    }
    let mut flags = Vec::new();
    let mut hs: Vec<f64> = h_grid
        .iter()
        .copied()
        .filter(|&h| h > 0.0 && t - h >= 0.0 && t + h <= 1.0)
        .collect();
    hs.sort_by(|a, b| b.total_cmp(a));
    hs.dedup();
    if hs.iter().any(|&h| h < curve.spacing) {
        flags.push("evaluator resolution coarser than smallest h".to_string());
        hs.retain(|&h| h >= curve.spacing);
    }
    let mut quotients = hs
        .iter()
        .map(|&h| Ok((h, curve.distance(t - h, t + h)? / (2.0 * h))))
        .collect::<Result<Vec<_>>>()?;
    if let CurveContext::Graph { .. } = curve.context {
        let rho = curve.context.resolution();
        let before = quotients.len();
        quotients.retain(|&(h, q)| 2.0 * h * q >= GRAPH_SPAN * rho);
        if quotients.is_empty() && before > 0 {
            flags.push("displacement below graph resolution at every step".to_string());
            // Fall back to the largest step.
            quotients.push((hs[0], curve.distance(t - hs[0], t + hs[0])? / (2.0 * hs[0])));
        }
    }
    let Some(&(_, last)) = quotients.last() else {
        return Err(Error::Undefined(format!("no admissible step at t = {t}")));
    };
    let richardson = curve.is_smooth() && quotients.len() >= 2;
    let value = if richardson {
        let (h1, q1) = quotients[quotients.len() - 2];
        let (h2, q2) = quotients[quotients.len() - 1];
        (h1 * h1 * q2 - h2 * h2 * q1) / (h1 * h1 - h2 * h2)
    } else {
        last
    };
    Ok(SpeedEstimate {
        t,
        value: value.max(0.0),
        quotients,
        richardson,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ac2Estimate {
    /// `+inf` when the curve is not AC² or too many nodes failed.
    pub value: f64,
    pub nodes: usize,
    pub failed_nodes: usize,
    pub defined: bool,
    pub flags: Vec<String>,
}

/// `1/2 int |gamma'|^2` by composite two-point Gauss-Legendre over
/// `ceil(nodes/2)` panels. Curves that are neither
/// smooth closed forms nor of convergent `energy_sup` are reported as
/// infinite.
pub fn ac2_energy(curve: &Curve, nodes: usize) -> Result<Ac2Estimate> {
    if nodes == 0 {
        return Err(Error::validation("quadrature needs at least one node"));
    }
    let infinite = |flags: Vec<String>, failed: usize| Ac2Estimate {
        value: f64::INFINITY,
        nodes,
        failed_nodes: failed,
        defined: false,
        flags,
    };
    if !curve.is_smooth() {
        let sup = energy_sup(curve, 1e-6, DEFAULT_MAX_LEVEL)?;
        if !sup.converged && matches!(curve.context, CurveContext::Euclidean { .. }) {
            let mut flags = vec![NOT_AC2.to_string()];
            flags.extend(sup.flags);
            return Ok(infinite(flags, 0));
        }
    }
    let h_grid = default_h_grid();
    let mut values = Vec::with_capacity(nodes);
    let mut failed = 0;
    let mut flags = Vec::new();
    let panels = nodes.div_ceil(2);
    let offset = 0.5 / 3f64.sqrt();
    let times = (0..panels).flat_map(|p| {
        let mid = (p as f64 + 0.5) / panels as f64;
        [mid - offset / panels as f64, mid + offset / panels as f64]
    });
    let nodes = 2 * panels;
    for t in times {
        match metric_derivative(curve, t, &h_grid) {
            Ok(s) => {
                for f in s.flags {
                    if !flags.contains(&f) {
                        flags.push(f);
                    }
                }
                values.push(0.5 * s.value * s.value / nodes as f64);
            }
            Err(_) => failed += 1,
        }
    }
    if failed * 10 > nodes {
        flags.push(format!(
            "metric derivative failed at {failed} of {nodes} nodes"
        ));
        return Ok(infinite(flags, failed));
    }
    // Failed nodes are filled with the mean of the others.
    let mean = pairwise_sum(&values) / values.len().max(1) as f64;
    values.extend(std::iter::repeat_n(mean, failed));
    Ok(Ac2Estimate {
        value: pairwise_sum(&values),
        nodes,
        failed_nodes: failed,
        defined: true,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentificationGap {
    pub h_sup: EnergyEstimate,
    pub h_ac2: Ac2Estimate,
    /// `H~ - H`; `None` when either side is non-convergent.
    pub gap: Option<f64>,
    /// `H <= H~ + tol`.
    pub lower_direction_holds: bool,
    pub flags: Vec<String>,
}

pub fn identification_gap(curve: &Curve, tol: f64) -> Result<IdentificationGap> {
    let h_sup = energy_sup(curve, tol, DEFAULT_MAX_LEVEL)?;
    let h_ac2 = ac2_energy(curve, DEFAULT_QUADRATURE)?;
    let mut flags: Vec<String> = h_sup.flags.iter().map(|f| format!("H: {f}")).collect();
    flags.extend(h_ac2.flags.iter().map(|f| format!("H~: {f}")));
    let gap = (h_sup.converged && h_ac2.defined).then(|| h_ac2.value - h_sup.value);
    if gap.is_none() {
        flags.push("gap undefined".to_string());
    }
    Ok(IdentificationGap {
        lower_direction_holds: h_sup.value <= h_ac2.value + tol,
        h_sup,
        h_ac2,
        gap,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextSpec {
    Euclidean,
    /// Uses the space given alongside the curve.
    Graph,
}

/// Curve file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub context: ContextSpec,
    pub shape: CurveShape,
    #[serde(default)]
    pub resolution: Option<usize>,
}

impl CurveSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(toml::from_str(&text)?)
    }

    pub fn build(&self, space: Option<Arc<StateSpace>>) -> Result<Curve> {
        let context = match (&self.context, space) {
            (ContextSpec::Euclidean, _) => CurveContext::Euclidean {
                dim: self.shape.dim()?,
            },
            (ContextSpec::Graph, Some(s)) => CurveContext::graph(s),
            (ContextSpec::Graph, None) => {
                return Err(Error::validation("graph-context curve needs a space"))
            }
        };
        Curve::new(
            context,
            self.shape.clone(),
            self.resolution.unwrap_or(DEFAULT_RESOLUTION),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Curve {
        Curve::euclidean(CurveShape::Line {
            start: vec![0.0, 0.0],
            end: vec![1.0, 1.0],
            power: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn line_energies() {
        let c = line();
        let two = TimePartition::uniform(1).unwrap();
        assert!((discrete_energy(&c, &two).unwrap() - 1.0).abs() < 1e-12);
        let three = TimePartition::uniform(2).unwrap();
        assert!((discrete_energy(&c, &three).unwrap() - 1.0).abs() < 1e-12);
        let sup = energy_sup(&c, 1e-9, 12).unwrap();
        assert!(sup.converged && sup.level == 1);
        let v = metric_derivative(&c, 0.3, &default_h_grid()).unwrap();
        assert!((v.value - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn constant_curve_is_zero() {
        let c = Curve::euclidean(CurveShape::Poly {
            coefficients: vec![vec![0.3], vec![-1.0]],
        })
        .unwrap();
        assert_eq!(energy_sup(&c, 1e-9, 12).unwrap().value, 0.0);
        assert_eq!(
            metric_derivative(&c, 0.5, &default_h_grid()).unwrap().value,
            0.0
        );
    }

    #[test]
    fn derivative_rejects_endpoints() {
        let c = line();
        assert!(metric_derivative(&c, 0.0, &default_h_grid()).is_err());
        assert!(metric_derivative(&c, 0.5, &[0.9]).is_err());
    }

    #[test]
    fn coarse_samples_are_flagged() {
        let c = Curve::new(
            CurveContext::Euclidean { dim: 1 },
            CurveShape::Line {
                start: vec![0.0],
                end: vec![1.0],
                power: 1.0,
            },
            64,
        )
        .unwrap();
        let v = metric_derivative(&c, 0.5, &default_h_grid()).unwrap();
        assert!(!v.flags.is_empty());
        assert!((v.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_validation() {
        let bad = CurveShape::Samples {
            t: vec![0.0, 0.5, 0.5, 1.0],
            points: vec![CurvePoint::Coords(vec![0.0]); 4],
        };
        assert!(Curve::euclidean(bad).is_err());
        let vertex = CurveShape::Samples {
            t: vec![0.0, 1.0],
            points: vec![CurvePoint::Vertex(0), CurvePoint::Vertex(1)],
        };
        assert!(Curve::new(CurveContext::Euclidean { dim: 0 }, vertex, 8).is_err());
    }

    #[test]
    fn pairwise_sum_order() {
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0, 4.0, 5.0]), 15.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
