//! Intrinsic metric `d(x,y) = sup { f(x) - f(y) : gamma(f) <= 1 }`.
//!
//! Brackets come from a primal-dual scheme. For weights `mu` on the
//! probability simplex, any feasible `f` satisfies
//! `sum_e kappa_e (df_e)^2 <= 1` with `kappa_e = w_e (mu_u/m_u + mu_v/m_v)`,
//! so `d(x,y)^2 <= R_mu(x,y)`, the effective resistance under `kappa`. The
//! potential `phi` realizing `R_mu` rescaled to `gamma <= 1` is a feasible
//! witness. Updating `mu <- mu * gamma(phi) / R_mu` keeps `mu` on the
//! simplex and drives the two sides together.
//!
//! [`IntrinsicMetric::certified`] is a cheaper all-pairs table built only
//! from feasible witnesses (shortest paths with safe edge lengths and linear
//! coordinate functions), used wherever balls and set distances are needed.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::form::energy_density_unchecked;
use crate::linalg::{dijkstra, BandCholesky};
use crate::space::{Region, StateSpace, Vertex};

pub const DEFAULT_TOL: f64 = 1e-3;
const MAX_ITERATIONS: usize = 20_000;
const MU_FLOOR: f64 = 1e-14;

/// Certified bounds on `d(x,y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBracket {
    pub x: Vertex,
    pub y: Vertex,
    /// `witness[x] - witness[y]`.
    pub lower: f64,
    pub upper: f64,
    /// Feasible function attaining `lower`; empty when the pair is
    /// disconnected.
    pub witness: Vec<f64>,
    pub witness_max_gamma: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DistanceBracket {
    /// `(upper - lower) / max(lower, eps)`.
    pub fn gap(&self) -> f64 {
        if self.lower.is_infinite() && self.upper.is_infinite() {
            return 0.0;
        }
        (self.upper - self.lower) / self.lower.max(f64::EPSILON)
    }

    fn trivial(x: Vertex, n: usize) -> Self {
        DistanceBracket {
            x,
            y: x,
            lower: 0.0,
            upper: 0.0,
            witness: vec![0.0; n],
            witness_max_gamma: 0.0,
            iterations: 0,
            converged: true,
        }
    }
}

/// Edge length under which graph distance is itself a feasible function.
fn safe_length(space: &StateSpace, x: Vertex, y: Vertex) -> f64 {
    let a = space.mass(x) / space.degree(x);
    let b = space.mass(y) / space.degree(y);
    a.min(b).sqrt()
}

/// Edge length that no feasible function can beat on a single edge.
fn single_edge_length(space: &StateSpace, x: Vertex, y: Vertex, w: f64) -> f64 {
    (space.mass(x).min(space.mass(y)) / w).sqrt()
}

fn max_gamma(space: &StateSpace, f: &[f64]) -> f64 {
    energy_density_unchecked(space, f)
        .into_iter()
        .fold(0.0, f64::max)
}

/// Rescale `f` into the feasible set; `None` for constant functions.
fn normalize(space: &StateSpace, mut f: Vec<f64>) -> Option<(Vec<f64>, f64)> {
    let g = max_gamma(space, &f);
    if !(g > 0.0) || !g.is_finite() {
        return None;
    }
    let s = 1.0 / g.sqrt();
    for v in &mut f {
        *v *= s;
    }
    let g = max_gamma(space, &f);
    Some((f, g))
}

fn directions(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![vec![1.0]],
        2 => (0..16)
            .map(|j| {
                let a = j as f64 * std::f64::consts::PI / 16.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut out = Vec::new();
            for i in 0..dim {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                out.push(e);
                for j in i + 1..dim {
                    for s in [1.0, -1.0] {
                        let mut e = vec![0.0; dim];
                        e[i] = std::f64::consts::FRAC_1_SQRT_2;
                        e[j] = s * std::f64::consts::FRAC_1_SQRT_2;
                        out.push(e);
                    }
                }
            }
            out
        }
    }
}

/// Feasible linear coordinate functions, each with its `max gamma`.
fn coordinate_witnesses(space: &StateSpace) -> Vec<(Vec<f64>, f64)> {
    let Some(pos) = space.positions() else {
        return Vec::new();
    };
    let dim = pos.first().map_or(0, Vec::len);
    directions(dim)
        .into_iter()
        .filter_map(|e| {
            let f = pos
                .iter()
                .map(|p| p.iter().zip(&e).map(|(a, b)| a * b).sum())
                .collect();
            normalize(space, f)
        })
        .collect()
}

fn component_of(space: &StateSpace, x: Vertex) -> Vec<Vertex> {
    space
        .components()
        .into_iter()
        .find(|c| c.binary_search(&x).is_ok())
        .unwrap_or_else(|| vec![x])
}

/// Bracket `d(x,y)` to relative gap `tol`.
pub fn intrinsic_distance(
    space: &StateSpace,
    x: Vertex,
    y: Vertex,
    tol: f64,
) -> Result<DistanceBracket> {
    space.check_vertex(x)?;
    space.check_vertex(y)?;
    if !(tol > 0.0) {
        return Err(Error::validation(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let n = space.len();
    if x == y {
        return Ok(DistanceBracket::trivial(x, n));
    }
    let comp = component_of(space, x);
    if comp.binary_search(&y).is_err() {
        return Ok(DistanceBracket {
            x,
            y,
            lower: f64::INFINITY,
            upper: f64::INFINITY,
            witness: Vec::new(),
            witness_max_gamma: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut best_f: Vec<f64>;
    let mut best_g: f64;
    let mut lower: f64;
    {
        // Safe shortest-path distance to y is feasible.
        let f: Vec<f64> = dijkstra(space, y, |a, b, _| safe_length(space, a, b))
            .into_iter()
            .map(|d| if d.is_finite() { d } else { 0.0 })
            .collect();
        best_g = max_gamma(space, &f);
        lower = f[x] - f[y];
        best_f = f;
        for (f, g) in coordinate_witnesses(space) {
            let (v, f) = if f[x] >= f[y] {
                (f[x] - f[y], f)
            } else {
                let neg: Vec<f64> = f.iter().map(|v| -v).collect();
                (neg[x] - neg[y], neg)
            };
            if v > lower {
                lower = v;
                best_f = f;
                best_g = g;
            }
        }
    }
    let mut upper = dijkstra(space, x, |a, b, w| single_edge_length(space, a, b, w))[y];

    // Dual iteration on the component of the pair, grounded at y.
    let local: Vec<usize> = {
        let mut map = vec![usize::MAX; n];
        for (i, &v) in comp.iter().enumerate() {
            map[v] = i;
        }
        map
    };
    let total: f64 = comp.iter().map(|&v| space.mass(v)).sum();
    let mut mu: Vec<f64> = comp.iter().map(|&v| space.mass(v) / total).collect();
    let ly = local[y];
    let reduced = |v: usize| if v > ly { v - 1 } else { v };
    let mut edges = Vec::new();
    for (i, &v) in comp.iter().enumerate() {
        for &(u, w) in space.neighbors(v) {
            let j = local[u];
            if j > i && w > 0.0 {
                edges.push((i, j, w));
            }
        }
    }
    let nc = comp.len();
    let mut rhs = vec![0.0; nc - 1];
    rhs[reduced(local[x])] = 1.0;
    let mut iterations = 0;
    let mut converged = (upper - lower) <= tol * lower;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut entries = Vec::with_capacity(3 * edges.len());
        for &(i, j, w) in &edges {
            let (vi, vj) = (comp[i], comp[j]);
            let k = w * (mu[i] / space.mass(vi) + mu[j] / space.mass(vj));
            if i != ly {
                entries.push((reduced(i), reduced(i), k));
            }
            if j != ly {
                entries.push((reduced(j), reduced(j), k));
            }
            if i != ly && j != ly {
                let (a, b) = (reduced(i), reduced(j));
                entries.push((a.max(b), a.min(b), -k));
            }
        }
        let Some(chol) = BandCholesky::factor(nc - 1, &entries) else {
            break;
        };
        let sol = chol.solve(&rhs);
        let mut phi = vec![0.0; n];
        for (i, &v) in comp.iter().enumerate() {
            if i != ly {
                phi[v] = sol[reduced(i)];
            }
        }
        let r = phi[x];
        if !(r > 0.0) || !r.is_finite() {
            break;
        }
        upper = upper.min(r.sqrt());
        let gamma = energy_density_unchecked(space, &phi);
        let gmax = comp.iter().map(|&v| gamma[v]).fold(0.0, f64::max);
        if gmax > 0.0 {
            let s = 1.0 / gmax.sqrt();
            let cand: Vec<f64> = phi.iter().map(|v| v * s).collect();
            let value = cand[x] - cand[y];
            if value > lower {
                best_g = max_gamma(space, &cand);
                lower = value;
                best_f = cand;
            }
        }
        converged = (upper - lower) <= tol * lower;
        let mut sum = 0.0;
        for (i, &v) in comp.iter().enumerate() {
            mu[i] = (mu[i] * gamma[v] / r).max(MU_FLOOR);
            sum += mu[i];
        }
        for m in &mut mu {
            *m /= sum;
        }
    }
    let lower = best_f[x] - best_f[y];
    Ok(DistanceBracket {
        x,
        y,
        lower,
        upper: upper.max(lower),
        witness: best_f,
        witness_max_gamma: best_g,
        iterations,
        converged,
    })
}

/// All-pairs bounds on the intrinsic metric.
#[derive(Debug, Clone)]
pub struct IntrinsicMetric {
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    witness_max_gamma: Option<Vec<f64>>,
    tol: Option<f64>,
}

impl IntrinsicMetric {
    /// Lower table from feasible witnesses only; upper table from single-edge
    /// shortest paths.
    pub fn certified(space: &StateSpace) -> Self {
        let n = space.len();
        let coords = coordinate_witnesses(space);
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|x| {
                let mut lo = dijkstra(space, x, |a, b, _| safe_length(space, a, b));
                for (f, _) in &coords {
                    for (y, l) in lo.iter_mut().enumerate() {
                        if l.is_finite() {
                            *l = l.max((f[x] - f[y]).abs());
                        }
                    }
                }
                let up = dijkstra(space, x, |a, b, w| single_edge_length(space, a, b, w));
                (lo, up)
            })
            .collect();
        let mut lower = vec![0.0; n * n];
        let mut upper = vec![0.0; n * n];
        for (x, (lo, up)) in rows.into_iter().enumerate() {
            lower[x * n..(x + 1) * n].copy_from_slice(&lo);
            upper[x * n..(x + 1) * n].copy_from_slice(&up);
        }
        symmetrize(n, &mut lower, f64::max);
        symmetrize(n, &mut upper, f64::min);
        IntrinsicMetric {
            n,
            lower,
            upper,
            witness_max_gamma: None,
            tol: None,
        }
    }

    /// Per-pair primal-dual brackets to relative gap `tol`.
    pub fn refined(space: &StateSpace, tol: f64) -> Result<Self> {
        let n = space.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|x| (x + 1..n).map(move |y| (x, y)))
            .collect();
        let brackets: Vec<DistanceBracket> = pairs
            .par_iter()
            .map(|&(x, y)| intrinsic_distance(space, x, y, tol))
            .collect::<Result<_>>()?;
        let mut lower = vec![0.0; n * n];
        let mut upper = vec![0.0; n * n];
        let mut gam = vec![0.0; n * n];
        for b in brackets {
            for (i, j) in [(b.x, b.y), (b.y, b.x)] {
                lower[i * n + j] = b.lower;
                upper[i * n + j] = b.upper;
                gam[i * n + j] = b.witness_max_gamma;
            }
        }
        Ok(IntrinsicMetric {
            n,
            lower,
            upper,
            witness_max_gamma: Some(gam),
            tol: Some(tol),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn tol(&self) -> Option<f64> {
        self.tol
    }

    pub fn lower(&self, x: Vertex, y: Vertex) -> f64 {
        self.lower[x * self.n + y]
    }

    pub fn upper(&self, x: Vertex, y: Vertex) -> f64 {
        self.upper[x * self.n + y]
    }

    pub fn witness_max_gamma(&self, x: Vertex, y: Vertex) -> Option<f64> {
        self.witness_max_gamma.as_ref().map(|g| g[x * self.n + y])
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().copied().fold(0.0, f64::max)
    }

    /// Open ball `{y : d(x,y) < r}` under the lower bound.
    pub fn ball(&self, x: Vertex, r: f64) -> Vec<Vertex> {
        (0..self.n).filter(|&y| self.lower(x, y) < r).collect()
    }

    pub fn ball_region(&self, x: Vertex, r: f64) -> Region {
        let v = self.ball(x, r);
        // x itself is always inside for r > 0; r = 0 degenerates to {x}.
        let v = if v.is_empty() { vec![x] } else { v };
        Region::from_sorted_unchecked(v, format!("B({x}, {r})"))
    }

    /// `min_{a in A} d(a, x)`.
    pub fn set_distance(&self, a: &Region, x: Vertex) -> f64 {
        a.vertices()
            .iter()
            .map(|&v| self.lower(v, x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn region_distance(&self, a: &Region, b: &Region) -> f64 {
        b.vertices()
            .iter()
            .map(|&v| self.set_distance(a, v))
            .fold(f64::INFINITY, f64::min)
    }

    fn complement_distance(&self, a: &Region, x: Vertex) -> f64 {
        (0..self.n)
            .filter(|&v| !a.contains(v))
            .map(|v| self.lower(v, x))
            .fold(f64::INFINITY, f64::min)
    }

    /// `{x : d(A^c, x) > beta}`; `None` when empty.
    pub fn shrink(&self, a: &Region, beta: f64) -> Option<Region> {
        let v: Vec<Vertex> = (0..self.n)
            .filter(|&x| self.complement_distance(a, x) > beta)
            .collect();
        (!v.is_empty()).then(|| {
            Region::from_sorted_unchecked(v, format!("shrink({}, {beta})", a.description()))
        })
    }

    /// `{x : d(A, x) < beta}`, always containing A.
    pub fn enlarge(&self, a: &Region, beta: f64) -> Region {
        let v: Vec<Vertex> = (0..self.n)
            .filter(|&x| a.contains(x) || self.set_distance(a, x) < beta)
            .collect();
        Region::from_sorted_unchecked(v, format!("enlarge({}, {beta})", a.description()))
    }
}

fn symmetrize(n: usize, t: &mut [f64], pick: fn(f64, f64) -> f64) {
    for x in 0..n {
        for y in x + 1..n {
            let v = pick(t[x * n + y], t[y * n + x]);
            t[x * n + y] = v;
            t[y * n + x] = v;
        }
    }
}

/// All-pairs refined brackets.
pub fn distance_matrix(space: &StateSpace, tol: f64) -> Result<IntrinsicMetric> {
    IntrinsicMetric::refined(space, tol)
}

pub fn set_distance(metric: &IntrinsicMetric, a: &Region, x: Vertex) -> f64 {
    metric.set_distance(a, x)
}

pub fn shrink_set(metric: &IntrinsicMetric, a: &Region, beta: f64) -> Result<Option<Region>> {
    check_beta(beta)?;
    Ok(metric.shrink(a, beta))
}

pub fn enlarge_set(metric: &IntrinsicMetric, a: &Region, beta: f64) -> Result<Region> {
    check_beta(beta)?;
    Ok(metric.enlarge(a, beta))
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "beta must be a finite nonnegative length, got {beta}"
        )))
    }
}
