//! Finite metric-measure spaces carrying a symmetric Dirichlet form.
//!
//! A [`StateSpace`] is a finite vertex set with a positive measure `m` and
//! symmetric nonnegative conductances `w`. The form is
//! `E(u,u) = 1/2 * sum_{x,y} w(x,y) (u(x) - u(y))^2` and the energy-measure
//! density is `gamma(u)(x) = (1/m(x)) * sum_y w(x,y) (u(x) - u(y))^2`, so that
//! `E(u,u) = 1/2 * sum_x gamma(u)(x) m(x)`.
//!
//! Lattice builders discretize the reflected diffusion with generator
//! `(sigma^2 / 2) * Laplacian` using trapezoid weights, so endpoint vertices
//! carry half a cell of mass. Such spaces are tagged as continuum
//! approximations with their mesh size; continuum claims about them are only
//! meaningful under mesh refinement.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vertex = usize;

const VOLUME_RTOL: f64 = 1e-12;

/// Metadata attached to a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpaceTag {
    /// Discretization of a continuum diffusion with mesh `mesh` and
    /// diffusion scale `sigma`.
    ContinuumApproximation {
        mesh: f64,
        sigma: f64,
    },
    Label(String),
}

/// Parse the text of a space file.
pub fn parse_descriptor(text: &str) -> Result<SpaceDescriptor> {
    Ok(toml::from_str(text)?)
}

/// Declarative description of a space, as read from a space file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceDescriptor {
    TwoState {
        m1: f64,
        m2: f64,
        w: f64,
    },
    #[serde(rename = "lattice_1d")]
    Lattice1d {
        cells: usize,
        #[serde(default = "one")]
        length: f64,
        #[serde(default = "one")]
        sigma: f64,
    },
    #[serde(rename = "grid_2d")]
    Grid2d {
        cells_x: usize,
        cells_y: usize,
        #[serde(default = "unit_square")]
        lengths: (f64, f64),
        #[serde(default = "one")]
        sigma: f64,
    },
    Explicit(ExplicitSpace),
}

fn one() -> f64 {
    1.0
}

fn unit_square() -> (f64, f64) {
    (1.0, 1.0)
}

/// Full tables for an explicitly specified space. Each undirected edge is
/// listed once as `[x, y, w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitSpace {
    pub measure: Vec<f64>,
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuum: Option<ContinuumInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuumInfo {
    pub mesh: f64,
    pub sigma: f64,
}

/// A finite weighted graph with vertex measure.
///
/// Immutable once built; share it behind an `Arc` for parallel work.
#[derive(Debug, Clone)]
pub struct StateSpace {
    measure: Vec<f64>,
    // Directed adjacency lists sorted by neighbour index. Built spaces are
    // symmetric; `from_raw` allows arbitrary entries for validation.
    adjacency: Vec<Vec<(Vertex, f64)>>,
    positions: Option<Vec<Vec<f64>>>,
    tags: Vec<SpaceTag>,
    declared_volume: Option<f64>,
}

impl StateSpace {
    /// Assemble a space from raw tables without checking invariants.
    /// Use [`validate_space`] to inspect the result.
    pub fn from_raw(measure: Vec<f64>, adjacency: Vec<Vec<(Vertex, f64)>>) -> Self {
        let mut adjacency = adjacency;
        for row in &mut adjacency {
            row.sort_by_key(|&(v, _)| v);
        }
        StateSpace {
            measure,
            adjacency,
            positions: None,
            tags: Vec::new(),
            declared_volume: None,
        }
    }

    /// Build from a measure and an undirected edge list, validating every
    /// invariant.
    pub fn from_edges(measure: Vec<f64>, edges: &[(Vertex, Vertex, f64)]) -> Result<Self> {
        let n = measure.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(x, y, w) in edges {
            if x >= n || y >= n {
                return Err(Error::VertexOutOfRange {
                    vertex: x.max(y),
                    n,
                });
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::validation(format!(
                    "edge ({x},{y}) has invalid weight {w}"
                )));
            }
            if w == 0.0 {
                continue;
            }
            if x == y {
                return Err(Error::validation(format!("self-loop at vertex {x}")));
            }
            push_weight(&mut adjacency[x], y, w);
            push_weight(&mut adjacency[y], x, w);
        }
        let space = StateSpace::from_raw(measure, adjacency);
        space.ensure_valid()?;
        Ok(space)
    }

    pub fn from_descriptor(desc: &SpaceDescriptor) -> Result<Self> {
        match *desc {
            SpaceDescriptor::TwoState { m1, m2, w } => build_two_state(m1, m2, w),
            SpaceDescriptor::Lattice1d {
                cells,
                length,
                sigma,
            } => build_lattice_1d(cells, length, sigma),
            SpaceDescriptor::Grid2d {
                cells_x,
                cells_y,
                lengths,
                sigma,
            } => build_grid_2d(cells_x, cells_y, lengths, sigma),
            SpaceDescriptor::Explicit(ref e) => {
                let mut space = StateSpace::from_edges(e.measure.clone(), &e.edges)?;
                if let Some(p) = &e.positions {
                    space = space.with_positions(p.clone())?;
                }
                if let Some(c) = e.continuum {
                    space.tags.push(SpaceTag::ContinuumApproximation {
                        mesh: c.mesh,
                        sigma: c.sigma,
                    });
                }
                space.declared_volume = e.volume;
                space.ensure_valid()?;
                Ok(space)
            }
        }
    }

    /// Read a space file (TOML key-value document).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        StateSpace::from_descriptor(&parse_descriptor(&text)?)
    }

    /// Write the full tables as an `explicit` space file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(&SpaceDescriptor::Explicit(self.to_explicit()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Full-table description of this space, suitable for writing to disk.
    pub fn to_explicit(&self) -> ExplicitSpace {
        let mut edges = Vec::new();
        for (x, row) in self.adjacency.iter().enumerate() {
            for &(y, w) in row {
                if x < y {
                    edges.push((x, y, w));
                }
            }
        }
        ExplicitSpace {
            measure: self.measure.clone(),
            edges,
            positions: self.positions.clone(),
            continuum: self
                .continuum()
                .map(|(mesh, sigma)| ContinuumInfo { mesh, sigma }),
            volume: self.declared_volume,
        }
    }

    pub fn with_positions(mut self, positions: Vec<Vec<f64>>) -> Result<Self> {
        if positions.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: positions.len(),
            });
        }
        let dim = positions.first().map_or(0, Vec::len);
        if positions.iter().any(|p| p.len() != dim) {
            return Err(Error::validation("positions have inconsistent dimension"));
        }
        self.positions = Some(positions);
        Ok(self)
    }

    pub fn with_tag(mut self, tag: SpaceTag) -> Self {
        self.tags.push(tag);
        self
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn mass(&self, x: Vertex) -> f64 {
        self.measure[x]
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.iter().sum()
    }

    /// Sorted `(neighbour, w)` pairs of `x`.
    pub fn neighbors(&self, x: Vertex) -> &[(Vertex, f64)] {
        &self.adjacency[x]
    }

    pub fn weight(&self, x: Vertex, y: Vertex) -> f64 {
        let row = &self.adjacency[x];
        row.binary_search_by_key(&y, |&(v, _)| v)
            .map(|i| row[i].1)
            .unwrap_or(0.0)
    }

    /// Total conductance at `x`.
    pub fn degree(&self, x: Vertex) -> f64 {
        self.adjacency[x].iter().map(|&(_, w)| w).sum()
    }

    /// Jump rate `(1/m(x)) * sum_y w(x,y)` of the associated chain.
    pub fn jump_rate(&self, x: Vertex) -> f64 {
        self.degree(x) / self.measure[x]
    }

    pub fn max_jump_rate(&self) -> f64 {
        (0..self.len())
            .map(|x| self.jump_rate(x))
            .fold(0.0, f64::max)
    }

    pub fn positions(&self) -> Option<&[Vec<f64>]> {
        self.positions.as_deref()
    }

    pub fn position(&self, x: Vertex) -> Option<&[f64]> {
        self.positions.as_ref().map(|p| p[x].as_slice())
    }

    pub fn tags(&self) -> &[SpaceTag] {
        &self.tags
    }

    /// `(mesh, sigma)` when the space approximates a continuum diffusion.
    pub fn continuum(&self) -> Option<(f64, f64)> {
        self.tags.iter().find_map(|t| match *t {
            SpaceTag::ContinuumApproximation { mesh, sigma } => Some((mesh, sigma)),
            _ => None,
        })
    }

    pub fn mesh(&self) -> Option<f64> {
        self.continuum().map(|(h, _)| h)
    }

    pub fn declared_volume(&self) -> Option<f64> {
        self.declared_volume
    }

    pub fn check_vertex(&self, x: Vertex) -> Result<()> {
        if x < self.len() {
            Ok(())
        } else {
            Err(Error::VertexOutOfRange {
                vertex: x,
                n: self.len(),
            })
        }
    }

    /// Vertex whose position is closest (Euclidean) to `point`.
    pub fn nearest_vertex(&self, point: &[f64]) -> Result<Vertex> {
        let positions = self
            .positions
            .as_ref()
            .ok_or_else(|| Error::validation("space has no vertex positions"))?;
        let mut best = (f64::INFINITY, 0);
        for (i, p) in positions.iter().enumerate() {
            if p.len() != point.len() {
                return Err(Error::DimensionMismatch {
                    expected: p.len(),
                    got: point.len(),
                });
            }
            let d2: f64 = p.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        Ok(best.1)
    }

    /// Connected components of the graph of positive conductances.
    pub fn components(&self) -> Vec<Vec<Vertex>> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = vec![start];
            label[start] = id;
            let mut queue = VecDeque::from([start]);
            while let Some(x) = queue.pop_front() {
                for &(y, w) in &self.adjacency[x] {
                    if w > 0.0 && y < n && label[y] == usize::MAX {
                        label[y] = id;
                        comp.push(y);
                        queue.push_back(y);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    fn ensure_valid(&self) -> Result<()> {
        let report = validate_space(self);
        if report.passed() {
            Ok(())
        } else {
            Err(Error::Validation(report.to_string()))
        }
    }

    pub(crate) fn check_function(&self, u: &[f64]) -> Result<()> {
        if u.len() == self.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.len(),
                got: u.len(),
            })
        }
    }
}

fn push_weight(row: &mut Vec<(Vertex, f64)>, y: Vertex, w: f64) {
    match row.iter_mut().find(|(v, _)| *v == y) {
        Some(entry) => entry.1 += w,
        None => row.push((y, w)),
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// Two vertices joined by one edge.
pub fn build_two_state(m1: f64, m2: f64, w: f64) -> Result<StateSpace> {
    require_positive("m1", m1)?;
    require_positive("m2", m2)?;
    require_positive("w", w)?;
    let space = StateSpace::from_edges(vec![m1, m2], &[(0, 1, w)])?
        .with_tag(SpaceTag::Label("two-state".into()));
    Ok(StateSpace {
        declared_volume: Some(m1 + m2),
        ..space
    })
}

fn trapezoid_weights(cells: usize, h: f64) -> Vec<f64> {
    (0..=cells)
        .map(|i| if i == 0 || i == cells { h / 2.0 } else { h })
        .collect()
}

/// Reflected-diffusion lattice on `[0, length]` with `cells` cells.
///
/// Vertices sit at spacing `h = length / cells` with trapezoid measure, and
/// each edge carries `w = sigma^2 / (2h)`.
pub fn build_lattice_1d(cells: usize, length: f64, sigma: f64) -> Result<StateSpace> {
    if cells < 2 {
        return Err(Error::validation(format!(
            "lattice needs at least 2 cells, got {cells}"
        )));
    }
    require_positive("length", length)?;
    require_positive("sigma", sigma)?;
    let h = length / cells as f64;
    let measure = trapezoid_weights(cells, h);
    let w = sigma * sigma / (2.0 * h);
    let edges: Vec<_> = (0..cells).map(|i| (i, i + 1, w)).collect();
    let positions = (0..=cells).map(|i| vec![i as f64 * h]).collect();
    let mut space = StateSpace::from_edges(measure, &edges)?
        .with_positions(positions)?
        .with_tag(SpaceTag::ContinuumApproximation { mesh: h, sigma });
    space.declared_volume = Some(length);
    space.ensure_valid()?;
    Ok(space)
}

/// Tensor-product lattice on `[0, lx] x [0, ly]`.
///
/// Vertex `(ix, iy)` has index `iy * (cells_x + 1) + ix` and measure equal to
/// the product of the axis trapezoid weights. An x-edge carries
/// `sigma^2 / (2 hx)` times the transverse weight of its row, and likewise
/// for y-edges.
pub fn build_grid_2d(
    cells_x: usize,
    cells_y: usize,
    lengths: (f64, f64),
    sigma: f64,
) -> Result<StateSpace> {
    if cells_x < 2 || cells_y < 2 {
        return Err(Error::validation(format!(
            "grid needs at least 2 cells per axis, got {cells_x}x{cells_y}"
        )));
    }
    require_positive("length x", lengths.0)?;
    require_positive("length y", lengths.1)?;
    require_positive("sigma", sigma)?;
    let hx = lengths.0 / cells_x as f64;
    let hy = lengths.1 / cells_y as f64;
    let tx = trapezoid_weights(cells_x, hx);
    let ty = trapezoid_weights(cells_y, hy);
    let nx = cells_x + 1;
    let idx = |ix: usize, iy: usize| iy * nx + ix;
    let s2 = sigma * sigma;

    let mut measure = Vec::with_capacity(nx * (cells_y + 1));
    let mut positions = Vec::with_capacity(measure.capacity());
    let mut edges = Vec::new();
    for iy in 0..=cells_y {
        for ix in 0..=cells_x {
            measure.push(tx[ix] * ty[iy]);
            positions.push(vec![ix as f64 * hx, iy as f64 * hy]);
            if ix < cells_x {
                edges.push((idx(ix, iy), idx(ix + 1, iy), s2 / (2.0 * hx) * ty[iy]));
            }
            if iy < cells_y {
                edges.push((idx(ix, iy), idx(ix, iy + 1), s2 / (2.0 * hy) * tx[ix]));
            }
        }
    }
    let mut space = StateSpace::from_edges(measure, &edges)?
        .with_positions(positions)?
        .with_tag(SpaceTag::ContinuumApproximation {
            mesh: hx.max(hy),
            sigma,
        });
    space.declared_volume = Some(lengths.0 * lengths.1);
    space.ensure_valid()?;
    Ok(space)
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    Empty,
    NonPositiveMeasure {
        vertex: Vertex,
        value: f64,
    },
    InvalidWeight {
        x: Vertex,
        y: Vertex,
        value: f64,
    },
    SelfLoop {
        vertex: Vertex,
    },
    DanglingNeighbor {
        x: Vertex,
        y: Vertex,
    },
    Asymmetric {
        x: Vertex,
        y: Vertex,
        forward: f64,
        backward: f64,
    },
    Disconnected {
        components: usize,
        isolated: Vec<Vertex>,
    },
    VolumeMismatch {
        declared: f64,
        actual: f64,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::Empty => write!(f, "space has no vertices"),
            ValidationIssue::NonPositiveMeasure { vertex, value } => {
                write!(f, "measure at vertex {vertex} is {value}, must be positive")
            }
            ValidationIssue::InvalidWeight { x, y, value } => {
                write!(
                    f,
                    "conductance w({x},{y}) = {value} is not a finite nonnegative number"
                )
            }
            ValidationIssue::SelfLoop { vertex } => write!(f, "self-loop at vertex {vertex}"),
            ValidationIssue::DanglingNeighbor { x, y } => {
                write!(f, "vertex {x} lists neighbour {y} outside the vertex set")
            }
            ValidationIssue::Asymmetric {
                x,
                y,
                forward,
                backward,
            } => write!(
                f,
                "symmetry violated: w({x},{y}) = {forward} but w({y},{x}) = {backward}"
            ),
            ValidationIssue::Disconnected {
                components,
                isolated,
            } => write!(
                f,
                "graph is disconnected: {components} components, isolated vertices {isolated:?}"
            ),
            ValidationIssue::VolumeMismatch { declared, actual } => {
                write!(
                    f,
                    "total measure {actual} differs from declared volume {declared}"
                )
            }
        }
    }
}

/// Outcome of [`validate_space`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_symmetry_violation(&self) -> bool {
        self.issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::Asymmetric { .. }))
    }

    pub fn has_connectivity_violation(&self) -> bool {
        self.issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::Disconnected { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "pass");
        }
        let msgs: Vec<String> = self.issues.iter().map(ToString::to_string).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Check every structural invariant of `space`. Never fails; problems are
/// collected in the report.
pub fn validate_space(space: &StateSpace) -> ValidationReport {
    let mut issues = Vec::new();
    let n = space.len();
    if n == 0 {
        issues.push(ValidationIssue::Empty);
        return ValidationReport { issues };
    }
    for (x, &m) in space.measure.iter().enumerate() {
        if !(m.is_finite() && m > 0.0) {
            issues.push(ValidationIssue::NonPositiveMeasure {
                vertex: x,
                value: m,
            });
        }
    }
    for (x, row) in space.adjacency.iter().enumerate() {
        for &(y, w) in row {
            if y >= n {
                issues.push(ValidationIssue::DanglingNeighbor { x, y });
                continue;
            }
            if !(w.is_finite() && w >= 0.0) {
                issues.push(ValidationIssue::InvalidWeight { x, y, value: w });
            }
            if x == y && w != 0.0 {
                issues.push(ValidationIssue::SelfLoop { vertex: x });
            }
        }
    }
    // Compare both directions of every listed pair once.
    for (x, row) in space.adjacency.iter().enumerate() {
        for &(y, forward) in row {
            if y >= n || x == y {
                continue;
            }
            let backward = space.weight(y, x);
            let listed_back = space.adjacency[y].iter().any(|&(v, _)| v == x);
            if (x < y || !listed_back) && forward != backward {
                issues.push(ValidationIssue::Asymmetric {
                    x,
                    y,
                    forward,
                    backward,
                });
            }
        }
    }
    let components = space.components();
    if components.len() > 1 {
        let isolated = components
            .iter()
            .filter(|c| c.len() == 1 && space.degree(c[0]) == 0.0)
            .map(|c| c[0])
            .collect();
        issues.push(ValidationIssue::Disconnected {
            components: components.len(),
            isolated,
        });
    }
    if let Some(declared) = space.declared_volume {
        let actual = space.total_mass();
        if (actual - declared).abs() > VOLUME_RTOL * declared.abs().max(f64::MIN_POSITIVE) {
            issues.push(ValidationIssue::VolumeMismatch { declared, actual });
        }
    }
    ValidationReport { issues }
}

/// A nonempty vertex subset with a human-readable description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Region {
    vertices: Vec<Vertex>,
    description: String,
}

impl Region {
    pub fn new(
        space: &StateSpace,
        vertices: impl IntoIterator<Item = Vertex>,
        description: impl Into<String>,
    ) -> Result<Self> {
        let mut vertices: Vec<_> = vertices.into_iter().collect();
        vertices.sort_unstable();
        vertices.dedup();
        if vertices.is_empty() {
            return Err(Error::validation("region is empty"));
        }
        if let Some(&v) = vertices.last() {
            space.check_vertex(v)?;
        }
        Ok(Region {
            vertices,
            description: description.into(),
        })
    }

    pub fn full(space: &StateSpace) -> Self {
        Region {
            vertices: (0..space.len()).collect(),
            description: "whole space".into(),
        }
    }

    pub fn singleton(space: &StateSpace, x: Vertex) -> Result<Self> {
        Region::new(space, [x], format!("{{{x}}}"))
    }

    /// Vertices whose first coordinate lies in `[lo, hi]`.
    pub fn interval(space: &StateSpace, lo: f64, hi: f64) -> Result<Self> {
        let positions = space
            .positions()
            .ok_or_else(|| Error::validation("interval regions need vertex positions"))?;
        let slack = 1e-12 * (hi.abs().max(lo.abs()).max(1.0));
        let vs = positions
            .iter()
            .enumerate()
            .filter(|(_, p)| p[0] >= lo - slack && p[0] <= hi + slack)
            .map(|(i, _)| i);
        Region::new(space, vs, format!("[{lo}, {hi}]"))
    }

    /// Vertices whose position lies in the axis-aligned box `lo <= p <= hi`.
    pub fn boxed(space: &StateSpace, lo: &[f64], hi: &[f64]) -> Result<Self> {
        let positions = space
            .positions()
            .ok_or_else(|| Error::validation("box regions need vertex positions"))?;
        let vs = positions
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                p.len() == lo.len()
                    && p.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(c, (a, b))| *c >= a - 1e-12 && *c <= b + 1e-12)
            })
            .map(|(i, _)| i);
        Region::new(space, vs, format!("box {lo:?}..{hi:?}"))
    }

    pub(crate) fn from_sorted_unchecked(vertices: Vec<Vertex>, description: String) -> Self {
        debug_assert!(!vertices.is_empty());
        debug_assert!(vertices.windows(2).all(|w| w[0] < w[1]));
        Region {
            vertices,
            description,
        }
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, x: Vertex) -> bool {
        self.vertices.binary_search(&x).is_ok()
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.vertices.iter().all(|&v| other.contains(v))
    }

    pub fn mass(&self, space: &StateSpace) -> f64 {
        self.vertices.iter().map(|&v| space.mass(v)).sum()
    }

    /// Indicator function on the full vertex set.
    pub fn indicator(&self, n: usize) -> Vec<f64> {
        let mut f = vec![0.0; n];
        for &v in &self.vertices {
            f[v] = 1.0;
        }
        f
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut f = vec![false; n];
        for &v in &self.vertices {
            f[v] = true;
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_basics() {
        let s = build_two_state(1.0, 2.0, 1.0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.total_mass(), 3.0);
        assert_eq!(s.weight(0, 1), 1.0);
        assert!(validate_space(&s).passed());
    }

    #[test]
    fn two_state_rejects_nonpositive() {
        assert!(build_two_state(0.0, 1.0, 1.0).is_err());
        assert!(build_two_state(1.0, -1.0, 1.0).is_err());
        assert!(build_two_state(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn lattice_1d_layout() {
        let s = build_lattice_1d(64, 1.0, 1.0).unwrap();
        assert_eq!(s.len(), 65);
        assert_eq!(s.mesh(), Some(1.0 / 64.0));
        assert_eq!(s.weight(10, 11), 32.0);
        assert!((s.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(s.mass(0), 1.0 / 128.0);
        assert_eq!(s.mass(5), 1.0 / 64.0);
    }

    #[test]
    fn lattice_1d_rejects_few_cells() {
        assert!(build_lattice_1d(1, 1.0, 1.0).is_err());
        assert!(build_lattice_1d(4, 0.0, 1.0).is_err());
    }

    #[test]
    fn lattice_refinement_halves_mass() {
        let a = build_lattice_1d(32, 1.0, 1.0).unwrap();
        let b = build_lattice_1d(64, 1.0, 1.0).unwrap();
        assert_eq!(b.len(), 2 * a.len() - 1);
        assert_eq!(b.mass(3), a.mass(3) / 2.0);
    }

    #[test]
    fn grid_2d_layout() {
        let s = build_grid_2d(4, 4, (1.0, 1.0), 1.0).unwrap();
        assert_eq!(s.len(), 25);
        assert!((s.total_mass() - 1.0).abs() < 1e-12);
        let t = build_grid_2d(3, 5, (2.0, 0.5), 0.7).unwrap();
        assert!((t.total_mass() - 1.0).abs() < 1e-12);
        assert!(build_grid_2d(1, 4, (1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn validation_reports_asymmetry() {
        let s = StateSpace::from_raw(vec![1.0, 1.0], vec![vec![(1, 1.0)], vec![]]);
        let report = validate_space(&s);
        assert!(!report.passed());
        assert!(report.has_symmetry_violation());
    }

    #[test]
    fn validation_reports_isolated_vertex() {
        let s = StateSpace::from_raw(
            vec![1.0, 1.0, 1.0],
            vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![]],
        );
        let report = validate_space(&s);
        assert!(report.has_connectivity_violation());
        assert!(!report.has_symmetry_violation());
        match &report.issues[0] {
            ValidationIssue::Disconnected { isolated, .. } => assert_eq!(isolated, &vec![2]),
            other => panic!("unexpected issue {other:?}"),
        }
    }

    #[test]
    fn validation_reports_bad_measure() {
        let s = StateSpace::from_raw(vec![1.0, 0.0], vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        assert!(!validate_space(&s).passed());
    }

    #[test]
    fn descriptor_round_trip_through_toml() {
        let text = "kind = \"lattice_1d\"\ncells = 8\n";
        let desc: SpaceDescriptor = toml::from_str(text).unwrap();
        let s = StateSpace::from_descriptor(&desc).unwrap();
        let explicit = SpaceDescriptor::Explicit(s.to_explicit());
        let written = toml::to_string(&explicit).unwrap();
        let back: SpaceDescriptor = toml::from_str(&written).unwrap();
        let t = StateSpace::from_descriptor(&back).unwrap();
        assert_eq!(s.measure(), t.measure());
        assert_eq!(s.mesh(), t.mesh());
        assert_eq!(s.weight(3, 4), t.weight(3, 4));
    }

    #[test]
    fn regions() {
        let s = build_lattice_1d(10, 1.0, 1.0).unwrap();
        let a = Region::interval(&s, 0.0, 0.3).unwrap();
        assert_eq!(a.vertices(), &[0, 1, 2, 3]);
        assert!(Region::new(&s, Vec::<usize>::new(), "empty").is_err());
        assert!(Region::new(&s, [11], "oob").is_err());
        assert!(a.is_subset_of(&Region::full(&s)));
        assert_eq!(s.nearest_vertex(&[0.34]).unwrap(), 3);
    }
}
