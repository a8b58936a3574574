//! Declarative experiments: one space, a list of probes, CSV outputs.
//!
//! A config file names a space (a path or an inline table) and any number
//! of `[[probe]]` tables, each with an `id`, a `kind` and the parameters of
//! that kind. [`run_experiment`] runs the probes in order and writes
//! `<id>.csv` per probe, `summary.csv` and `timing.csv`. Wall times live only
//! in `timing.csv`, so every other file is byte-identical across reruns.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{
    gaussian_bound_threshold, relative_deviation, varadhan_indicator, varadhan_kernel,
    AsymptoticProbe,
};
use crate::energy::{
    ac2_energy, default_h_grid, discrete_energy, energy_sup, identification_gap,
    metric_derivative, CurveSpec, DEFAULT_MAX_LEVEL, DEFAULT_QUADRATURE,
};
use crate::error::{Error, Result};
use crate::fdd::{default_beta, fdd_ldp_curve, EventSpec, SetSpec, TimePartition};
use crate::fit::log_grid_decreasing;
use crate::form::SpectralCache;
use crate::inequalities::{
    doubling_exponent, harnack_constant, poincare_report, volume_scaling_curve, InequalityReport,
};
use crate::metric::{intrinsic_distance, IntrinsicMetric, DEFAULT_TOL};
use crate::simulator::{tube_ldp_estimate, TubeEvent, TubeMethod};
use crate::space::{Region, SpaceDescriptor, StateSpace, Vertex};

pub const NO_PAPER_TARGET: &str = "no-paper-target";
/// Carried by every row computed on a space: finite graphs only approximate
/// continuum statements.
pub const FINITE_GRAPH: &str = "finite-graph approximation";
/// Overrides the configured thread count.
pub const THREADS_ENV: &str = "DLAB_THREADS";

pub const PROBE_KINDS: [&str; 11] = [
    "vd",
    "pi",
    "hi",
    "volscale",
    "metric",
    "varadhan_kernel",
    "varadhan_indicator",
    "gaussian_threshold",
    "fdd",
    "energy",
    "tube",
];

const RESERVED_IDS: [&str; 2] = ["summary", "timing"];

/// A vertex by index, or the vertex nearest to a coordinate point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VertexRef {
    Index(Vertex),
    Coords(Vec<f64>),
}

impl VertexRef {
    pub fn resolve(&self, space: &StateSpace) -> Result<Vertex> {
        match self {
            VertexRef::Index(v) => {
                space.check_vertex(*v)?;
                Ok(*v)
            }
            VertexRef::Coords(p) => space.nearest_vertex(p),
        }
    }
}

/// `17` is a vertex index; `@0.25` or `@0.5,0.5` is a coordinate point.
impl FromStr for VertexRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.strip_prefix('@') {
            Some(rest) => Ok(VertexRef::Coords(parse_floats(rest)?)),
            None => s
                .parse()
                .map(VertexRef::Index)
                .map_err(|_| Error::Parse(format!("bad vertex `{s}`; use an index or @x[,y]"))),
        }
    }
}

impl fmt::Display for VertexRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexRef::Index(v) => write!(f, "{v}"),
            VertexRef::Coords(p) => {
                let parts: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                write!(f, "@{}", parts.join(","))
            }
        }
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number `{t}`")))
        })
        .collect()
}

/// Set syntax for command lines: `all`, `v:1,2,3` (indices), `lo:hi`
/// (interval on the first axis) or `x0,y0:x1,y1` (box).
pub fn parse_set(s: &str) -> Result<SetSpec> {
    let s = s.trim();
    if s == "all" {
        return Ok(SetSpec::Full);
    }
    if let Some(rest) = s.strip_prefix("v:") {
        let vertices = rest
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad vertex index `{t}`")))
            })
            .collect::<Result<_>>()?;
        return Ok(SetSpec::Vertices { vertices });
    }
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("bad set `{s}`; use all, v:i,j,.. or lo:hi")))?;
    let (lo, hi) = (parse_floats(lo)?, parse_floats(hi)?);
    if lo.len() == 1 && hi.len() == 1 {
        Ok(SetSpec::Interval { lo: lo[0], hi: hi[0] })
    } else {
        Ok(SetSpec::Boxed { lo, hi })
    }
}

/// Log-spaced time (or scale) grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0 && self.max > self.min && self.max.is_finite()) || self.points < 2 {
            return Err(Error::InvalidTime(format!(
                "grid needs 0 < min < max and at least 2 points, got {self:?}"
            )));
        }
        Ok(log_grid_decreasing(self.min, self.max, self.points))
    }
}

/// A file path (relative to the config) or the document inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    File(PathBuf),
    Inline(T),
}

impl<T: Clone> Source<T> {
    fn path(&self, base: &Path) -> Option<PathBuf> {
        match self {
            Source::File(p) => Some(base.join(p)),
            Source::Inline(_) => None,
        }
    }

    fn load(&self, base: &Path, read: impl Fn(&Path) -> Result<T>) -> Result<T> {
        match self {
            Source::File(p) => {
                let path = base.join(p);
                read(&path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
            }
            Source::Inline(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyOp {
    Discrete,
    Sup,
    Derivative,
    Ac2,
    Gap,
}

impl FromStr for EnergyOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(EnergyOp::Discrete),
            "sup" => Ok(EnergyOp::Sup),
            "derivative" => Ok(EnergyOp::Derivative),
            "ac2" => Ok(EnergyOp::Ac2),
            "gap" => Ok(EnergyOp::Gap),
            _ => Err(Error::Parse(format!("unknown energy op `{s}`"))),
        }
    }
}

fn default_time_factors() -> Vec<f64> {
    vec![4.0, 6.0, 8.0]
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_energy_tol() -> f64 {
    1e-6
}

fn default_max_level() -> usize {
    DEFAULT_MAX_LEVEL
}

fn default_nodes() -> usize {
    DEFAULT_QUADRATURE
}

fn default_samples() -> usize {
    10_000
}

/// Probe parameters by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Probe {
    Vd {
        radii: Vec<f64>,
        #[serde(default)]
        region: Option<SetSpec>,
    },
    Pi {
        radii: Vec<f64>,
        #[serde(default)]
        region: Option<SetSpec>,
    },
    Hi {
        radii: Vec<f64>,
        #[serde(default = "default_time_factors")]
        time_factors: Vec<f64>,
        #[serde(default)]
        region: Option<SetSpec>,
        #[serde(default)]
        centers: Option<Vec<VertexRef>>,
    },
    #[serde(rename = "volscale")]
    VolScale {
        center: VertexRef,
        epsilon: f64,
        grid: GridSpec,
        /// Defaults to the dimension of the vertex positions.
        #[serde(default)]
        exponent: Option<f64>,
    },
    Metric {
        #[serde(default)]
        pairs: Vec<(VertexRef, VertexRef)>,
        #[serde(default)]
        all: bool,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    VaradhanKernel {
        x: VertexRef,
        y: VertexRef,
        grid: GridSpec,
    },
    VaradhanIndicator {
        set: SetSpec,
        x: VertexRef,
        grid: GridSpec,
    },
    GaussianThreshold {
        a: SetSpec,
        b: SetSpec,
        #[serde(default)]
        grid: Option<GridSpec>,
    },
    Fdd {
        event: Source<EventSpec>,
        grid: GridSpec,
    },
    Energy {
        curve: Source<CurveSpec>,
        op: EnergyOp,
        /// Partition times for `discrete`.
        #[serde(default)]
        partition: Option<Vec<f64>>,
        /// Evaluation time for `derivative`.
        #[serde(default)]
        t: Option<f64>,
        #[serde(default = "default_energy_tol")]
        tol: f64,
        #[serde(default = "default_max_level")]
        max_level: usize,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    Tube {
        curve: Source<CurveSpec>,
        delta: f64,
        checkpoints: usize,
        grid: GridSpec,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        beta: Option<f64>,
    },
}

impl Probe {
    pub fn kind(&self) -> &'static str {
        match self {
            Probe::Vd { .. } => "vd",
            Probe::Pi { .. } => "pi",
            Probe::Hi { .. } => "hi",
            Probe::VolScale { .. } => "volscale",
            Probe::Metric { .. } => "metric",
            Probe::VaradhanKernel { .. } => "varadhan_kernel",
            Probe::VaradhanIndicator { .. } => "varadhan_indicator",
            Probe::GaussianThreshold { .. } => "gaussian_threshold",
            Probe::Fdd { .. } => "fdd",
            Probe::Energy { .. } => "energy",
            Probe::Tube { .. } => "tube",
        }
    }

    fn files(&self, base: &Path) -> Vec<PathBuf> {
        match self {
            Probe::Fdd { event, .. } => event.path(base).into_iter().collect(),
            Probe::Energy { curve, .. } | Probe::Tube { curve, .. } => {
                curve.path(base).into_iter().collect()
            }
            _ => Vec::new(),
        }
    }

    /// The same probe with every file reference read in.
    fn inlined(&self, base: &Path) -> Result<Probe> {
        let mut p = self.clone();
        match &mut p {
            Probe::Fdd { event, .. } => {
                *event = Source::Inline(event.load(base, |f| EventSpec::load(f))?);
            }
            Probe::Energy { curve, .. } | Probe::Tube { curve, .. } => {
                *curve = Source::Inline(curve.load(base, |f| CurveSpec::load(f))?);
            }
            _ => {}
        }
        Ok(p)
    }
}

/// One `[[probe]]` table.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub id: String,
    pub probe: Probe,
}

// The id is split off by hand so the per-kind tables can reject unknown
// fields.
impl<'de> Deserialize<'de> for ProbeConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table = toml::Table::deserialize(d)?;
        let id = match table.remove("id") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(D::Error::custom("probe id must be a string")),
            None => return Err(D::Error::missing_field("id")),
        };
        let probe = Probe::deserialize(toml::Value::Table(table))
            .map_err(|e| D::Error::custom(format!("probe `{id}`: {}", e.message())))?;
        Ok(ProbeConfig { id, probe })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: Source<SpaceDescriptor>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default, rename = "probe")]
    pub probes: Vec<ProbeConfig>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parse and check probe ids. File references are not checked.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.into();
        let mut seen = HashSet::new();
        for p in &cfg.probes {
            let ok_chars = p
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
            if p.id.is_empty() || !ok_chars || p.id.starts_with('.') {
                return Err(Error::validation(format!(
                    "probe id `{}` must be nonempty and use only letters, digits, '_', '-', '.'",
                    p.id
                )));
            }
            if RESERVED_IDS.contains(&p.id.as_str()) {
                return Err(Error::validation(format!("probe id `{}` is reserved", p.id)));
            }
            if !seen.insert(p.id.clone()) {
                return Err(Error::validation(format!("duplicate probe id `{}`", p.id)));
            }
        }
        Ok(cfg)
    }

    /// Read a config file and check that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::parse(&text, base).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn check_files(&self) -> Result<()> {
        let mut files: Vec<PathBuf> = self.space.path(&self.base_dir).into_iter().collect();
        for p in &self.probes {
            files.extend(p.probe.files(&self.base_dir));
        }
        match files.into_iter().find(|f| !f.is_file()) {
            Some(f) => Err(Error::validation(format!(
                "missing file {}",
                f.display()
            ))),
            None => Ok(()),
        }
    }

    pub fn load_space(&self) -> Result<StateSpace> {
        match &self.space {
            Source::File(p) => {
                let path = self.base_dir.join(p);
                StateSpace::load(&path).map_err(|e| match e {
                    Error::Io(io) => Error::validation(format!("{}: {io}", path.display())),
                    other => other,
                })
            }
            Source::Inline(d) => StateSpace::from_descriptor(d),
        }
    }
}

/// Shared, lazily built state for a run of probes on one space.
pub struct ProbeContext {
    space: Option<Arc<StateSpace>>,
    base_dir: PathBuf,
    cache: OnceLock<std::result::Result<SpectralCache, String>>,
    metric: OnceLock<IntrinsicMetric>,
}

impl ProbeContext {
    pub fn new(space: Option<Arc<StateSpace>>, base_dir: impl Into<PathBuf>) -> Self {
        ProbeContext {
            space,
            base_dir: base_dir.into(),
            cache: OnceLock::new(),
            metric: OnceLock::new(),
        }
    }

    pub fn space(&self) -> Result<&Arc<StateSpace>> {
        self.space
            .as_ref()
            .ok_or_else(|| Error::validation("this probe needs a space"))
    }

    /// Certified metric, built on first use.
    pub fn metric(&self) -> Result<&IntrinsicMetric> {
        let space = self.space()?;
        Ok(self.metric.get_or_init(|| IntrinsicMetric::certified(space)))
    }

    pub fn cache(&self) -> Result<&SpectralCache> {
        let space = self.space()?;
        self.cache
            .get_or_init(|| SpectralCache::new(space.clone()).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Numerical(e.clone()))
    }
}

/// CSV table with string cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

/// Shortest round-trip text for a float; exponent form outside
/// `[1e-4, 1e15)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Plot columns of a probe with a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    fn new(columns: &[&str]) -> Self {
        Series {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// What a probe produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutput {
    pub headline: f64,
    pub target: Option<f64>,
    pub flags: Vec<String>,
    pub table: Table,
    pub series: Option<Series>,
}

impl ProbeOutput {
    fn scalar(headline: f64, target: Option<f64>, flags: Vec<String>, table: Table) -> Self {
        ProbeOutput {
            headline,
            target,
            flags,
            table,
            series: None,
        }
    }
}

fn region_or_full(ctx: &ProbeContext, spec: &Option<SetSpec>) -> Result<Region> {
    let space = ctx.space()?;
    match spec {
        Some(s) => s.resolve(space, ctx.metric()?),
        None => Ok(Region::full(space)),
    }
}

fn inequality_table(report: &InequalityReport) -> Table {
    let mut cols = vec!["center", "radius", "time", "value"];
    cols.extend(report.detail_columns.iter().map(String::as_str));
    cols.push("flag");
    let mut t = Table::new(&cols);
    for s in &report.samples {
        let mut row = vec![
            s.center.to_string(),
            fmt_f64(s.radius),
            fmt_f64(s.time),
            fmt_f64(s.value),
        ];
        row.extend(s.details.iter().copied().map(fmt_f64));
        row.push(s.flag.clone().unwrap_or_default());
        t.push(row);
    }
    t
}

fn inequality_output(report: InequalityReport) -> ProbeOutput {
    ProbeOutput::scalar(
        report.best,
        None,
        report.flags.clone(),
        inequality_table(&report),
    )
}

fn varadhan_output(p: AsymptoticProbe) -> ProbeOutput {
    let mut table = Table::new(&["t", "t_log_q", "model_fit", "target", "deviation", "in_window"]);
    let mut series = Series::new(&["t", "t_log_p", "target"]);
    for i in 0..p.t_grid.len() {
        table.push(vec![
            fmt_f64(p.t_grid[i]),
            fmt_f64(p.raw[i]),
            fmt_f64(p.model_fit[i]),
            fmt_f64(p.target),
            fmt_f64(relative_deviation(p.raw[i], p.target)),
            p.in_window[i].to_string(),
        ]);
        series.rows.push(vec![p.t_grid[i], p.raw[i], p.target]);
    }
    ProbeOutput {
        headline: p.limit,
        target: Some(p.target),
        flags: p.flags,
        table,
        series: Some(series),
    }
}

/// Scan columns shared by fdd and tube probes.
fn scale_scan_output(
    p: &AsymptoticProbe,
    bracket: (f64, f64),
    extra_cols: &[&str],
    extra: impl Fn(usize) -> Vec<f64>,
) -> (Table, Series) {
    let mut cols = vec!["s", "s_log_p", "model_fit", "in_window", "bracket_lo", "bracket_hi"];
    cols.extend_from_slice(extra_cols);
    let mut table = Table::new(&cols);
    let mut series = Series::new(&["s", "s_log_P", "bracket_lo", "bracket_hi"]);
    for i in 0..p.t_grid.len() {
        let mut row = vec![
            fmt_f64(p.t_grid[i]),
            fmt_f64(p.raw[i]),
            fmt_f64(p.model_fit[i]),
            p.in_window[i].to_string(),
            fmt_f64(bracket.0),
            fmt_f64(bracket.1),
        ];
        row.extend(extra(i).into_iter().map(fmt_f64));
        table.push(row);
        series
            .rows
            .push(vec![p.t_grid[i], p.raw[i], bracket.0, bracket.1]);
    }
    (table, series)
}

/// Run one probe against a context. `seed` only matters for Monte Carlo.
pub fn run_probe(ctx: &ProbeContext, probe: &Probe, seed: u64) -> Result<ProbeOutput> {
    match probe {
        Probe::Vd { radii, region } => {
            let region = region_or_full(ctx, region)?;
            let rep = doubling_exponent(ctx.space()?, ctx.metric()?, &region, radii)?;
            Ok(inequality_output(rep))
        }
        Probe::Pi { radii, region } => {
            let region = region_or_full(ctx, region)?;
            let rep = poincare_report(ctx.space()?, ctx.metric()?, &region, radii)?;
            Ok(inequality_output(rep))
        }
        Probe::Hi {
            radii,
            time_factors,
            region,
            centers,
        } => {
            let region = region_or_full(ctx, region)?;
            let space = ctx.space()?;
            let centers = centers
                .as_ref()
                .map(|c| c.iter().map(|v| v.resolve(space)).collect::<Result<Vec<_>>>())
                .transpose()?;
            let rep = harnack_constant(
                ctx.cache()?,
                ctx.metric()?,
                &region,
                radii,
                time_factors,
                centers.as_deref(),
            )?;
            Ok(inequality_output(rep))
        }
        Probe::VolScale {
            center,
            epsilon,
            grid,
            exponent,
        } => {
            let space = ctx.space()?;
            let x = center.resolve(space)?;
            let exponent = exponent.unwrap_or_else(|| {
                space
                    .positions()
                    .and_then(|p| p.first())
                    .map_or(1.0, |p| p.len().max(1) as f64)
            });
            let rep =
                volume_scaling_curve(space, ctx.metric()?, x, *epsilon, &grid.values()?, exponent)?;
            let mut table = Table::new(&[
                "t",
                "radius",
                "volume",
                "t_log_volume",
                "bound",
                "bound_holds",
            ]);
            let mut series = Series::new(&["t", "t_log_volume", "bound"]);
            for r in &rep.rows {
                table.push(vec![
                    fmt_f64(r.t),
                    fmt_f64(r.radius),
                    fmt_f64(r.volume),
                    fmt_f64(r.t_log_volume),
                    fmt_f64(r.bound),
                    r.bound_holds.to_string(),
                ]);
                series.rows.push(vec![r.t, r.t_log_volume, r.bound]);
            }
            let mut flags = Vec::new();
            if !rep.all_bounds_hold {
                flags.push("volume bound violated".to_string());
            }
            Ok(ProbeOutput {
                headline: rep.fitted_limit,
                target: Some(0.0),
                flags,
                table,
                series: Some(series),
            })
        }
        Probe::Metric { pairs, all, tol } => {
            let space = ctx.space()?;
            let pairs: Vec<(Vertex, Vertex)> = if *all {
                let n = space.len();
                (0..n)
                    .flat_map(|x| (x + 1..n).map(move |y| (x, y)))
                    .collect()
            } else {
                pairs
                    .iter()
                    .map(|(a, b)| Ok((a.resolve(space)?, b.resolve(space)?)))
                    .collect::<Result<_>>()?
            };
            if pairs.is_empty() {
                return Err(Error::validation("metric probe needs pairs or all = true"));
            }
            let brackets = pairs
                .par_iter()
                .map(|&(x, y)| intrinsic_distance(space, x, y, *tol))
                .collect::<Result<Vec<_>>>()?;
            let mut table =
                Table::new(&["x", "y", "lower", "upper", "gap", "witness_max_gamma"]);
            let mut flags = Vec::new();
            for b in &brackets {
                table.push(vec![
                    b.x.to_string(),
                    b.y.to_string(),
                    fmt_f64(b.lower),
                    fmt_f64(b.upper),
                    fmt_f64(b.gap()),
                    fmt_f64(b.witness_max_gamma),
                ]);
                if !b.converged {
                    flags.push(format!("pair ({}, {}) not converged", b.x, b.y));
                }
            }
            let headline = if *all {
                brackets.iter().map(|b| b.lower).fold(0.0, f64::max)
            } else {
                brackets[0].lower
            };
            Ok(ProbeOutput::scalar(headline, None, flags, table))
        }
        Probe::VaradhanKernel { x, y, grid } => {
            let space = ctx.space()?;
            let (x, y) = (x.resolve(space)?, y.resolve(space)?);
            let p = varadhan_kernel(ctx.cache()?, ctx.metric()?, x, y, &grid.values()?)?;
            Ok(varadhan_output(p))
        }
        Probe::VaradhanIndicator { set, x, grid } => {
            let space = ctx.space()?;
            let a = set.resolve(space, ctx.metric()?)?;
            let x = x.resolve(space)?;
            let p = varadhan_indicator(ctx.cache()?, ctx.metric()?, &a, x, &grid.values()?)?;
            Ok(varadhan_output(p))
        }
        Probe::GaussianThreshold { a, b, grid } => {
            let space = ctx.space()?;
            let metric = ctx.metric()?;
            let (a, b) = (a.resolve(space, metric)?, b.resolve(space, metric)?);
            let grid = grid.as_ref().map(GridSpec::values).transpose()?;
            let g = gaussian_bound_threshold(ctx.cache()?, metric, &a, &b, grid.as_deref())?;
            let mut table = Table::new(&["t", "ln_lhs", "ln_rhs", "holds"]);
            let mut series = Series::new(&["t", "ln_lhs", "ln_rhs"]);
            for &(t, l, r) in &g.samples {
                table.push(vec![
                    fmt_f64(t),
                    fmt_f64(l),
                    fmt_f64(r),
                    (l <= r + 1e-12 * r.abs().max(1.0)).to_string(),
                ]);
                series.rows.push(vec![t, l, r]);
            }
            let mut flags = Vec::new();
            if g.no_violation {
                flags.push("no violation on the grid".to_string());
            }
            if g.violated_at_grid_max {
                flags.push("violated at the largest grid time".to_string());
            }
            Ok(ProbeOutput {
                headline: g.t_star,
                target: None,
                flags,
                table,
                series: Some(series),
            })
        }
        Probe::Fdd { event, grid } => {
            let space = ctx.space()?;
            let metric = ctx.metric()?;
            let spec = event.load(&ctx.base_dir, |f| EventSpec::load(f))?;
            let (event, beta) = spec.build(space, metric)?;
            let c = fdd_ldp_curve(ctx.cache()?, metric, &event, &grid.values()?, beta)?;
            let bracket = c.bracket.limit_bracket();
            let p = &c.probe;
            let (table, series) = scale_scan_output(
                p,
                bracket,
                &["s_log_p_shrunk", "s_log_p_enlarged"],
                |i| {
                    vec![
                        p.t_grid[i] * c.log_p_shrunk[i],
                        p.t_grid[i] * c.log_p_enlarged[i],
                    ]
                },
            );
            let mut flags = p.flags.clone();
            if !c.inside_bracket {
                flags.push("limit outside rate bracket".to_string());
            }
            Ok(ProbeOutput {
                headline: p.limit,
                target: Some(p.target),
                flags,
                table,
                series: Some(series),
            })
        }
        Probe::Energy {
            curve,
            op,
            partition,
            t,
            tol,
            max_level,
            nodes,
        } => {
            let spec = curve.load(&ctx.base_dir, |f| CurveSpec::load(f))?;
            let curve = spec.build(ctx.space.clone())?;
            match op {
                EnergyOp::Discrete => {
                    let times = partition.clone().ok_or_else(|| {
                        Error::validation("discrete energy needs partition times")
                    })?;
                    let p = TimePartition::new(times)?;
                    let e = discrete_energy(&curve, &p)?;
                    let mut table = Table::new(&["partition_points", "energy"]);
                    table.push(vec![p.times().len().to_string(), fmt_f64(e)]);
                    Ok(ProbeOutput::scalar(e, None, Vec::new(), table))
                }
                EnergyOp::Sup => {
                    let e = energy_sup(&curve, *tol, *max_level)?;
                    let mut table = Table::new(&["level", "energy"]);
                    let mut series = Series::new(&["level", "energy"]);
                    for (k, v) in e.levels.iter().enumerate() {
                        table.push(vec![k.to_string(), fmt_f64(*v)]);
                        series.rows.push(vec![k as f64, *v]);
                    }
                    Ok(ProbeOutput {
                        headline: e.value,
                        target: None,
                        flags: e.flags,
                        table,
                        series: Some(series),
                    })
                }
                EnergyOp::Derivative => {
                    let t = t.ok_or_else(|| Error::validation("derivative needs a time t"))?;
                    let s = metric_derivative(&curve, t, &default_h_grid())?;
                    let mut table = Table::new(&["h", "quotient"]);
                    let mut series = Series::new(&["h", "quotient"]);
                    for &(h, q) in &s.quotients {
                        table.push(vec![fmt_f64(h), fmt_f64(q)]);
                        series.rows.push(vec![h, q]);
                    }
                    Ok(ProbeOutput {
                        headline: s.value,
                        target: None,
                        flags: s.flags,
                        table,
                        series: Some(series),
                    })
                }
                EnergyOp::Ac2 => {
                    let e = ac2_energy(&curve, *nodes)?;
                    let mut table = Table::new(&["value", "nodes", "failed_nodes", "defined"]);
                    table.push(vec![
                        fmt_f64(e.value),
                        e.nodes.to_string(),
                        e.failed_nodes.to_string(),
                        e.defined.to_string(),
                    ]);
                    Ok(ProbeOutput::scalar(e.value, None, e.flags, table))
                }
                EnergyOp::Gap => {
                    let g = identification_gap(&curve, *tol)?;
                    let mut table =
                        Table::new(&["h_sup", "h_ac2", "gap", "lower_direction_holds"]);
                    table.push(vec![
                        fmt_f64(g.h_sup.value),
                        fmt_f64(g.h_ac2.value),
                        fmt_opt(g.gap),
                        g.lower_direction_holds.to_string(),
                    ]);
                    let mut flags = g.flags;
                    if !g.lower_direction_holds {
                        flags.push("H exceeds H~".to_string());
                    }
                    Ok(ProbeOutput::scalar(
                        g.gap.unwrap_or(f64::NAN),
                        Some(0.0),
                        flags,
                        table,
                    ))
                }
            }
        }
        Probe::Tube {
            curve,
            delta,
            checkpoints,
            grid,
            samples,
            beta,
        } => {
            let space = ctx.space()?;
            let metric = ctx.metric()?;
            let spec = curve.load(&ctx.base_dir, |f| CurveSpec::load(f))?;
            let center = spec.build(Some(space.clone()))?;
            let event = TubeEvent::new(center, *delta, TimePartition::uniform(*checkpoints)?)?;
            let beta = beta.unwrap_or_else(|| default_beta(space, metric));
            let ldp = tube_ldp_estimate(
                ctx.cache()?,
                metric,
                &event,
                &grid.values()?,
                *samples,
                seed,
                beta,
            )?;
            let p = &ldp.probe;
            let (table, series) = scale_scan_output(
                p,
                ldp.rate_bracket.limit_bracket(),
                &["energy_lo", "energy_hi"],
                |_| vec![ldp.energy_bracket.0, ldp.energy_bracket.1],
            );
            let mut flags = p.flags.clone();
            flags.extend(ldp.flags.iter().cloned());
            if ldp.method == TubeMethod::MonteCarlo {
                flags.push("monte carlo".to_string());
            }
            Ok(ProbeOutput {
                headline: p.limit,
                target: Some(p.target),
                flags,
                table,
                series: Some(series),
            })
        }
    }
}

/// `p_t(x,y)` dump; all ordered pairs when `pairs` is `None`.
pub fn kernel_table(
    cache: &SpectralCache,
    t: f64,
    pairs: Option<&[(Vertex, Vertex)]>,
) -> Result<Table> {
    let n = cache.len();
    let pairs: Vec<(Vertex, Vertex)> = match pairs {
        Some(p) => p.to_vec(),
        None => (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).collect(),
    };
    let values = pairs
        .par_iter()
        .map(|&(x, y)| cache.heat_kernel(t, x, y))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&["x_index", "y_index", "t", "p", "log_p"]);
    for (&(x, y), k) in pairs.iter().zip(&values) {
        table.push(vec![
            x.to_string(),
            y.to_string(),
            fmt_f64(t),
            fmt_f64(k.value),
            fmt_f64(k.log_value),
        ]);
    }
    Ok(table)
}

/// Summary record of one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub probe_id: String,
    pub kind: String,
    /// SHA-256 over the space tables, the probe with files inlined, and the
    /// probe seed.
    pub inputs_digest: String,
    /// `NaN` when the probe failed.
    pub headline: f64,
    pub target: Option<f64>,
    pub deviation: Option<f64>,
    pub flags: Vec<String>,
    pub wall_time: f64,
    pub error: Option<String>,
    pub series: Option<Series>,
}

impl ReportRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Thread count: explicit option, then [`THREADS_ENV`], then the config.
/// `None` means rayon's default (available parallelism).
pub fn resolve_threads(option: Option<usize>, config: Option<usize>) -> Result<Option<usize>> {
    if option.is_some() {
        return Ok(option);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::validation(format!("{THREADS_ENV}={v} is not a thread count"))),
        _ => Ok(config),
    }
}

/// Per-probe seed derived from the master seed and the probe id.
pub fn probe_seed(master: u64, id: &str) -> u64 {
    let h = Sha256::digest(id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&h[..8]);
    master ^ u64::from_le_bytes(b)
}

#[derive(Serialize)]
struct DigestInput<'a> {
    seed: u64,
    probe: &'a Probe,
    space: &'a crate::space::ExplicitSpace,
}

fn inputs_digest(space: &crate::space::ExplicitSpace, probe: &Probe, seed: u64) -> Result<String> {
    let text = toml::to_string(&DigestInput { seed, probe, space })?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn summary_table(rows: &[ReportRow]) -> Table {
    let mut t = Table::new(&[
        "probe_id",
        "kind",
        "inputs_digest",
        "headline",
        "target",
        "deviation",
        "flags",
        "error",
    ]);
    for r in rows {
        t.push(vec![
            r.probe_id.clone(),
            r.kind.clone(),
            r.inputs_digest.clone(),
            fmt_f64(r.headline),
            fmt_opt(r.target),
            fmt_opt(r.deviation),
            r.flags.join("; "),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

/// Run every probe in declared order and write the CSV outputs.
///
/// Errors are configuration problems (unreadable space, bad thread count,
/// unwritable output directory). A probe that fails is recorded in its row
/// and the run continues.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ReportRow>> {
    config.check_files()?;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| config.output.as_ref().map(|p| config.base_dir.join(p)))
        .ok_or_else(|| Error::validation("no output directory given"))?;
    let seed = opts.seed.unwrap_or(config.seed);
    let threads = resolve_threads(opts.threads, config.threads)?;
    let space = Arc::new(config.load_space()?);
    fs::create_dir_all(&out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    let explicit = space.to_explicit();
    let ctx = ProbeContext::new(Some(space), config.base_dir.clone());

    let mut rows = Vec::with_capacity(config.probes.len());
    for pc in &config.probes {
        let pseed = probe_seed(seed, &pc.id);
        let digest = pc
            .probe
            .inlined(&config.base_dir)
            .and_then(|p| inputs_digest(&explicit, &p, pseed))
            .unwrap_or_else(|e| format!("unavailable: {e}"));
        let start = Instant::now();
        let result = pool.install(|| run_probe(&ctx, &pc.probe, pseed));
        let wall_time = start.elapsed().as_secs_f64();
        let row = match result {
            Ok(out) => {
                out.table.write_csv(out_dir.join(format!("{}.csv", pc.id)))?;
                let mut flags = out.flags;
                if out.target.is_none() {
                    flags.push(NO_PAPER_TARGET.to_string());
                }
                flags.push(FINITE_GRAPH.to_string());
                ReportRow {
                    probe_id: pc.id.clone(),
                    kind: pc.probe.kind().to_string(),
                    inputs_digest: digest,
                    headline: out.headline,
                    target: out.target,
                    deviation: out.target.map(|t| relative_deviation(out.headline, t)),
                    flags,
                    wall_time,
                    error: None,
                    series: out.series,
                }
            }
            Err(e) => ReportRow {
                probe_id: pc.id.clone(),
                kind: pc.probe.kind().to_string(),
                inputs_digest: digest,
                headline: f64::NAN,
                target: None,
                deviation: None,
                flags: vec![NO_PAPER_TARGET.to_string(), FINITE_GRAPH.to_string()],
                wall_time,
                error: Some(e.to_string()),
                series: None,
            },
        };
        rows.push(row);
    }

    summary_table(&rows).write_csv(out_dir.join("summary.csv"))?;
    let mut timing = Table::new(&["probe_id", "wall_time_s"]);
    for r in &rows {
        timing.push(vec![r.probe_id.clone(), format!("{:.6}", r.wall_time)]);
    }
    timing.write_csv(out_dir.join("timing.csv"))?;
    Ok(rows)
}

/// Whitespace-separated plot columns of one probe, headed by a `#` line.
pub fn emit_plotdata(rows: &[ReportRow], probe_id: &str) -> Result<String> {
    let row = rows
        .iter()
        .find(|r| r.probe_id == probe_id)
        .ok_or_else(|| Error::validation(format!("no probe `{probe_id}` in the report")))?;
    let series = row.series.as_ref().ok_or_else(|| {
        Error::validation(format!(
            "probe `{probe_id}` ({}) has no series to plot",
            row.kind
        ))
    })?;
    let mut out = format!("# {}\n", series.columns.join(" "));
    for r in &series.rows {
        let cells: Vec<String> = r.iter().copied().map(fmt_f64).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    Ok(out)
}
