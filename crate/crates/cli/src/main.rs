use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use dirichlet_lab::energy::CurveSpec;
use dirichlet_lab::experiment::{
    emit_plotdata, kernel_table, parse_set, resolve_threads, run_experiment, run_probe,
    EnergyOp, ExperimentConfig, GridSpec, Probe, ProbeContext, ProbeOutput, RunOptions, Source,
    VertexRef,
};
use dirichlet_lab::fdd::{EventSpec, SetSpec};
use dirichlet_lab::space::parse_descriptor;
use dirichlet_lab::{validate_space, StateSpace};

/// Dirichlet forms on finite weighted graphs: heat kernels, intrinsic
/// metrics, functional inequalities and short-time large deviations.
///
/// Vertices are given as an index (`17`) or as a coordinate point whose
/// nearest vertex is used (`@0.25`, `@0.5,0.5`). Sets are `all`,
/// `v:1,2,3`, `lo:hi` or `x0,y0:x1,y1`.
#[derive(Parser)]
#[command(name = "dlab", version)]
struct Cli {
    /// Worker threads; falls back to DLAB_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or check space files.
    #[command(subcommand)]
    Space(SpaceCommand),
    /// Dump heat kernel values p_t(x,y).
    Kernel {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        t: f64,
        /// One pair instead of all ordered pairs.
        #[arg(long, num_args = 2, value_names = ["X", "Y"])]
        pair: Option<Vec<VertexRef>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certified brackets on the intrinsic metric.
    Metric {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, num_args = 2, value_names = ["X", "Y"], conflicts_with = "all", required_unless_present = "all")]
        pair: Option<Vec<VertexRef>>,
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Doubling, Poincaré, Harnack or volume-scaling sweeps.
    Inequalities {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, value_enum)]
        kind: InequalityArg,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.08,0.12,0.2")]
        radii: Vec<f64>,
        /// Centers are restricted to this set (default: all vertices).
        #[arg(long, value_parser = set_arg)]
        region: Option<SetSpec>,
        /// Harnack time factors in units of r^2.
        #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
        time_factors: Vec<f64>,
        /// Center for volscale (and the only Harnack center when given).
        #[arg(long)]
        center: Option<VertexRef>,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long)]
        exponent: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        tmin: f64,
        #[arg(long, default_value_t = 0.5)]
        tmax: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// t log p_t(x,y) or t log T_t 1_A(x) against -d^2/2.
    Varadhan {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, num_args = 2, value_names = ["X", "Y"], required_unless_present = "set_probe")]
        pair: Option<Vec<VertexRef>>,
        #[arg(long, num_args = 2, value_names = ["SET", "X"], conflicts_with = "pair")]
        set_probe: Option<Vec<String>>,
        #[arg(long, default_value_t = 2e-3)]
        tmin: f64,
        #[arg(long, default_value_t = 2e-2)]
        tmax: f64,
        #[arg(long, default_value_t = 12)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// s log P of a cylinder event against its chain rate.
    Fdd {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        event: PathBuf,
        #[arg(long, default_value_t = 2e-3)]
        smin: f64,
        #[arg(long, default_value_t = 2e-2)]
        smax: f64,
        #[arg(long, default_value_t = 12)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Curve energies.
    Energy {
        #[arg(long)]
        curve: PathBuf,
        /// Needed for graph-context curves.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, value_enum)]
        op: OpArg,
        /// Evaluation time for `derivative`.
        #[arg(long)]
        t: Option<f64>,
        /// Partition times for `discrete`.
        #[arg(long, value_delimiter = ',')]
        partition: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checkpoint tube around a curve: probability scan and brackets.
    Tube {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        checkpoints: usize,
        #[arg(long, default_value_t = 2e-3)]
        smin: f64,
        #[arg(long, default_value_t = 2e-2)]
        smax: f64,
        #[arg(long, default_value_t = 12)]
        points: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum SpaceCommand {
    /// Expand a space description into full tables.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the invariants of a space file.
    Validate { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum InequalityArg {
    Vd,
    Pi,
    Hi,
    Volscale,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Discrete,
    Sup,
    Derivative,
    Ac2,
    Gap,
}

impl From<OpArg> for EnergyOp {
    fn from(op: OpArg) -> Self {
        match op {
            OpArg::Discrete => EnergyOp::Discrete,
            OpArg::Sup => EnergyOp::Sup,
            OpArg::Derivative => EnergyOp::Derivative,
            OpArg::Ac2 => EnergyOp::Ac2,
            OpArg::Gap => EnergyOp::Gap,
        }
    }
}

fn set_arg(s: &str) -> Result<SetSpec, String> {
    parse_set(s).map_err(|e| e.to_string())
}

/// Exit status 1: bad input. Exit status 2: a computation failed.
enum Failure {
    Input(String),
    Probe(String),
}

fn input(e: impl Display) -> Failure {
    Failure::Input(e.to_string())
}

fn probe_err(e: impl Display) -> Failure {
    Failure::Probe(e.to_string())
}

fn load_space(path: &Path) -> Result<Arc<StateSpace>, Failure> {
    StateSpace::load(path)
        .map(Arc::new)
        .map_err(|e| input(format!("{}: {e}", path.display())))
}

fn grid(min: f64, max: f64, points: usize) -> GridSpec {
    GridSpec { min, max, points }
}

fn pair(v: Vec<VertexRef>) -> (VertexRef, VertexRef) {
    let mut it = v.into_iter();
    (it.next().unwrap(), it.next().unwrap())
}

fn report(out: &ProbeOutput, path: &Path) -> Result<(), Failure> {
    out.table.write_csv(path).map_err(input)?;
    let target = out.target.map_or("none".to_string(), |t| t.to_string());
    println!("headline {} target {target}", out.headline);
    for f in &out.flags {
        println!("flag: {f}");
    }
    Ok(())
}

fn single(space: Option<Arc<StateSpace>>, probe: Probe, seed: u64, out: &Path) -> Result<(), Failure> {
    let ctx = ProbeContext::new(space, ".");
    let result = run_probe(&ctx, &probe, seed).map_err(probe_err)?;
    report(&result, out)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if !matches!(cli.command, Command::Run { .. }) {
        if let Some(n) = resolve_threads(cli.threads, None).map_err(input)? {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(input)?;
        }
    }
    match cli.command {
        Command::Space(SpaceCommand::Build { config, out }) => {
            let text = fs::read_to_string(&config).map_err(input)?;
            let desc = parse_descriptor(&text).map_err(input)?;
            let space = StateSpace::from_descriptor(&desc).map_err(input)?;
            space.save(&out).map_err(input)?;
            println!("{} vertices written to {}", space.len(), out.display());
            Ok(())
        }
        Command::Space(SpaceCommand::Validate { file }) => {
            let space = match StateSpace::load(&file) {
                Ok(s) => s,
                Err(dirichlet_lab::Error::Io(e)) => {
                    return Err(input(format!("{}: {e}", file.display())))
                }
                Err(e) => return Err(probe_err(format!("invalid space: {e}"))),
            };
            let rep = validate_space(&space);
            println!("{rep}");
            if rep.passed() {
                Ok(())
            } else {
                Err(probe_err("validation failed"))
            }
        }
        Command::Kernel {
            space,
            t,
            pair: p,
            out,
        } => {
            let space = load_space(&space)?;
            let pairs = p
                .map(|v| {
                    let (x, y) = pair(v);
                    Ok::<_, Failure>(vec![(
                        x.resolve(&space).map_err(input)?,
                        y.resolve(&space).map_err(input)?,
                    )])
                })
                .transpose()?;
            let cache = dirichlet_lab::SpectralCache::new(space).map_err(probe_err)?;
            let table = kernel_table(&cache, t, pairs.as_deref()).map_err(probe_err)?;
            table.write_csv(&out).map_err(input)?;
            println!("{} rows written to {}", table.rows.len(), out.display());
            Ok(())
        }
        Command::Metric {
            space,
            pair: p,
            all,
            tol,
            out,
        } => {
            let space = load_space(&space)?;
            let pairs = p.map(|v| vec![pair(v)]).unwrap_or_default();
            single(Some(space), Probe::Metric { pairs, all, tol }, 0, &out)
        }
        Command::Inequalities {
            space,
            kind,
            radii,
            region,
            time_factors,
            center,
            epsilon,
            exponent,
            tmin,
            tmax,
            points,
            out,
        } => {
            let space = load_space(&space)?;
            let probe = match kind {
                InequalityArg::Vd => Probe::Vd { radii, region },
                InequalityArg::Pi => Probe::Pi { radii, region },
                InequalityArg::Hi => Probe::Hi {
                    radii,
                    time_factors,
                    region,
                    centers: center.map(|c| vec![c]),
                },
                InequalityArg::Volscale => Probe::VolScale {
                    center: center.ok_or_else(|| input("volscale needs --center"))?,
                    epsilon,
                    grid: grid(tmin, tmax, points),
                    exponent,
                },
            };
            single(Some(space), probe, 0, &out)
        }
        Command::Varadhan {
            space,
            pair: p,
            set_probe,
            tmin,
            tmax,
            points,
            out,
        } => {
            let space = load_space(&space)?;
            let grid = grid(tmin, tmax, points);
            let probe = match (p, set_probe) {
                (Some(v), _) => {
                    let (x, y) = pair(v);
                    Probe::VaradhanKernel { x, y, grid }
                }
                (None, Some(v)) => Probe::VaradhanIndicator {
                    set: parse_set(&v[0]).map_err(input)?,
                    x: v[1].parse().map_err(input)?,
                    grid,
                },
                (None, None) => return Err(input("give --pair or --set-probe")),
            };
            single(Some(space), probe, 0, &out)
        }
        Command::Fdd {
            space,
            event,
            smin,
            smax,
            points,
            out,
        } => {
            let space = load_space(&space)?;
            let spec = EventSpec::load(&event)
                .map_err(|e| input(format!("{}: {e}", event.display())))?;
            let probe = Probe::Fdd {
                event: Source::Inline(spec),
                grid: grid(smin, smax, points),
            };
            single(Some(space), probe, 0, &out)
        }
        Command::Energy {
            curve,
            space,
            op,
            t,
            partition,
            tol,
            out,
        } => {
            let space = space.as_deref().map(load_space).transpose()?;
            let spec = CurveSpec::load(&curve)
                .map_err(|e| input(format!("{}: {e}", curve.display())))?;
            let probe = Probe::Energy {
                curve: Source::Inline(spec),
                op: op.into(),
                partition,
                t,
                tol,
                max_level: dirichlet_lab::energy::DEFAULT_MAX_LEVEL,
                nodes: dirichlet_lab::energy::DEFAULT_QUADRATURE,
            };
            single(space, probe, 0, &out)
        }
        Command::Tube {
            space,
            curve,
            delta,
            checkpoints,
            smin,
            smax,
            points,
            samples,
            seed,
            beta,
            out,
        } => {
            let space = load_space(&space)?;
            let spec = CurveSpec::load(&curve)
                .map_err(|e| input(format!("{}: {e}", curve.display())))?;
            let probe = Probe::Tube {
                curve: Source::Inline(spec),
                delta,
                checkpoints,
                grid: grid(smin, smax, points),
                samples,
                beta,
            };
            single(Some(space), probe, seed, &out)
        }
        Command::Run { config, out, seed } => {
            let cfg = ExperimentConfig::load(&config).map_err(input)?;
            let opts = RunOptions {
                out_dir: out,
                seed,
                threads: cli.threads,
            };
            let rows = run_experiment(&cfg, &opts).map_err(input)?;
            let dir = opts
                .out_dir
                .clone()
                .or_else(|| cfg.output.as_ref().map(|p| cfg.base_dir.join(p)))
                .expect("run_experiment checked the output directory");
            let mut failed = 0;
            for r in &rows {
                if r.series.is_some() {
                    let plot = emit_plotdata(&rows, &r.probe_id).map_err(input)?;
                    fs::write(dir.join(format!("{}.dat", r.probe_id)), plot).map_err(input)?;
                }
                match &r.error {
                    Some(e) => {
                        failed += 1;
                        println!("{} {} error: {e}", r.probe_id, r.kind);
                    }
                    None => println!(
                        "{} {} headline {} target {} deviation {}",
                        r.probe_id,
                        r.kind,
                        r.headline,
                        r.target.map_or("none".to_string(), |t| t.to_string()),
                        r.deviation.map_or("-".to_string(), |d| d.to_string()),
                    ),
                }
            }
            if failed > 0 {
                Err(probe_err(format!("{failed} of {} probes failed", rows.len())))
            } else {
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Probe(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
