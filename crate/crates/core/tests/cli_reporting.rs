use std::fs;
use std::path::Path;

use dirichlet_lab::experiment::{
    emit_plotdata, run_experiment, ExperimentConfig, RunOptions, FINITE_GRAPH, NO_PAPER_TARGET,
};

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn config(dir: &Path, probes: &str) -> ExperimentConfig {
    write(dir, "space.toml", "kind = \"lattice_1d\"\ncells = 64\n");
    let text = format!("space = \"space.toml\"\nseed = 42\n{probes}");
    write(dir, "exp.toml", &text);
    ExperimentConfig::load(dir.join("exp.toml")).unwrap()
}

fn run(cfg: &ExperimentConfig, out: &Path) -> Vec<dirichlet_lab::experiment::ReportRow> {
    run_experiment(
        cfg,
        &RunOptions {
            out_dir: Some(out.to_path_buf()),
            ..Default::default()
        },
    )
    .unwrap()
}

const ALL_KINDS: &str = r#"
[[probe]]
id = "vd"
kind = "vd"
radii = [0.05, 0.1, 0.2]

[[probe]]
id = "pi"
kind = "pi"
radii = [0.1]
region = { kind = "interval", lo = 0.3, hi = 0.7 }

[[probe]]
id = "hi"
kind = "hi"
radii = [0.1]
centers = [[0.5]]

[[probe]]
id = "vol"
kind = "volscale"
center = [0.5]
epsilon = 0.01
grid = { min = 0.01, max = 0.5, points = 6 }

[[probe]]
id = "metric"
kind = "metric"
pairs = [[16, 48]]

[[probe]]
id = "kern"
kind = "varadhan_kernel"
x = [0.25]
y = [0.75]
grid = { min = 0.005, max = 0.05, points = 8 }

[[probe]]
id = "ind"
kind = "varadhan_indicator"
set = { kind = "interval", lo = 0.0, hi = 0.1 }
x = [0.5]
grid = { min = 0.005, max = 0.05, points = 8 }

[[probe]]
id = "gauss"
kind = "gaussian_threshold"
a = { kind = "interval", lo = 0.0, hi = 0.2 }
b = { kind = "interval", lo = 0.6, hi = 1.0 }

[[probe]]
id = "fdd"
kind = "fdd"
event = "event.toml"
grid = { min = 0.005, max = 0.05, points = 8 }

[[probe]]
id = "energy"
kind = "energy"
op = "gap"
curve = { context = { kind = "euclidean" }, shape = { kind = "line", start = [0.0], end = [1.0] } }

[[probe]]
id = "tube"
kind = "tube"
curve = "curve.toml"
delta = 0.1
checkpoints = 4
samples = 1000
grid = { min = 0.005, max = 0.05, points = 6 }
"#;

fn fixture_files(dir: &Path) {
    write(
        dir,
        "event.toml",
        "times = [0.0, 0.5, 1.0]\nsets = [{ kind = \"vertices\", vertices = [16] }, \
         { kind = \"interval\", lo = 0.45, hi = 0.55 }, { kind = \"vertices\", vertices = [48] }]\n",
    );
    write(
        dir,
        "curve.toml",
        "context = { kind = \"graph\" }\nshape = { kind = \"line\", start = [0.25], end = [0.75] }\n",
    );
}

#[test]
fn empty_probe_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("out");
    let rows = run(&cfg, &out);
    assert!(rows.is_empty());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn single_doubling_probe() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "space.toml", "kind = \"lattice_1d\"\ncells = 256\n");
    write(
        dir.path(),
        "exp.toml",
        "space = \"space.toml\"\noutput = \"out\"\n[[probe]]\nid = \"n\"\nkind = \"vd\"\n\
         radii = [0.05, 0.08, 0.12, 0.2]\n",
    );
    let cfg = ExperimentConfig::load(dir.path().join("exp.toml")).unwrap();
    let rows = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((0.9..=1.2).contains(&rows[0].headline), "{}", rows[0].headline);
    assert!(rows[0].flags.iter().any(|f| f == NO_PAPER_TARGET));
    assert!(dir.path().join("out/n.csv").is_file());
}

#[test]
fn every_kind_runs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    fixture_files(dir.path());
    let cfg = config(dir.path(), ALL_KINDS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let rows = run(&cfg, &a);
    let again = run(&cfg, &b);
    assert_eq!(rows.len(), cfg.probes.len());
    for r in &rows {
        assert!(r.error.is_none(), "{}: {:?}", r.probe_id, r.error);
        assert!(r.target.is_some() || r.flags.iter().any(|f| f == NO_PAPER_TARGET));
        assert!(r.flags.iter().any(|f| f == FINITE_GRAPH));
        assert_eq!(r.inputs_digest.len(), 64);
    }
    for (x, y) in rows.iter().zip(&again) {
        assert_eq!(x.inputs_digest, y.inputs_digest);
    }
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), rows.len() + 1);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "timing.csv" {
            continue;
        }
        let x = fs::read(a.join(&name)).unwrap();
        let y = fs::read(b.join(&name)).unwrap();
        assert_eq!(x, y, "{name:?} differs");
    }

    let kern = rows.iter().find(|r| r.probe_id == "kern").unwrap();
    assert!((kern.target.unwrap() + 0.125).abs() < 1e-12);
    let plot = emit_plotdata(&rows, "kern").unwrap();
    assert!(plot.starts_with("# t t_log_p target\n"));
    assert_eq!(plot.lines().count(), 9);
    let plot = emit_plotdata(&rows, "fdd").unwrap();
    assert!(plot.starts_with("# s s_log_P bracket_lo bracket_hi\n"));
    let err = emit_plotdata(&rows, "metric").unwrap_err().to_string();
    assert!(err.contains("metric"));
    let header = fs::read_to_string(a.join("metric.csv")).unwrap();
    assert!(header.starts_with("x,y,lower,upper,gap,witness_max_gamma"));
}

#[test]
fn probe_errors_are_recorded_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[[probe]]\nid = \"bad\"\nkind = \"varadhan_kernel\"\nx = 999\ny = 0\n\
         grid = { min = 0.01, max = 0.1, points = 4 }\n\
         [[probe]]\nid = \"ok\"\nkind = \"metric\"\npairs = [[0, 1]]\n",
    );
    let rows = run(&cfg, &dir.path().join("out"));
    assert!(rows[0].failed() && rows[0].error.as_ref().unwrap().contains("999"));
    assert!(!rows[1].failed());
}

#[test]
fn missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "exp.toml", "space = \"nowhere.toml\"\n");
    let err = ExperimentConfig::load(dir.path().join("exp.toml"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("nowhere.toml"), "{err}");
    write(
        dir.path(),
        "exp2.toml",
        "[space]\nkind = \"two_state\"\nm1 = 1.0\nm2 = 1.0\nw = 1.0\n\
         [[probe]]\nid = \"f\"\nkind = \"fdd\"\nevent = \"gone.toml\"\n\
         grid = { min = 0.01, max = 0.1, points = 4 }\n",
    );
    assert!(ExperimentConfig::load(dir.path().join("exp2.toml")).is_err());
}
