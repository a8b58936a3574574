use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlab"))
        .current_dir(dir)
        .env_remove("DLAB_THREADS")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("space.toml"),
        "kind = \"lattice_1d\"\ncells = 64\n",
    )
    .unwrap();
    dir
}

#[test]
fn run_writes_outputs_and_plot_files() {
    let dir = setup();
    fs::write(
        dir.path().join("exp.toml"),
        r#"
space = "space.toml"
seed = 7

[[probe]]
id = "kern"
kind = "varadhan_kernel"
x = [0.25]
y = [0.75]
grid = { min = 0.005, max = 0.05, points = 6 }

[[probe]]
id = "n"
kind = "vd"
radii = [0.05, 0.1]
"#,
    )
    .unwrap();
    let o = dlab(dir.path(), &["run", "--config", "exp.toml", "--out", "out", "--threads", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for f in ["kern.csv", "n.csv", "summary.csv", "timing.csv", "kern.dat"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("n.dat").exists());
    let plot = fs::read_to_string(out.join("kern.dat")).unwrap();
    assert!(plot.starts_with("# t t_log_p target"));
}

#[test]
fn config_errors_exit_one() {
    let dir = setup();
    fs::write(
        dir.path().join("bad.toml"),
        "space = \"space.toml\"\n[[probe]]\nid = \"a\"\nkind = \"wobble\"\n",
    )
    .unwrap();
    let o = dlab(dir.path(), &["run", "--config", "bad.toml", "--out", "out"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("wobble"));

    fs::write(dir.path().join("nospace.toml"), "space = \"missing.toml\"\n").unwrap();
    let o = dlab(dir.path(), &["run", "--config", "nospace.toml", "--out", "out"]);
    assert_eq!(code(&o), 1);

    fs::write(dir.path().join("empty.toml"), "space = \"space.toml\"\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dlab"))
        .current_dir(dir.path())
        .env("DLAB_THREADS", "lots")
        .args(["run", "--config", "empty.toml", "--out", "out"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn probe_errors_exit_two() {
    let dir = setup();
    fs::write(
        dir.path().join("exp.toml"),
        "space = \"space.toml\"\n[[probe]]\nid = \"far\"\nkind = \"metric\"\npairs = [[0, 500]]\n",
    )
    .unwrap();
    let o = dlab(dir.path(), &["run", "--config", "exp.toml", "--out", "out"]);
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("out/summary.csv").is_file());
}

#[test]
fn space_build_and_validate() {
    let dir = setup();
    let o = dlab(dir.path(), &["space", "build", "--config", "space.toml", "--out", "full.toml"]);
    assert_eq!(code(&o), 0);
    let o = dlab(dir.path(), &["space", "validate", "full.toml"]);
    assert_eq!(code(&o), 0);
    fs::write(
        dir.path().join("broken.toml"),
        "kind = \"explicit\"\nmeasure = [1.0, 1.0, 1.0]\nedges = [[0, 1, 1.0]]\n",
    )
    .unwrap();
    let o = dlab(dir.path(), &["space", "validate", "broken.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn single_probe_commands() {
    let dir = setup();
    let o = dlab(
        dir.path(),
        &["metric", "--space", "space.toml", "--pair", "@0.25", "@0.75", "--out", "m.csv"],
    );
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.starts_with("x,y,lower,upper,gap,witness_max_gamma\n16,48,"));

    let o = dlab(
        dir.path(),
        &["kernel", "--space", "space.toml", "--t", "0.1", "--out", "k.csv"],
    );
    assert_eq!(code(&o), 0);
    let rows = fs::read_to_string(dir.path().join("k.csv")).unwrap();
    assert_eq!(rows.lines().count(), 65 * 65 + 1);

    fs::write(
        dir.path().join("line.toml"),
        "context = { kind = \"euclidean\" }\nshape = { kind = \"line\", start = [0.0, 0.0], end = [1.0, 1.0] }\n",
    )
    .unwrap();
    let o = dlab(
        dir.path(),
        &["energy", "--curve", "line.toml", "--op", "sup", "--out", "e.csv"],
    );
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout).to_string();
    let h: f64 = stdout.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((h - 1.0).abs() < 1e-12);

    let o = dlab(
        dir.path(),
        &["varadhan", "--space", "space.toml", "--set-probe", "0:0.1", "@0.5", "--out", "v.csv"],
    );
    assert_eq!(code(&o), 0);
    let o = dlab(
        dir.path(),
        &["inequalities", "--space", "space.toml", "--kind", "volscale", "--out", "x.csv"],
    );
    assert_eq!(code(&o), 1, "volscale without a center is an input error");
}
