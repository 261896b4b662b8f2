use std::path::PathBuf;
use std::process::{Command, Output};

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bridge-rdd"))
        .args(args)
        .env_remove("BRIDGE_RDD_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn fit_prints_all_estimators() {
    let main = data("main.csv");
    let aux = data("aux.csv");
    let out = run(&["fit", "--main", &main, "--aux", &aux, "--threshold", "0", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    for kind in ["h", "f", "dr"] {
        for target in ["tau0", "tau1", "ate"] {
            assert!(header.contains(&format!("{target}_{kind}").as_str()), "{}", lines[0]);
        }
    }
    let values: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), header.len());
    assert!(values.iter().all(|v| v.is_finite()));
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let main = data("main.csv");
    let aux = data("aux.csv");
    let args = ["fit", "--main", &main, "--aux", &aux, "--threshold", "0", "--seed", "11"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bootstrap_writes_to_file_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let main = data("main.csv");
    let aux = data("aux.csv");
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "2"].into_iter().enumerate() {
        let path = dir.path().join(format!("boot{i}.csv"));
        let path_str = path.display().to_string();
        let out = run(&[
            "bootstrap", "--main", &main, "--aux", &aux, "--threshold", "0", "-B", "20", "--seed", "5", "--jobs", jobs,
            "--out", &path_str,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read_to_string(path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0].lines().count(), 1 + 9);
    for line in outputs[0].lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert!(f[1] <= f[2], "{line}");
    }
}

#[test]
fn missing_column_exits_with_usage_code() {
    let main = data("main.csv");
    let aux = data("aux_bad_header.csv");
    let out = run(&["fit", "--main", &main, "--aux", &aux, "--threshold", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MissingColumn"));
}

#[test]
fn unreadable_file_exits_with_io_code() {
    let aux = data("aux.csv");
    let out = run(&["fit", "--main", "/nonexistent/main.csv", "--aux", &aux, "--threshold", "0"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn diagnose_reports_binary_levels() {
    let aux = data("aux.csv");
    let out = run(&["diagnose", "--aux", &aux, "--threshold", "0"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("bin,lower,upper,below,above"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let args = |seed: &'static str| ["simulate", "--setting", "1", "--sizes", "50", "--reps", "4", "--seed", seed];
    let a = run(&args("1"));
    let b = run(&args("1"));
    let c = run(&args("2"));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(stdout(&a).lines().count(), 1 + 6);
}

#[test]
fn seed_can_come_from_the_environment() {
    let base = ["simulate", "--setting", "2", "--sizes", "50", "--reps", "2"];
    let flag = run(&[&base[..], &["--seed", "9"]].concat());
    let env = Command::new(env!("CARGO_BIN_EXE_bridge-rdd"))
        .args(base)
        .env("BRIDGE_RDD_SEED", "9")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(flag.stdout, env.stdout);
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fit.cfg");
    std::fs::write(&cfg, "epochs = 0\n").unwrap();
    let cfg = cfg.display().to_string();
    let main = data("main.csv");
    let aux = data("aux.csv");
    let base = ["fit", "--main", &main, "--aux", &aux, "--threshold", "0", "--seed", "3"];
    let trained = run(&base);
    let untrained = run(&[&base[..], &["--config", &cfg]].concat());
    assert!(untrained.status.success(), "{}", String::from_utf8_lossy(&untrained.stderr));
    assert_ne!(trained.stdout, untrained.stdout);

    std::fs::write(dir.path().join("bad.cfg"), "no_such_key = 1\n").unwrap();
    let bad = dir.path().join("bad.cfg").display().to_string();
    let out = run(&[&base[..], &["--config", &bad]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn misspec_long_output_has_one_row_per_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let long = dir.path().join("long.csv");
    let long_str = long.display().to_string();
    let out = run(&[
        "misspec", "--setting", "1", "--n", "60", "--reps", "3", "--which", "h", "--seed", "4", "--long-out", &long_str,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(long).unwrap();
    assert!(text.lines().count() > 3);
}
