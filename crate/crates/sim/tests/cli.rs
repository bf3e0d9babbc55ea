use std::path::Path;
use std::process::{Command, Output};

use drkf_sim::output::{read_csv, CSV_HEADER};

fn drkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drkf"))
        .args(args)
        .env_remove("DRKF_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn quick_run(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--scenario",
        "example1",
        "--runs",
        "4",
        "--horizon",
        "12",
        "--out-dir",
    ];
    args.push(dir.to_str().unwrap());
    args.extend_from_slice(extra);
    drkf(&args)
}

#[test]
fn run_writes_parseable_deterministic_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = quick_run(a.path(), &["--svg"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&quick_run(b.path(), &["--svg"])), 0);

    let name = "example1_drkf.csv";
    let bytes = std::fs::read(a.path().join(name)).unwrap();
    assert_eq!(bytes, std::fs::read(b.path().join(name)).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let rows = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 13 * 4);
    assert_eq!((rows[0].k, rows[0].sensor), (0, 1));
    assert!(rows.iter().all(|r| r.mse >= 0.0 && r.trp > 0.0));

    for f in [
        "example1_drkf_summary.csv",
        "example1_drkf_mse.svg",
        "example1_drkf_trp.svg",
    ] {
        assert!(a.path().join(f).exists(), "{f}");
    }
}

#[test]
fn centralized_csv_uses_sensor_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&quick_run(dir.path(), &["--filter", "ckf"])), 0);
    let rows = read_csv(std::fs::File::open(dir.path().join("example1_ckf.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 13);
    assert!(rows.iter().all(|r| r.sensor == 0));
}

#[test]
fn seed_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&quick_run(a.path(), &["--seed", "1"])), 0);
    assert_eq!(code(&quick_run(b.path(), &["--seed", "2"])), 0);
    let read = |d: &Path| std::fs::read(d.join("example1_drkf.csv")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&drkf(&["run", "--scenario", "nope"])), 1);
    assert_eq!(code(&drkf(&["run", "--bogus-flag"])), 1);
    assert_eq!(code(&quick_run(dir.path(), &["--filter", "kalman"])), 1);
    assert_eq!(
        code(&quick_run(
            dir.path(),
            &["--L", "0", "--filter", "drkf-swf"]
        )),
        1
    );
    assert_eq!(
        code(&drkf(&["run", "--scenario", "example2", "--case", "2"])),
        1
    );

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "preset = \"example1\"\nrunz = 3\n").unwrap();
    let out = drkf(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("runz"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "").unwrap();
    assert_eq!(code(&quick_run(&file, &[])), 2);
}

#[test]
fn check_exit_codes() {
    let out = drkf(&["check", "--scenario", "example2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("vacuous = true"));

    // observable, but the growth of ‖A_k‖ late in the horizon breaks the decay condition
    let out = drkf(&["check", "--scenario", "example1"]);
    assert_eq!(code(&out), 3);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("[observability]\nnbar = 4\nwindows = 97")
            && text.contains("pass_decay = false")
    );

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("blind.toml");
    std::fs::write(
        &cfg,
        r#"
name = "blind"
horizon = 20
[model]
n = 2
a = "example1_A"
q = [[0.1, 0.0], [0.0, 0.1]]
mu = "example1_mu"
p0 = "identity"

[[sensors]]
c = [[0.0, 1.0]]
r = [[0.07]]
tau = 0.85
phi = 0.0008
p0i = [[100.0, 0.0], [0.0, 100.0]]

[graph]
weights = [[1.0]]
upsilon = "identity"
d = "identity"
"#,
    )
    .unwrap();
    assert_eq!(
        code(&drkf(&[
            "check",
            "--config",
            cfg.to_str().unwrap(),
            "--nbar",
            "0"
        ])),
        3
    );
}

#[test]
fn table2_and_scenarios() {
    let out = drkf(&["scenarios"]);
    assert_eq!(code(&out), 0);
    let listing = String::from_utf8(out.stdout).unwrap();
    assert!(listing.contains("example1") && listing.contains("example2"));

    let dir = tempfile::tempdir().unwrap();
    let out = drkf(&[
        "table2",
        "--runs",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let table = std::fs::read_to_string(dir.path().join("table2.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
}
