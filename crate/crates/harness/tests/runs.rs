use std::path::Path;
use std::process::Command as Process;

use accel_attn::sympformer::{self, SympFormerConfig, SympFormerWeights};
use accel_attn_harness::config::{Command, ExperimentConfig};
use accel_attn_harness::report::{parse_csv, series_to_csv, write_csv, Status};
use accel_attn_harness::run::{run, HarnessError};

fn config(cmd: Command, dir: &Path, extra: &[(&str, &str)]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.command = cmd;
    cfg.set("out_dir", dir.to_str().unwrap(), None).unwrap();
    cfg.set("steps", "60", None).unwrap();
    cfg.set("record_every", "5", None).unwrap();
    for (k, v) in extra {
        cfg.set(k, v, None).unwrap();
    }
    cfg
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn zero_steps_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config(Command::Simulate, dir.path(), &[("steps", "0")])).unwrap();
    assert_eq!(out.report.status, Status::Ok);
    let rows = parse_csv(&read(&dir.path().join("simulate.csv"))).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].oracle_calls, 0);
    assert_eq!(rows[0].momentum_norm, 0.0);
}

#[test]
fn csv_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config(Command::Simulate, dir.path(), &[("system", "linear")])).unwrap();
    let series = &out.report.series[0];
    assert_eq!(series.rows.len(), 13);
    let path = dir.path().join("copy.csv");
    write_csv(series, &path).unwrap();
    assert_eq!(parse_csv(&read(&path)).unwrap(), series.rows);
    assert_eq!(read(&path), read(&dir.path().join("simulate.csv")));
}

#[test]
fn baseline_rows_leave_hamiltonian_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config(Command::Simulate, dir.path(), &[("system", "baseline")])).unwrap();
    let text = series_to_csv(&out.report.series[0]);
    let row = text.lines().nth(1).unwrap();
    assert!(row.split(',').nth(1).unwrap().is_empty(), "{row}");
    assert!(out.report.series[0].rows.iter().all(|r| r.hamiltonian.is_none()));
}

#[test]
fn charts_are_well_formed_svg() {
    let dir = tempfile::tempdir().unwrap();
    run(&config(Command::Simulate, dir.path(), &[])).unwrap();
    run(&config(Command::CompareIntegrators, dir.path(), &[("log_scale", "true")])).unwrap();
    run(&config(Command::EnergyDecay, dir.path(), &[])).unwrap();
    for name in ["simulate.svg", "compare_integrators.svg", "energy_decay.svg"] {
        let text = read(&dir.path().join(name));
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        assert!(lines >= 1, "{name} has no curves");
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    for cmd in [
        Command::Simulate,
        Command::EnergyDecay,
        Command::CompareIntegrators,
        Command::VerifyElliptic,
        Command::SympformerForward,
    ] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let fa = run(&config(cmd, a.path(), &[("seed", "11")])).unwrap().files;
        let fb = run(&config(cmd, b.path(), &[("seed", "11")])).unwrap().files;
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            if x.file_name().unwrap() == "config.txt" {
                continue; // names the output directory
            }
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
        }
    }
}

#[test]
fn energy_decay_compares_at_matched_oracle_calls() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config(Command::EnergyDecay, dir.path(), &[])).unwrap();
    let [acc, base] = &out.report.series[..] else { panic!("two series expected") };
    assert_eq!(acc.rows.len(), base.rows.len());
    for (a, b) in acc.rows.iter().zip(&base.rows) {
        assert_eq!(a.oracle_calls, b.oracle_calls);
        assert_eq!(a.t, b.t);
    }
    assert_eq!(acc.rows.last().unwrap().oracle_calls, 60);
}

#[test]
fn rk4_pays_four_calls_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config(Command::CompareIntegrators, dir.path(), &[])).unwrap();
    for s in &out.report.series {
        let calls = s.rows.last().unwrap().oracle_calls;
        assert_eq!(calls, if s.label == "rk4" { 240 } else { 60 }, "{}", s.label);
    }
}

#[test]
fn verify_elliptic_passes_on_default_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config(Command::VerifyElliptic, dir.path(), &[("steps", "500")])).unwrap();
    assert_eq!(out.report.status, Status::Ok, "{:?}", out.report.notes);
    assert!(read(&dir.path().join("verify_elliptic.txt")).contains("max |X_i - G X_i(0)|"));
}

#[test]
fn runaway_dynamics_are_reported_not_raised() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        Command::Simulate,
        dir.path(),
        &[("damping", "zero"), ("h", "0.5"), ("steps", "2000"), ("n", "64")],
    );
    let out = run(&cfg).unwrap();
    assert!(matches!(out.report.status, Status::Failed(_)), "{:?}", out.report.status);
    assert!(dir.path().join("simulate.csv").exists());
}

#[test]
fn sympformer_forward_reads_weights_and_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = SympFormerConfig::new(1, 2, 4, 5, 7).unwrap();
    sc.causal = false;
    let weights = SympFormerWeights::random(&sc, 3).unwrap();
    let wpath = dir.path().join("model.weights");
    let mut buf = Vec::new();
    sympformer::write_weights(&mut buf, &sc, &weights).unwrap();
    std::fs::write(&wpath, buf).unwrap();
    let tpath = dir.path().join("tokens.txt");
    std::fs::write(&tpath, "0 1 2 3 4\n6 5\n").unwrap();

    let cfg = config(
        Command::SympformerForward,
        dir.path(),
        &[("weights_file", wpath.to_str().unwrap()), ("tokens_file", tpath.to_str().unwrap())],
    );
    let out = run(&cfg).unwrap();
    assert_eq!(out.report.status, Status::Ok);
    let csv = read(&dir.path().join("logits.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "batch,position,v0,v1,v2,v3,v4,v5,v6");
    assert_eq!(lines.count(), 7);

    let expected = sympformer::forward(&[vec![0, 1, 2, 3, 4]], &weights, &sc).unwrap();
    let row: Vec<f64> = csv.lines().nth(3).unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    let want: Vec<f64> = expected[0].row(2).iter().copied().collect();
    assert_eq!(row, want);

    std::fs::write(&tpath, "0 9\n").unwrap();
    assert!(matches!(run(&cfg), Err(HarnessError::Core(_))));
}

#[test]
fn missing_weights_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Command::SympformerForward, dir.path(), &[("weights_file", "/nonexistent/w")]);
    match run(&cfg) {
        Err(HarnessError::Io { path, .. }) => assert_eq!(path, Path::new("/nonexistent/w")),
        other => panic!("{other:?}"),
    }
}

fn cli() -> Process {
    Process::new(env!("CARGO_BIN_EXE_accel-attn"))
}

#[test]
fn cli_applies_config_overrides_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(&cfg_path, "command = simulate\nsteps = 7\nrecord_every = 1 # every step\n").unwrap();
    let out_dir = dir.path().join("o");
    let status = cli()
        .args(["--config", cfg_path.to_str().unwrap(), "system=linear", "--out", out_dir.to_str().unwrap()])
        .args(["--quiet", "--seed", "5"])
        .status()
        .unwrap();
    assert!(status.success());
    let written = read(&out_dir.join("config.txt"));
    for line in ["steps = 7", "system = linear", "seed = 5"] {
        assert!(written.contains(line), "{line} missing from\n{written}");
    }
    assert_eq!(parse_csv(&read(&out_dir.join("simulate.csv"))).unwrap().len(), 8);
}

#[test]
fn cli_rejects_bad_input_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli().args(["simulate", "steps=-1", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("steps"));

    let out = cli().args(["warp-drive"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "n = 3\nn = 4\n").unwrap();
    let out = cli().args(["--config", cfg_path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
