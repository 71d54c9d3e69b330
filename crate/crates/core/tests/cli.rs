//! The command-line tool end to end: outputs, determinism, exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biphoton::experiment::FitRecord;
use biphoton::io::{read_csv, read_json, read_stack, write_stack};

const SMALL: &str = "pump.birth_zone_list = [10]\nacquisition.frames = 3000\nacquisition.nx = 64\nacquisition.ny = 8\n";

fn biphoton(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biphoton")).args(args).output().expect("run biphoton")
}

fn ok(args: &[&str]) -> Output {
    let out = biphoton(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analytic_outputs_lie_on_the_circle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    ok(&["analytic", "--out", s(&out)]);
    let t = read_csv(&out.join("visibilities.csv")).unwrap();
    let sums = t.column("v_m2_plus_v_12_2").unwrap();
    assert!(sums.len() >= 1000);
    assert!(sums.iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(t.meta_value("config_sha256").is_some());
    assert!(out.join("manifest.json").exists());
    assert!(fs::read_dir(&out).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("g2_theta")));
}

#[test]
fn simulate_then_fit_matches_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim)]);
    let fit = dir.path().join("fit");
    ok(&["fit", "--config", s(&cfg), "--profile", s(&sim.join("marginal_N010.000.csv")), "--out", s(&fit)]);
    let rec: FitRecord = read_json(&fit.join("fit_marginal_N010.000.json")).unwrap();
    assert!(rec.fit.converged);

    let sweep_cfg = write_config(dir.path(), "pump.birth_zone_list = [1, 5, 10, 34]\n");
    let sweep = dir.path().join("sweep");
    ok(&["sweep", "--config", s(&sweep_cfg), "--out", s(&sweep)]);
    let t = read_csv(&sweep.join("sweep.csv")).unwrap();
    let (ns, vm) = (t.column("n").unwrap(), t.column("v_m").unwrap());
    let i = ns.iter().position(|n| (n - 10.0).abs() < 1e-9).unwrap();
    assert_eq!(vm[i], rec.fit.params.visibility);
}

#[test]
fn frames_are_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["frames", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["frames", "--config", s(&cfg), "--out", s(&b)]);
    ok(&["frames", "--config", s(&cfg), "--out", s(&c), "--seed", "99"]);
    let name = "frames_N010.000.bpfs";
    let (fa, fb, fc) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), fs::read(c.join(name)).unwrap());
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn estimate_ignores_constant_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let frames = dir.path().join("frames");
    ok(&["frames", "--config", s(&cfg), "--out", s(&frames)]);
    let stack_path = frames.join("frames_N010.000.bpfs");
    let mut stack = read_stack(&stack_path).unwrap();
    stack.counts.iter_mut().for_each(|c| *c += 7);
    let shifted_path = dir.path().join("shifted.bpfs");
    write_stack(&shifted_path, &stack).unwrap();

    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    ok(&["estimate", "--config", s(&cfg), "--stack", s(&stack_path), "--out", s(&e1)]);
    ok(&["estimate", "--config", s(&cfg), "--stack", s(&shifted_path), "--out", s(&e2)]);
    for f in ["jpd2d.csv", "jpd2d.bpf2", "marginal.csv", "correlation.csv", "anticorrelation.csv"] {
        assert_eq!(fs::read(e1.join(f)).unwrap(), fs::read(e2.join(f)).unwrap(), "{f}");
    }
    // The mean intensity is the one profile that sees the offset.
    assert_ne!(fs::read(e1.join("intensity.csv")).unwrap(), fs::read(e2.join("intensity.csv")).unwrap());

    let fit = dir.path().join("fit");
    ok(&["fit", "--config", s(&cfg), "--profile", s(&e1.join("correlation.csv")), "--out", s(&fit)]);
    let rec: FitRecord = read_json(&fit.join("fit_correlation.json")).unwrap();
    assert!(rec.fit.converged);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");

    let bad_key = write_config(dir.path(), "slits.bogus = 1\n");
    assert_eq!(biphoton(&["simulate", "--config", s(&bad_key), "--out", s(&out)]).status.code(), Some(2));

    let bad_value = write_config(dir.path(), "acquisition.efficiency = 1.5\n");
    let r = biphoton(&["frames", "--config", s(&bad_value), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("acquisition.efficiency"));

    let short_sweep = write_config(dir.path(), "pump.birth_zone_list = [5, 10]\n");
    assert_eq!(biphoton(&["sweep", "--config", s(&short_sweep), "--out", s(&out)]).status.code(), Some(2));

    let missing = dir.path().join("nope.toml");
    assert_eq!(biphoton(&["simulate", "--config", s(&missing), "--out", s(&out)]).status.code(), Some(4));

    let junk = dir.path().join("junk.bpfs");
    fs::write(&junk, b"not a frame stack").unwrap();
    assert_eq!(biphoton(&["estimate", "--stack", s(&junk), "--out", s(&out)]).status.code(), Some(4));
}
