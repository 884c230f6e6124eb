use std::path::Path;
use std::process::{Command, Output};

fn tlme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlme")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn csv_column(text: &str, col: usize) -> Vec<f64> {
    text.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lists_every_preset_with_provenance() {
    let out = tlme(&["--list-presets"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fig1-topleft", "fig1-topright", "fig1-bottomleft", "fig1-bottomright", "fig2"] {
        let line = text.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap();
        assert!(line.contains("Fig."), "{line}");
    }
    assert!(text.lines().all(|l| l.split_whitespace().count() > 1));
}

#[test]
fn kernel_at_zero_lag() {
    let out = tlme(&["kernel", "--lorentzian", "1,1,0,0", "--tau", "0"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("tau,re_f,im_f"));
    assert_eq!(csv_column(&text, 1), vec![0.5]);
    assert_eq!(csv_column(&text, 2), vec![0.0]);
}

#[test]
fn markov_moment_decays_at_half_rate() {
    let out = tlme(&["evolve", "--engine", "exact-moment", "--markov", "1", "--a0", "1", "--omega", "0", "--t-end", "2", "--step", "0.5"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for (t, a) in csv_column(&text, 0).iter().zip(csv_column(&text, 1)) {
        assert!((a - (-t / 2.0).exp()).abs() < 1e-12, "t = {t}: {a}");
    }
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = tlme(&["evolve", "--preset", "nope", "--engine", "boson-tlme"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8(out.stderr).unwrap().contains("nope"));
}

#[test]
fn degenerate_sweep_is_a_config_error() {
    let out = tlme(&["sweep", "--preset", "fig1-topleft", "--start", "0", "--stop", "0", "--points", "5"]);
    assert_eq!(code(&out), 2);
    let out = tlme(&["sweep", "--preset", "fig1-topleft", "--start", "0", "--stop", "1", "--points", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_command_and_engine_are_config_errors() {
    assert_eq!(code(&tlme(&[])), 2);
    assert_eq!(code(&tlme(&["evolve", "--preset", "driven"])), 2);
}

#[test]
fn driven_qubit_through_a_pole_is_a_solver_error() {
    let out = tlme(&["evolve", "--preset", "strong-coupling", "--engine", "qubit-tlme"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8(out.stderr).unwrap().contains("pole"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &["evolve", "--preset", "fig2", "--engine", "boson-tlme", "--t-end", "20"],
        &["evolve", "--preset", "driven", "--engine", "pseudomode", "--t-end", "5"],
        &["sweep", "--preset", "tlme-sweep", "--points", "7"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let csv = dir.path().join(format!("{k}-{rep}.csv"));
            let json = dir.path().join(format!("{k}-{rep}.json"));
            let mut full = args.to_vec();
            full.extend(["--output", path(&csv), "--summary", path(&json)]);
            let out = tlme(&full);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
            outputs.push((std::fs::read(&csv).unwrap(), std::fs::read(&json).unwrap()));
        }
        assert!(!outputs[0].0.is_empty());
        assert_eq!(outputs[0], outputs[1], "run {k} differs");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "lorentzian = \"1,1,0,0\"\npoints = 3\ntau-max = 2.0\n").unwrap();
    let out = tlme(&["kernel", "--config", path(&config)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_column(&String::from_utf8(out.stdout).unwrap(), 0), vec![0.0, 1.0, 2.0]);
    let out = tlme(&["kernel", "--config", path(&config), "--points", "5"]);
    assert_eq!(code(&out), 0);
    assert_eq!(csv_column(&String::from_utf8(out.stdout).unwrap(), 0), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "lorentzain = \"1,1,0,0\"\n").unwrap();
    assert_eq!(code(&tlme(&["kernel", "--config", path(&config), "--tau", "0"])), 2);
}

#[test]
fn summary_reports_final_state() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("s.json");
    let out = tlme(&["evolve", "--preset", "driven", "--engine", "boson-tlme", "--t-end", "4", "--summary", path(&json)]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(v["engine"], "boson-tlme");
    assert_eq!(v["preset"], "driven");
}
