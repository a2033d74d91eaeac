use std::path::Path;
use std::process::{Command, Output};

use uwloc::config::{ReportFile, Scenario};

fn uwloc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwloc"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn crlb_preset_has_both_cases() {
    let dir = tempfile::tempdir().unwrap();
    let o = uwloc(
        &["crlb", "--preset", "fig2", "--out", "fig2.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("fig2.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_var,crlb_u_db,crlb_udot_db,crlb_c_db,case"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 18);
    assert!(rows.iter().any(|r| r[4] == "known_c" && r[3].is_empty()));
    assert!(rows.iter().any(|r| r[4] == "unknown_c" && !r[3].is_empty()));
    assert!(!text.contains('\r'));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let o = uwloc(
            &[
                "simulate", "--preset", "fig3", "--seed", "42", "--trials", "20", "--out", name,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with(
        "sweep_value,mse_u_db,mse_udot_db,mse_c_db,crlb_u_db,crlb_udot_db,crlb_c_db,failed_trials"
    ));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn simulate_writes_only_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = uwloc(
        &[
            "simulate", "--preset", "fig5", "--trials", "2", "--out", "x.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, vec!["x.csv"]);
}

#[test]
fn noiseless_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = uwloc(
        &[
            "synth",
            "--noiseless",
            "--speed",
            "1480",
            "--out",
            "meas.toml",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = uwloc(
        &["estimate", "--in", "meas.toml", "--out", "report.toml"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = ReportFile::from_toml_str(
        &std::fs::read_to_string(dir.path().join("report.toml")).unwrap(),
    )
    .unwrap();
    let truth = Scenario::baseline();
    for k in 0..3 {
        assert!((report.position[k] - truth.source.position[k]).abs() < 1e-6);
        assert!((report.velocity[k] - truth.source.velocity[k]).abs() < 1e-6);
    }
    assert!((report.speed - 1480.0).abs() < 1e-6);
    assert_eq!(report.covariance.len(), 7);
}

#[test]
fn noisy_estimate_with_each_mode() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        uwloc(&["synth", "--seed", "9", "--out", "m.toml"], dir.path())
            .status
            .success()
    );
    for mode in ["full_covariance", "structured_identity", "plain_identity"] {
        let o = uwloc(&["estimate", "--in", "m.toml", "--mode", mode], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let r = ReportFile::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
        assert_eq!(r.weighting_mode.as_str(), mode);
        assert!((r.position[1] - 800.0).abs() < 50.0);
    }
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = uwloc(&["validate"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let table = String::from_utf8(ok.stdout).unwrap();
    assert!(table.contains("max_rel_gap"));
    assert!(table.contains("g4 fdoa/sensor velocity"));
    let tight = uwloc(&["validate", "--tol", "0.001"], dir.path());
    assert_eq!(tight.status.code(), Some(3));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = uwloc(&["simulate", "--preset", "fig9"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = uwloc(&["estimate", "--in", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = uwloc(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(
        dir.path().join("bad.toml"),
        "[source]\nposition = [0,0,0]\nvelocity = [0,0,0]\nspeed = 1500\nwobble = 1\n",
    )
    .unwrap();
    let o = uwloc(&["--scenario", "bad.toml", "validate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("wobble"), "{}", stderr(&o));
}

#[test]
fn small_array_rejected_for_estimation() {
    let dir = tempfile::tempdir().unwrap();
    for m in [4, 5] {
        let mut sc = Scenario::baseline();
        sc.sensors.truncate(m);
        sc.noise.b = None;
        let name = format!("s{m}.toml");
        std::fs::write(dir.path().join(&name), sc.to_toml_string().unwrap()).unwrap();
        let o = uwloc(
            &[
                "--scenario",
                &name,
                "simulate",
                "--preset",
                "fig3",
                "--trials",
                "1",
            ],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("at least 6"), "{}", stderr(&o));
    }
}

#[test]
fn numerical_failure_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        uwloc(&["synth", "--noiseless", "--out", "m.toml"], dir.path())
            .status
            .success()
    );
    // collapse every measurement so stage one loses rank
    let text = std::fs::read_to_string(dir.path().join("m.toml")).unwrap();
    let mut file = uwloc::config::MeasurementFile::from_toml_str(&text).unwrap();
    file.tdoa.iter_mut().for_each(|t| *t = 0.0);
    file.fdoa.iter_mut().for_each(|t| *t = 0.0);
    for s in file.sensors.nominal.iter_mut() {
        s.velocity = [0.0; 3];
    }
    file.save(&dir.path().join("m.toml")).unwrap();
    let o = uwloc(
        &["estimate", "--in", "m.toml", "--mode", "plain_identity"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("stage"), "{}", stderr(&o));
}

#[test]
fn default_scenario_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = uwloc(&["scenario", "--out", "s.toml"], dir.path());
    assert!(o.status.success());
    let back = Scenario::load(&dir.path().join("s.toml")).unwrap();
    assert_eq!(back, Scenario::baseline());
    assert_eq!(back.sensors[6].velocity, [1.2, -1.5, 1.5]);
}
