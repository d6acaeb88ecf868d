use std::fs;
use std::process::Command;

fn chartlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chartlab"))
}

const SMALL: &str = r#"
samples = 60
supervision = [25.0]

[scenario]
width = 260.0
height = 260.0

[traffic]
vehicles = 20
steps = 6

[charting]
iterations = 200
exaggeration_iters = 50

[baselines]
enabled = false
"#;

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(chartlab().output().unwrap().status.code(), Some(2));
    assert_eq!(chartlab().args(["chart", "--mode", "sideways"]).output().unwrap().status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "samples = 60\n[charting]\nperplexitty = 5.0\n").unwrap();
    let out = chartlab().arg("generate").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("perplexitty"));

    let out = chartlab().args(["generate", "--supervision", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_run_in_order_and_missing_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let run = |stage: &str| {
        chartlab()
            .arg(stage)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "4", "--mode", "static"])
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    };
    assert_eq!(run("chart").status.code(), Some(3));
    for stage in ["generate", "chart", "evaluate"] {
        let o = run(stage);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let report = fs::read_to_string(out.join("metrics-s25.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
}
