use std::fs;
use std::path::Path;

use chartlab::config::ExperimentConfig;
use chartlab::pipeline::{
    cmd_baseline, cmd_chart, cmd_evaluate, cmd_generate, cmd_sweep, dissimilarity_cache_path, OutputLock,
    DATASET_FILE, LOCK_FILE,
};
use chartlab::raytrace::TraceMode;
use chartlab::Error;

fn small(mode: TraceMode) -> ExperimentConfig {
    let text = r#"
seed = 3
samples = 100
supervision = [10.0, 50.0]

[scenario]
width = 260.0
height = 260.0

[traffic]
vehicles = 30
steps = 8

[charting]
iterations = 300
exaggeration_iters = 100
"#;
    ExperimentConfig {
        mode,
        ..ExperimentConfig::from_toml(text).unwrap()
    }
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn generate_chart_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(TraceMode::Dynamic);
    let m = cmd_generate(&cfg, dir.path()).unwrap();
    assert_eq!(m.records, 100);
    assert_eq!(m.train_records + m.validation_records, 100);
    assert!(m.validation_records > 0 && m.train_records > 0);
    assert!(m.train_vehicles.iter().all(|v| !m.validation_vehicles.contains(v)));
    assert!(dir.path().join(DATASET_FILE).exists());

    assert!(!cmd_chart(&cfg, dir.path()).unwrap(), "first chart computes the dissimilarities");
    assert!(dissimilarity_cache_path(&cfg, dir.path()).exists());
    let first = read(dir.path(), "chart-s10.csv");
    assert!(cmd_chart(&cfg, dir.path()).unwrap(), "second chart reuses the cache");
    assert_eq!(read(dir.path(), "chart-s10.csv"), first);

    let rows = cmd_evaluate(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.samples, 100);
        assert_eq!(r.metrics.localization.errors.len(), m.validation_records);
        assert!(r.metrics.continuity <= 1.0 && r.metrics.trustworthiness <= 1.0);
        assert!(r.metrics.kruskal_stress >= 0.0);
        assert!(r.metrics.localization.overall.mean.is_finite());
    }
    for name in ["metrics-s50.csv", "ecdf-s50.csv", "boxplot-s50.csv", "trace-s50.csv"] {
        let text = String::from_utf8(read(dir.path(), name)).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.ends_with("config_hash"), "{name}: {header}");
    }
    assert!(!dir.path().join(LOCK_FILE).exists());
}

#[test]
fn stages_refuse_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(TraceMode::Static);
    cmd_generate(&cfg, dir.path()).unwrap();

    let mut other = cfg.clone();
    other.noise.power_db += 3.0;
    assert!(matches!(cmd_chart(&other, dir.path()), Err(Error::Data(_))));

    cmd_chart(&cfg, dir.path()).unwrap();
    let mut recharted = cfg.clone();
    recharted.charting.perplexity = 12.0;
    assert!(matches!(cmd_evaluate(&recharted, dir.path()), Err(Error::Data(_))));
}

#[test]
fn locked_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(TraceMode::Static);
    let lock = OutputLock::acquire(dir.path()).unwrap();
    let err = cmd_generate(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert_eq!(err.exit_code(), 3);
    drop(lock);
    cmd_generate(&cfg, dir.path()).unwrap();
}

#[test]
fn missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cmd_chart(&small(TraceMode::Static), dir.path()).is_err());
}

#[test]
fn generation_is_deterministic_and_vehicles_only_remove_los() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let st = small(TraceMode::Static);
    let dy = small(TraceMode::Dynamic);
    let ms = cmd_generate(&st, a.path()).unwrap();
    cmd_generate(&st, b.path()).unwrap();
    assert_eq!(read(a.path(), DATASET_FILE), read(b.path(), DATASET_FILE));
    assert_eq!(read(a.path(), "samples.csv"), read(b.path(), "samples.csv"));

    let md = cmd_generate(&dy, c.path()).unwrap();
    assert_eq!(ms.train_vehicles, md.train_vehicles);
    assert!(md.los_fraction <= ms.los_fraction, "{} > {}", md.los_fraction, ms.los_fraction);
}

#[test]
fn sweep_with_baselines_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small(TraceMode::Dynamic);
    let r = cmd_sweep(&cfg, a.path()).unwrap();
    assert_eq!(r.rows.len(), 4);
    assert_eq!(r.baselines.len(), 2);
    assert!(r.row(TraceMode::Static, 10.0).is_some());
    for (_, sums) in &r.baselines {
        for s in sums {
            assert!(s.located <= s.queried);
        }
    }
    cmd_sweep(&cfg, b.path()).unwrap();
    for name in ["report.csv", "ecdf.csv", "boxplot.csv", "baseline_summary.csv", "static/baselines.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }

    // A standalone baseline run over the sweep's dataset gives the same summary.
    let sub = a.path().join("dynamic");
    let again = cmd_baseline(&cfg, &sub).unwrap();
    assert_eq!(again.len(), r.baselines[1].1.len());
    for (x, y) in again.iter().zip(&r.baselines[1].1) {
        assert_eq!((x.method, x.queried, x.located), (y.method, y.queried, y.located));
        assert_eq!(x.stats, y.stats);
    }
}
