//! Command-line front end: generate, chart, evaluate, baseline and sweep.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chartlab::config::ExperimentConfig;
use chartlab::pipeline;
use chartlab::raytrace::TraceMode;
use chartlab::Result;

#[derive(Parser)]
#[command(name = "chartlab", version, about = "Semi-supervised channel charting on synthetic vehicular channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the scene, simulate traffic and write the CSI dataset.
    Generate(Common),
    /// Fit one chart per supervision level on an existing dataset.
    Chart(Common),
    /// Score the charts and write metrics, ECDF and box-plot CSVs.
    Evaluate(Common),
    /// Run the RSSI fingerprinting and MUSIC baselines.
    Baseline(Common),
    /// Static and dynamic runs over every supervision level with a combined report.
    Sweep(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Static,
    Dynamic,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Comma-separated supervision percentages, e.g. 5,10,25.
    #[arg(long, value_delimiter = ',')]
    supervision: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.mode = match mode {
                Mode::Static => TraceMode::Static,
                Mode::Dynamic => TraceMode::Dynamic,
            };
        }
        if let Some(s) = &self.supervision {
            cfg.supervision = s.clone();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.resolve()?;
            let m = pipeline::cmd_generate(&cfg, &cfg.output_dir)?;
            println!(
                "wrote {} records to {} (LoS fraction {:.3}, {} train / {} validation, config {})",
                m.records,
                cfg.output_dir.display(),
                m.los_fraction,
                m.train_records,
                m.validation_records,
                m.config_hash
            );
        }
        Command::Chart(c) => {
            let cfg = c.resolve()?;
            let hit = pipeline::cmd_chart(&cfg, &cfg.output_dir)?;
            println!(
                "charted {} supervision levels (dissimilarity {})",
                cfg.supervision.len(),
                if hit { "from cache" } else { "computed" }
            );
        }
        Command::Evaluate(c) => {
            let cfg = c.resolve()?;
            let rows = pipeline::cmd_evaluate(&cfg, &cfg.output_dir)?;
            print_rows(&rows);
        }
        Command::Baseline(c) => {
            let cfg = c.resolve()?;
            for s in pipeline::cmd_baseline(&cfg, &cfg.output_dir)? {
                let mean = s.stats.as_ref().map_or(f64::NAN, |x| x.mean);
                println!("{:<12} located {:>5}/{:<5} mean error {mean:8.2} m", s.method, s.located, s.queried);
            }
        }
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let res = pipeline::cmd_sweep(&cfg, &cfg.output_dir)?;
            print_rows(&res.rows);
            println!("report written to {}", cfg.output_dir.join("report.csv").display());
        }
    }
    Ok(())
}

fn print_rows(rows: &[pipeline::ResultRow]) {
    println!("{:<8} {:>6} {:>7} {:>7} {:>7} {:>10}", "mode", "sup%", "CT", "TW", "KS", "error[m]");
    for r in rows {
        let m = &r.metrics;
        println!(
            "{:<8} {:>6} {:>7.3} {:>7.3} {:>7.3} {:>10.2}",
            r.mode, r.supervision, m.continuity, m.trustworthiness, m.kruskal_stress, m.localization.overall.mean
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
