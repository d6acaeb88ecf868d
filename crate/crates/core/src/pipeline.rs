//! The experiment pipeline behind the command-line tool.
//!
//! Stages run in order (generate, chart, evaluate, baseline) and talk to each
//! other only through files in an output directory. Each file carries the hash
//! of the config section that produced it, and a stage refuses inputs whose
//! hash differs from what the current config would produce.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.toml  manifest.toml  dataset.bin  samples.csv
//! cache/dissimilarity-<hash>.bin
//! chart-s<S>.csv  trace-s<S>.csv
//! metrics-s<S>.csv  ecdf-s<S>.csv  boxplot-s<S>.csv
//! baselines.csv  baseline_summary.csv
//! ```
//!
//! A sweep writes one such directory per propagation mode plus combined
//! `report.csv`, `ecdf.csv` and `boxplot.csv` at the top.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{music_locate, rssi_of, FingerprintDb, MusicGrid, MusicOutcome};
use crate::channel::{
    csi_covariance, estimate_channel, synthesize_taps, taps_to_frequency, ArrayConfig, ChannelTaps, CsiSample,
    NoiseModel,
};
use crate::charting::{calibrate_conditionals, fit_with_p, symmetrize, Chart, LabeledSplit, SimilarityMatrix};
use crate::config::ExperimentConfig;
use crate::dataset::{
    label_count, labeled_subset, per_point_split, read_dataset, trajectory_split, write_dataset, write_samples_csv,
    DatasetManifest,
};
use crate::error::{Error, Result};
use crate::evaluate::{default_k, metrics_report, ErrorStats, MetricsReport};
use crate::features::{dissimilarity_matrix, DissimilarityMatrix};
use crate::geometry::Direction;
use crate::raytrace::{Blocker, PathTuple, TraceConfig, TraceMode, Tracer};
use crate::scene::{generate_city, simulate_traffic_with, Scene, VehicleClass, ANTENNA_ABOVE_ROOF};
use crate::seeds;

pub const LOCK_FILE: &str = ".chartlab.lock";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DATASET_FILE: &str = "dataset.bin";
pub const SAMPLES_FILE: &str = "samples.csv";

pub fn mode_name(mode: TraceMode) -> &'static str {
    match mode {
        TraceMode::Static => "static",
        TraceMode::Dynamic => "dynamic",
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is in use by another run (delete {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes a whole file through a closure of `io::Write` calls.
fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    body(&mut out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

/// Supervision level as it appears in file names, e.g. `5` or `12.5`.
pub fn level_tag(supervision: f64) -> String {
    format!("{supervision}")
}

// ---------------------------------------------------------------------------
// generate

/// A generated dataset with its manifest.
#[derive(Debug, Clone)]
pub struct Generated {
    pub samples: Vec<CsiSample>,
    pub manifest: DatasetManifest,
}

/// Noise-free channel of one transmitter, time-aligned so that the earliest
/// path sits `pulse_support` taps into the window.
struct AlignedChannel {
    taps: ChannelTaps,
    /// Delay removed from every path, s.
    shift: f64,
    los: bool,
}

#[allow(clippy::too_many_arguments)]
fn aligned_channel(
    tracer: &Tracer,
    cfg: &ExperimentConfig,
    tx: &Point3<f64>,
    velocity: &Vector3<f64>,
    heading: f64,
    blockers: &[Blocker],
    t: f64,
    wssus_seed: Option<u64>,
    scene: &Scene,
) -> Result<AlignedChannel> {
    let mut paths: Vec<PathTuple> = tracer.trace(tx, velocity, &scene.bs.position, blockers)?;
    let los = paths.iter().any(|p| p.bounce_count == 0);
    let shift = paths.first().map_or(0.0, |p| {
        p.delay - cfg.channel.pulse_support as f64 * cfg.channel.sample_period()
    });
    for p in &mut paths {
        p.delay -= shift;
    }
    let tx_array = ArrayConfig::vehicle().with_orientation(heading);
    let taps = synthesize_taps(&paths, &tx_array, &scene.bs.array, t, &cfg.channel, wssus_seed)?;
    Ok(AlignedChannel { taps, shift, los })
}

fn noise_model(cfg: &ExperimentConfig, bs_array: &ArrayConfig) -> NoiseModel {
    let power = 10f64.powf(cfg.noise.power_db / 10.0);
    match cfg.noise.interferer_db {
        Some(db) => NoiseModel::directional(
            bs_array,
            power,
            10f64.powf(db / 10.0),
            Direction::new(cfg.noise.interferer_azimuth, cfg.noise.interferer_elevation),
        ),
        None => NoiseModel::white(bs_array.len(), power),
    }
}

fn trace_config(cfg: &ExperimentConfig) -> TraceConfig {
    TraceConfig {
        mode: cfg.mode,
        ..cfg.trace.clone()
    }
}

/// Draws `N` pool entries uniformly among those the base station covers, i.e.
/// those with at least one propagation path through the static city. Returns
/// the picks sorted by pool index and the number of entries examined.
fn draw_covered(
    cfg: &ExperimentConfig,
    scene: &Scene,
    snapshots: &[crate::scene::Snapshot],
    pool: &[(usize, usize)],
) -> Result<(Vec<usize>, usize)> {
    let static_cfg = TraceConfig {
        mode: TraceMode::Static,
        vehicle_reflections: false,
        ..cfg.trace.clone()
    };
    let tracer = Tracer::new(scene, &static_cfg)?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, "sampling")));
    let mut picked = Vec::with_capacity(cfg.samples);
    let mut examined = 0;
    for chunk in order.chunks(cfg.samples.max(256)) {
        let covered = chunk
            .par_iter()
            .map(|&k| {
                let veh = &snapshots[pool[k].0].vehicles[pool[k].1];
                let tx = crate::scene::ve_antenna_position(veh);
                tracer
                    .trace(&tx, &Vector3::zeros(), &scene.bs.position, &[])
                    .map(|p| !p.is_empty())
            })
            .collect::<Result<Vec<bool>>>()?;
        for (&k, c) in chunk.iter().zip(covered) {
            if picked.len() == cfg.samples {
                break;
            }
            examined += 1;
            if c {
                picked.push(k);
            }
        }
        if picked.len() == cfg.samples {
            break;
        }
    }
    if picked.len() < cfg.samples {
        return Err(Error::Config(format!(
            "only {} of {} vehicle snapshots have a path to the base station; {} samples requested",
            picked.len(),
            pool.len(),
            cfg.samples
        )));
    }
    picked.sort_unstable();
    Ok((picked, examined))
}

/// Builds the scene, simulates traffic and turns `N` uniformly drawn covered
/// vehicle snapshots into estimated CSI covariances.
pub fn generate(cfg: &ExperimentConfig) -> Result<Generated> {
    cfg.validate()?;
    let scene = generate_city(cfg.seed, &cfg.scenario)?;
    let t = &cfg.traffic;
    let snapshots = simulate_traffic_with(&scene, &t.params(), cfg.seed, t.steps, t.dt, t.vehicles)?;
    let pool: Vec<(usize, usize)> = snapshots
        .iter()
        .enumerate()
        .flat_map(|(s, snap)| (0..snap.vehicles.len()).map(move |v| (s, v)))
        .collect();
    if cfg.samples > pool.len() {
        return Err(Error::Config(format!(
            "{} samples requested from a pool of {}",
            cfg.samples,
            pool.len()
        )));
    }
    let blockers: Vec<Vec<Blocker>> = snapshots
        .iter()
        .map(|s| s.vehicles.iter().map(Blocker::from_vehicle).collect())
        .collect();
    let (picked, examined) = draw_covered(cfg, &scene, &snapshots, &pool)?;
    let tracer = Tracer::new(&scene, &trace_config(cfg))?;
    let noise = noise_model(cfg, &scene.bs.array);
    let pilot = cfg.pilot_config();
    info!(
        "generating {} {} samples from {} vehicle snapshots",
        cfg.samples,
        mode_name(cfg.mode),
        pool.len()
    );

    let mut samples = picked
        .par_iter()
        .map(|&k| -> Result<CsiSample> {
            let (s, v) = pool[k];
            let veh = &snapshots[s].vehicles[v];
            let others: Vec<Blocker> = blockers[s]
                .iter()
                .filter(|b| b.vehicle_id != veh.vehicle_id)
                .cloned()
                .collect();
            let tx = crate::scene::ve_antenna_position(veh);
            let time = veh.time_index as f64 * t.dt;
            let wssus = cfg.wssus.then(|| seeds::derive_indexed(cfg.seed, "wssus", k as u64));
            let ch = aligned_channel(&tracer, cfg, &tx, &veh.velocity(), veh.heading, &others, time, wssus, &scene)?;
            let noise_seed = seeds::derive_indexed(cfg.seed, "noise", k as u64);
            let est = estimate_channel(&ch.taps, &cfg.channel, &pilot, &noise, noise_seed)?;
            let covariance = csi_covariance(&taps_to_frequency(&est, &cfg.channel)?)?;
            let delay = crate::baselines::estimate_delay(&est, &cfg.channel, cfg.baselines.music.delay_step);
            Ok(CsiSample {
                covariance,
                position: veh.position,
                height: tx.z,
                vehicle_id: veh.vehicle_id,
                time_index: veh.time_index,
                los: ch.los,
                labeled: false,
                delay_estimate: delay + ch.shift,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let split_seed = seeds::derive(cfg.seed, "split");
    let train = if cfg.per_point_split {
        per_point_split(samples.len(), cfg.validation_fraction, split_seed)
    } else {
        let ids: Vec<u64> = samples.iter().map(|s| s.vehicle_id).collect();
        trajectory_split(&ids, cfg.validation_fraction, split_seed)
    };
    for (s, tr) in samples.iter_mut().zip(&train) {
        s.labeled = *tr;
    }
    let vehicles_where = |want: bool| -> Vec<u64> {
        let mut v: Vec<u64> = samples.iter().filter(|s| s.labeled == want).map(|s| s.vehicle_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let n_train = train.iter().filter(|t| **t).count();
    let manifest = DatasetManifest {
        config_hash: cfg.dataset_hash(),
        mode: mode_name(cfg.mode).into(),
        seed: cfg.seed,
        dataset_file: DATASET_FILE.into(),
        samples_file: SAMPLES_FILE.into(),
        records: samples.len(),
        antennas: scene.bs.array.len(),
        los_fraction: samples.iter().filter(|s| s.los).count() as f64 / samples.len() as f64,
        train_records: n_train,
        validation_records: samples.len() - n_train,
        train_vehicles: vehicles_where(true),
        validation_vehicles: vehicles_where(false),
        pool_size: pool.len(),
        coverage: picked.len() as f64 / examined as f64,
    };
    info!(
        "dataset {}: LoS fraction {:.3}, {} train / {} validation",
        &manifest.config_hash[..12],
        manifest.los_fraction,
        manifest.train_records,
        manifest.validation_records
    );
    Ok(Generated { samples, manifest })
}

/// Writes a generated dataset, its text listing, manifest and effective config.
pub fn write_generated(cfg: &ExperimentConfig, dir: &Path, g: &Generated) -> Result<()> {
    let path = dir.join(DATASET_FILE);
    let out = create(&path)?;
    write_dataset(out, &g.samples, &g.manifest.config_hash)?;
    let hash = &g.manifest.config_hash;
    write_file(&dir.join(SAMPLES_FILE), |o| write_samples_csv(o, &g.samples, hash))?;
    write_file(&dir.join(MANIFEST_FILE), |o| o.write_all(g.manifest.to_toml().as_bytes()))?;
    write_file(&dir.join("config.toml"), |o| o.write_all(cfg.to_toml().as_bytes()))
}

fn run_generate(cfg: &ExperimentConfig, dir: &Path) -> Result<DatasetManifest> {
    let g = generate(cfg)?;
    write_generated(cfg, dir, &g)?;
    Ok(g.manifest)
}

/// `generate`: writes the dataset of `cfg` into `dir`.
pub fn cmd_generate(cfg: &ExperimentConfig, dir: &Path) -> Result<DatasetManifest> {
    let _lock = OutputLock::acquire(dir)?;
    run_generate(cfg, dir)
}

/// Loads the dataset in `dir`, refusing it unless it was produced by `cfg`.
pub fn load_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<CsiSample>, DatasetManifest)> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    let want = cfg.dataset_hash();
    if manifest.config_hash != want {
        return Err(Error::Data(format!(
            "dataset in {} was generated with config {} but the current config hashes to {}; \
             rerun generate or use the matching config",
            dir.display(),
            manifest.config_hash,
            want
        )));
    }
    let path = dir.join(&manifest.dataset_file);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let (samples, hash) = read_dataset(BufReader::new(file))?;
    manifest.check(&samples, &hash)?;
    Ok((samples, manifest))
}

// ---------------------------------------------------------------------------
// chart

pub fn dissimilarity_cache_path(cfg: &ExperimentConfig, dir: &Path) -> PathBuf {
    dir.join("cache").join(format!("dissimilarity-{}.bin", &cfg.dissimilarity_hash()[..16]))
}

/// The dissimilarity matrix of `samples`, read from the cache when present.
/// Returns the matrix and whether it came from the cache.
pub fn cached_dissimilarity(
    cfg: &ExperimentConfig,
    dir: &Path,
    samples: &[CsiSample],
) -> Result<(DissimilarityMatrix, bool)> {
    let path = dissimilarity_cache_path(cfg, dir);
    let hash = cfg.dissimilarity_hash();
    if path.exists() {
        let mut input = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
        let mut stored = [0u8; 64];
        std::io::Read::read_exact(&mut input, &mut stored).map_err(|e| Error::io(&path, e))?;
        if stored != hash.as_bytes() {
            return Err(Error::Data(format!(
                "cache {} holds a matrix for config {} rather than {hash}; delete it to recompute",
                path.display(),
                String::from_utf8_lossy(&stored)
            )));
        }
        let d = DissimilarityMatrix::read_from(input)?;
        if d.len() != samples.len() {
            return Err(Error::Data(format!(
                "cached matrix is {}×{} but the dataset has {} samples",
                d.len(),
                d.len(),
                samples.len()
            )));
        }
        info!("dissimilarity cache hit {}", path.display());
        return Ok((d, true));
    }
    info!("computing {}×{} dissimilarity matrix", samples.len(), samples.len());
    let d = dissimilarity_matrix(samples, cfg.features.eig_floor)?;
    write_file(&path, |o| {
        o.write_all(hash.as_bytes())?;
        d.write_to(o)
    })?;
    Ok((d, false))
}

/// Symmetric input similarities of the chart, shared by all supervision levels.
pub fn similarities(cfg: &ExperimentConfig, d: &DissimilarityMatrix) -> Result<SimilarityMatrix> {
    cfg.charting.validate(d.len())?;
    Ok(symmetrize(&calibrate_conditionals(d, cfg.charting.perplexity)?))
}

/// Labeled indices for one supervision level, nested across levels.
pub fn labels_for(cfg: &ExperimentConfig, samples: &[CsiSample], supervision: f64) -> Result<Vec<usize>> {
    let train: Vec<bool> = samples.iter().map(|s| s.labeled).collect();
    labeled_subset(
        &train,
        label_count(samples.len(), supervision),
        seeds::derive(cfg.seed, "labels"),
    )
}

/// Fits the chart of one supervision level.
pub fn chart_level(
    cfg: &ExperimentConfig,
    samples: &[CsiSample],
    p: &SimilarityMatrix,
    supervision: f64,
) -> Result<Chart> {
    let labeled = labels_for(cfg, samples, supervision)?;
    let positions = labeled.iter().map(|&k| [samples[k].position.x, samples[k].position.y]).collect();
    let split = LabeledSplit::new(samples.len(), labeled, positions)?;
    info!("fitting chart at {supervision}% supervision ({} labels)", split.labeled.len());
    Ok(fit_with_p(p, &split, &cfg.charting, seeds::derive(cfg.seed, "chart")))
}

pub const CHART_CSV_HEADER: &str = "index,anchored,z_x,z_y,x,y,config_hash";

/// Chart coordinates and position estimates; floats use shortest round-trip
/// formatting so the evaluation reads back exactly what was fitted.
pub fn write_chart_csv<W: Write>(mut out: W, chart: &Chart, hash: &str) -> std::io::Result<()> {
    writeln!(out, "{CHART_CSV_HEADER}")?;
    for k in 0..chart.len() {
        let p = chart.localize(k);
        writeln!(
            out,
            "{k},{},{:?},{:?},{:?},{:?},{hash}",
            u8::from(chart.is_anchored(k)),
            chart.z[k][0],
            chart.z[k][1],
            p[0],
            p[1]
        )?;
    }
    Ok(())
}

/// A chart as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartFile {
    pub anchored: Vec<bool>,
    pub z: Vec<[f64; 2]>,
    pub estimates: Vec<[f64; 2]>,
    pub config_hash: String,
}

pub fn read_chart_csv(path: &Path) -> Result<ChartFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::Data(format!("{}:{line}: {what}", path.display()));
    let mut out = ChartFile {
        anchored: Vec::new(),
        z: Vec::new(),
        estimates: Vec::new(),
        config_hash: String::new(),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != CHART_CSV_HEADER {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 || f[0].parse::<usize>().ok() != Some(i - 1) {
            return Err(bad(i + 1, "malformed row"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        out.anchored.push(f[1] == "1");
        out.z.push([num(f[2])?, num(f[3])?]);
        out.estimates.push([num(f[4])?, num(f[5])?]);
        if i == 1 {
            out.config_hash = f[6].to_string();
        } else if f[6] != out.config_hash {
            return Err(bad(i + 1, "rows carry different config hashes"));
        }
    }
    Ok(out)
}

fn write_chart_outputs(cfg: &ExperimentConfig, dir: &Path, supervision: f64, chart: &Chart) -> Result<()> {
    let tag = level_tag(supervision);
    let hash = cfg.chart_hash(supervision);
    write_file(&dir.join(format!("chart-s{tag}.csv")), |o| write_chart_csv(o, chart, &hash))?;
    write_file(&dir.join(format!("trace-s{tag}.csv")), |o| {
        writeln!(o, "iteration,kl,config_hash")?;
        for (it, kl) in &chart.kl_trace {
            writeln!(o, "{it},{kl:.12e},{hash}")?;
        }
        Ok(())
    })
}

fn run_chart(cfg: &ExperimentConfig, dir: &Path) -> Result<bool> {
    let (samples, _) = load_dataset(cfg, dir)?;
    let (d, hit) = cached_dissimilarity(cfg, dir, &samples)?;
    let p = similarities(cfg, &d)?;
    for &s in &cfg.supervision {
        let chart = chart_level(cfg, &samples, &p, s)?;
        write_chart_outputs(cfg, dir, s, &chart)?;
    }
    Ok(hit)
}

/// `chart`: fits one chart per supervision level of `cfg` on the dataset in
/// `dir`. Returns whether the dissimilarity matrix came from the cache.
pub fn cmd_chart(cfg: &ExperimentConfig, dir: &Path) -> Result<bool> {
    let _lock = OutputLock::acquire(dir)?;
    run_chart(cfg, dir)
}

// ---------------------------------------------------------------------------
// evaluate

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub mode: String,
    pub supervision: f64,
    pub samples: usize,
    pub metrics: MetricsReport,
    pub config_hash: String,
}

pub const METRICS_CSV_HEADER: &str = "mode,supervision,samples,validation,k,continuity,trustworthiness,kruskal_stress,\
mean_error,median_error,p90_error,los_count,los_mean_error,nlos_count,nlos_mean_error,config_hash";

fn opt_stat(s: &Option<ErrorStats>) -> (usize, String) {
    match s {
        Some(s) => (s.count, format!("{:.6}", s.mean)),
        None => (0, "nan".into()),
    }
}

fn write_metrics_row<W: Write>(out: &mut W, r: &ResultRow) -> std::io::Result<()> {
    let m = &r.metrics;
    let l = &m.localization;
    let (lc, lm) = opt_stat(&l.los);
    let (nc, nm) = opt_stat(&l.nlos);
    writeln!(
        out,
        "{},{},{},{},{},{:.9},{:.9},{:.9},{:.6},{:.6},{:.6},{lc},{lm},{nc},{nm},{}",
        r.mode,
        level_tag(r.supervision),
        r.samples,
        l.overall.count,
        m.k,
        m.continuity,
        m.trustworthiness,
        m.kruskal_stress,
        l.overall.mean,
        l.overall.median,
        l.overall.p90,
        r.config_hash
    )
}

pub const ECDF_CSV_HEADER: &str = "mode,supervision,error_m,fraction,config_hash";
pub const BOXPLOT_CSV_HEADER: &str = "mode,supervision,condition,count,min,q1,median,q3,max,mean,config_hash";

fn write_ecdf_rows<W: Write>(out: &mut W, r: &ResultRow) -> std::io::Result<()> {
    for (e, f) in &r.metrics.localization.ecdf {
        writeln!(out, "{},{},{e:.6},{f:.6},{}", r.mode, level_tag(r.supervision), r.config_hash)?;
    }
    Ok(())
}

fn write_boxplot_rows<W: Write>(out: &mut W, r: &ResultRow) -> std::io::Result<()> {
    let l = &r.metrics.localization;
    for (name, s) in [("all", Some(&l.overall)), ("los", l.los.as_ref()), ("nlos", l.nlos.as_ref())] {
        if let Some(s) = s {
            let q = s.quartiles;
            writeln!(
                out,
                "{},{},{name},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                r.mode,
                level_tag(r.supervision),
                s.count,
                q[0],
                q[1],
                q[2],
                q[3],
                q[4],
                s.mean,
                r.config_hash
            )?;
        }
    }
    Ok(())
}

/// Scores the chart of one level on the validation samples.
pub fn evaluate_level(cfg: &ExperimentConfig, dir: &Path, samples: &[CsiSample], supervision: f64) -> Result<ResultRow> {
    let path = dir.join(format!("chart-s{}.csv", level_tag(supervision)));
    let chart = read_chart_csv(&path)?;
    let want = cfg.chart_hash(supervision);
    if chart.config_hash != want {
        return Err(Error::Data(format!(
            "{} was fitted with config {} but the current config hashes to {want}; rerun chart",
            path.display(),
            chart.config_hash
        )));
    }
    if chart.z.len() != samples.len() {
        return Err(Error::Data(format!(
            "{} has {} points but the dataset has {}",
            path.display(),
            chart.z.len(),
            samples.len()
        )));
    }
    let val: Vec<usize> = (0..samples.len()).filter(|&k| !samples[k].labeled).collect();
    let truth: Vec<[f64; 2]> = val.iter().map(|&k| [samples[k].position.x, samples[k].position.y]).collect();
    let z: Vec<[f64; 2]> = val.iter().map(|&k| chart.z[k]).collect();
    let est: Vec<[f64; 2]> = val.iter().map(|&k| chart.estimates[k]).collect();
    let los: Vec<bool> = val.iter().map(|&k| samples[k].los).collect();
    let k = if cfg.evaluate.k == 0 { default_k(val.len()) } else { cfg.evaluate.k };
    Ok(ResultRow {
        mode: mode_name(cfg.mode).into(),
        supervision,
        samples: samples.len(),
        metrics: metrics_report(&truth, &z, &est, &los, k)?,
        config_hash: cfg.evaluation_hash(supervision),
    })
}

fn write_row_outputs(dir: &Path, r: &ResultRow) -> Result<()> {
    let tag = level_tag(r.supervision);
    write_file(&dir.join(format!("metrics-s{tag}.csv")), |o| {
        writeln!(o, "{METRICS_CSV_HEADER}")?;
        write_metrics_row(o, r)
    })?;
    write_file(&dir.join(format!("ecdf-s{tag}.csv")), |o| {
        writeln!(o, "{ECDF_CSV_HEADER}")?;
        write_ecdf_rows(o, r)
    })?;
    write_file(&dir.join(format!("boxplot-s{tag}.csv")), |o| {
        writeln!(o, "{BOXPLOT_CSV_HEADER}")?;
        write_boxplot_rows(o, r)
    })
}

fn run_evaluate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    let (samples, _) = load_dataset(cfg, dir)?;
    let mut rows = Vec::new();
    for &s in &cfg.supervision {
        let r = evaluate_level(cfg, dir, &samples, s)?;
        info!(
            "{} {}%: mean error {:.2} m, CT {:.3}, TW {:.3}, KS {:.3}",
            r.mode,
            s,
            r.metrics.localization.overall.mean,
            r.metrics.continuity,
            r.metrics.trustworthiness,
            r.metrics.kruskal_stress
        );
        write_row_outputs(dir, &r)?;
        rows.push(r);
    }
    Ok(rows)
}

/// `evaluate`: scores every supervision level charted in `dir`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    let _lock = OutputLock::acquire(dir)?;
    run_evaluate(cfg, dir)
}

// ---------------------------------------------------------------------------
// baseline

/// Summary of one baseline on the validation samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSummary {
    pub method: &'static str,
    pub queried: usize,
    pub located: usize,
    pub stats: Option<ErrorStats>,
    pub los: Option<ErrorStats>,
    pub nlos: Option<ErrorStats>,
}

/// Fingerprint database from a noise-free static survey of the road
/// centerlines, with the expected noise contribution of channel estimation
/// added so survey and query RSSI share the same bias.
pub fn survey_fingerprints(cfg: &ExperimentConfig, scene: &Scene) -> Result<FingerprintDb> {
    let b = &cfg.baselines;
    let static_cfg = ExperimentConfig {
        mode: TraceMode::Static,
        ..cfg.clone()
    };
    let tracer = Tracer::new(scene, &trace_config(&static_cfg))?;
    let height = VehicleClass::Sedan.rooftop_height() + ANTENNA_ABOVE_ROOF;
    let step = b.cell_size / 2.0;
    let mut points = Vec::new();
    for e in &scene.roads.edges {
        let (a, c) = (scene.roads.nodes[e.a], scene.roads.nodes[e.b]);
        let len = (c - a).norm();
        let n = (len / step).floor() as usize;
        for i in 0..=n {
            let p = a + (c - a) * (i as f64 * step / len);
            points.push((Point3::new(p.x, p.y, height), (c - a).y.atan2((c - a).x)));
        }
    }
    let n_r = scene.bs.array.len();
    let noise = noise_model(cfg, &scene.bs.array);
    let noise_term = cfg.channel.taps() as f64 * noise.covariance.trace().re
        / (cfg.pilot.power * cfg.pilot.blocks as f64 * cfg.channel.subcarriers as f64);
    let survey = points
        .par_iter()
        .map(|(p, heading)| -> Result<([f64; 2], f64)> {
            let ch = aligned_channel(&tracer, &static_cfg, p, &Vector3::zeros(), *heading, &[], 0.0, None, scene)?;
            let power = ch.taps.energy() / ch.taps.n_tx() as f64 + noise_term;
            Ok(([p.x, p.y], 10.0 * (power / n_r as f64).log10()))
        })
        .collect::<Result<Vec<_>>>()?;
    FingerprintDb::train(&survey, [scene.bounds.min.x, scene.bounds.min.y], b.cell_size, b.candidates)
}

pub const BASELINES_CSV_HEADER: &str = "index,x,y,los,fingerprint_x,fingerprint_y,fingerprint_error,music_x,music_y,music_error,config_hash";
pub const BASELINE_SUMMARY_HEADER: &str = "mode,method,queried,located,mean_error,median_error,p90_error,los_mean_error,nlos_mean_error,config_hash";

fn run_baseline(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<BaselineSummary>> {
    let (samples, _) = load_dataset(cfg, dir)?;
    let scene = generate_city(cfg.seed, &cfg.scenario)?;
    info!("surveying fingerprint database");
    let db = survey_fingerprints(cfg, &scene)?;
    let grid = MusicGrid::new(&cfg.baselines.music, &scene.bs.array)?;
    let val: Vec<usize> = (0..samples.len()).filter(|&k| !samples[k].labeled).collect();
    info!("running baselines on {} validation samples", val.len());
    let results = val
        .iter()
        .map(|&k| -> Result<([f64; 2], Option<[f64; 2]>)> {
            let s = &samples[k];
            let fp = db.locate(rssi_of(&s.covariance))?;
            let mu = match music_locate(&s.covariance, &grid, &cfg.baselines.music, &scene.bs, s.delay_estimate)? {
                MusicOutcome::Located(p) => Some(p),
                MusicOutcome::Unlocalizable => None,
            };
            Ok((fp, mu))
        })
        .collect::<Result<Vec<_>>>()?;
    let hash = cfg.baseline_hash();
    let dist = |a: &[f64; 2], s: &CsiSample| (a[0] - s.position.x).hypot(a[1] - s.position.y);
    write_file(&dir.join("baselines.csv"), |o| {
        writeln!(o, "{BASELINES_CSV_HEADER}")?;
        for (&k, (fp, mu)) in val.iter().zip(&results) {
            let s = &samples[k];
            let (mx, my, me) = match mu {
                Some(p) => (format!("{:.6}", p[0]), format!("{:.6}", p[1]), format!("{:.6}", dist(p, s))),
                None => ("nan".into(), "nan".into(), "nan".into()),
            };
            writeln!(
                o,
                "{k},{:.6},{:.6},{},{:.6},{:.6},{:.6},{mx},{my},{me},{hash}",
                s.position.x,
                s.position.y,
                u8::from(s.los),
                fp[0],
                fp[1],
                dist(fp, s)
            )?;
        }
        Ok(())
    })?;
    let summarize = |method: &'static str, est: Vec<Option<[f64; 2]>>| {
        let mut all = Vec::new();
        let (mut l, mut nl) = (Vec::new(), Vec::new());
        for (&k, e) in val.iter().zip(&est) {
            if let Some(p) = e {
                let d = dist(p, &samples[k]);
                all.push(d);
                if samples[k].los { l.push(d) } else { nl.push(d) }
            }
        }
        BaselineSummary {
            method,
            queried: est.len(),
            located: all.len(),
            stats: ErrorStats::from_errors(&all),
            los: ErrorStats::from_errors(&l),
            nlos: ErrorStats::from_errors(&nl),
        }
    };
    let summaries = vec![
        summarize("fingerprint", results.iter().map(|r| Some(r.0)).collect()),
        summarize("music", results.iter().map(|r| r.1).collect()),
    ];
    write_file(&dir.join("baseline_summary.csv"), |o| {
        writeln!(o, "{BASELINE_SUMMARY_HEADER}")?;
        for s in &summaries {
            write_baseline_row(o, mode_name(cfg.mode), s, &hash)?;
        }
        Ok(())
    })?;
    Ok(summaries)
}

fn write_baseline_row<W: Write>(o: &mut W, mode: &str, s: &BaselineSummary, hash: &str) -> std::io::Result<()> {
    let f = |x: Option<f64>| x.map_or("nan".to_string(), |v| format!("{v:.6}"));
    writeln!(
        o,
        "{mode},{},{},{},{},{},{},{},{},{hash}",
        s.method,
        s.queried,
        s.located,
        f(s.stats.as_ref().map(|x| x.mean)),
        f(s.stats.as_ref().map(|x| x.median)),
        f(s.stats.as_ref().map(|x| x.p90)),
        f(s.los.as_ref().map(|x| x.mean)),
        f(s.nlos.as_ref().map(|x| x.mean)),
    )
}

/// `baseline`: RSSI fingerprinting and MUSIC on the validation samples in `dir`.
pub fn cmd_baseline(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<BaselineSummary>> {
    let _lock = OutputLock::acquire(dir)?;
    run_baseline(cfg, dir)
}

// ---------------------------------------------------------------------------
// sweep

/// Everything a sweep produced, per mode.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<ResultRow>,
    pub manifests: Vec<DatasetManifest>,
    pub baselines: Vec<(String, Vec<BaselineSummary>)>,
}

impl SweepResult {
    pub fn row(&self, mode: TraceMode, supervision: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode_name(mode) && r.supervision == supervision)
    }
}

/// Reuses a dataset already in `dir` when its manifest matches `cfg`.
fn ensure_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<DatasetManifest> {
    if let Ok(m) = DatasetManifest::load(&dir.join(MANIFEST_FILE)) {
        if m.config_hash == cfg.dataset_hash() && dir.join(DATASET_FILE).exists() {
            info!("reusing dataset in {}", dir.display());
            return Ok(m);
        }
    }
    run_generate(cfg, dir)
}

/// `sweep`: static and dynamic datasets with shared seeds, every supervision
/// level charted and evaluated, plus a combined report at the top of `dir`.
pub fn cmd_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<SweepResult> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(dir)?;
    write_file(&dir.join("config.toml"), |o| o.write_all(cfg.to_toml().as_bytes()))?;
    let mut result = SweepResult {
        rows: Vec::new(),
        manifests: Vec::new(),
        baselines: Vec::new(),
    };
    for mode in [TraceMode::Static, TraceMode::Dynamic] {
        let mcfg = ExperimentConfig { mode, ..cfg.clone() };
        let sub = dir.join(mode_name(mode));
        result.manifests.push(ensure_dataset(&mcfg, &sub)?);
        run_chart(&mcfg, &sub)?;
        result.rows.extend(run_evaluate(&mcfg, &sub)?);
        if mcfg.baselines.enabled {
            result.baselines.push((mode_name(mode).into(), run_baseline(&mcfg, &sub)?));
        }
    }
    write_file(&dir.join("report.csv"), |o| {
        writeln!(o, "{METRICS_CSV_HEADER}")?;
        result.rows.iter().try_for_each(|r| write_metrics_row(o, r))
    })?;
    write_file(&dir.join("ecdf.csv"), |o| {
        writeln!(o, "{ECDF_CSV_HEADER}")?;
        result.rows.iter().try_for_each(|r| write_ecdf_rows(o, r))
    })?;
    write_file(&dir.join("boxplot.csv"), |o| {
        writeln!(o, "{BOXPLOT_CSV_HEADER}")?;
        result.rows.iter().try_for_each(|r| write_boxplot_rows(o, r))
    })?;
    if !result.baselines.is_empty() {
        write_file(&dir.join("baseline_summary.csv"), |o| {
            writeln!(o, "{BASELINE_SUMMARY_HEADER}")?;
            for (mode, sums) in &result.baselines {
                let mcfg = ExperimentConfig {
                    mode: if mode == "static" { TraceMode::Static } else { TraceMode::Dynamic },
                    ..cfg.clone()
                };
                for s in sums {
                    write_baseline_row(o, mode, s, &mcfg.baseline_hash())?;
                }
            }
            Ok(())
        })?;
    }
    Ok(result)
}
