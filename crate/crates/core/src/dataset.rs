//! On-disk CSI datasets, manifests and train/validation splits.
//!
//! A dataset file is little-endian binary:
//!
//! ```text
//! magic "CHLBCSI1" | version u32 | N u64 | N_R u64 | config hash [u8; 32]
//! N × { C (N_R² × (re f64, im f64), row-major) | x f64 | y f64 | height f64
//!       | vehicle_id u64 | time_index u64 | flags u8 | delay_estimate f64 }
//! ```
//!
//! `flags` bit 0 is LoS, bit 1 marks a training-trajectory sample. The config
//! hash is stored as raw bytes of the hex digest produced by
//! [`ExperimentConfig::dataset_hash`](crate::config::ExperimentConfig::dataset_hash).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Point2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CsiSample, C64};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CHLBCSI1";
pub const VERSION: u32 = 1;

const FLAG_LOS: u8 = 1;
const FLAG_LABELED: u8 = 2;

fn hash_bytes(hash: &str) -> Result<[u8; 32]> {
    if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::Data(format!("'{hash}' is not a 64-digit hex hash")));
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&hash[2 * i..2 * i + 2], 16).expect("hex checked");
    }
    Ok(out)
}

fn hash_hex(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes samples with the hash of the config that produced them.
pub fn write_dataset<W: Write>(mut out: W, samples: &[CsiSample], config_hash: &str) -> Result<()> {
    let n_r = samples.first().map_or(0, |s| s.covariance.nrows());
    if samples.iter().any(|s| s.covariance.shape() != (n_r, n_r)) {
        return Err(Error::Data("samples have covariances of different sizes".into()));
    }
    let hash = hash_bytes(config_hash)?;
    let mut buf = Vec::with_capacity(64 + samples.len() * (16 * n_r * n_r + 48));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(n_r as u64).to_le_bytes());
    buf.extend_from_slice(&hash);
    for s in samples {
        for r in 0..n_r {
            for c in 0..n_r {
                let v = s.covariance[(r, c)];
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        for v in [s.position.x, s.position.y, s.height] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&s.vehicle_id.to_le_bytes());
        buf.extend_from_slice(&s.time_index.to_le_bytes());
        let flags = if s.los { FLAG_LOS } else { 0 } | if s.labeled { FLAG_LABELED } else { 0 };
        buf.push(flags);
        buf.extend_from_slice(&s.delay_estimate.to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| Error::io("<dataset>", e))
}

struct Cursor<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.at < n {
            return Err(Error::Data("dataset file is truncated".into()));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a dataset, returning the samples and the stored config hash.
pub fn read_dataset<R: Read>(mut input: R) -> Result<(Vec<CsiSample>, String)> {
    let mut data = Vec::new();
    input.read_to_end(&mut data).map_err(|e| Error::io("<dataset>", e))?;
    let mut cur = Cursor { data: &data, at: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Data("not a CSI dataset (bad magic)".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Data(format!("unsupported dataset version {version}")));
    }
    let n = cur.u64()? as usize;
    let n_r = cur.u64()? as usize;
    let hash = hash_hex(cur.take(32)?.try_into().unwrap());
    let record = 16 * n_r * n_r + 49;
    if (data.len() - cur.at) != n.saturating_mul(record) {
        return Err(Error::Data(format!(
            "dataset declares {n} records of {record} bytes but holds {} bytes",
            data.len() - cur.at
        )));
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut c = DMatrix::<C64>::zeros(n_r, n_r);
        for r in 0..n_r {
            for col in 0..n_r {
                let re = cur.f64()?;
                let im = cur.f64()?;
                c[(r, col)] = C64::new(re, im);
            }
        }
        let (x, y, height) = (cur.f64()?, cur.f64()?, cur.f64()?);
        let vehicle_id = cur.u64()?;
        let time_index = cur.u64()?;
        let flags = cur.take(1)?[0];
        let delay_estimate = cur.f64()?;
        samples.push(CsiSample {
            covariance: c,
            position: Point2::new(x, y),
            height,
            vehicle_id,
            time_index,
            los: flags & FLAG_LOS != 0,
            labeled: flags & FLAG_LABELED != 0,
            delay_estimate,
        });
    }
    Ok((samples, hash))
}

pub const SAMPLES_CSV_HEADER: &str = "index,x,y,height,vehicle_id,time_index,los,train,delay_estimate,rssi_db,config_hash";

/// Human-readable per-sample listing (covariances omitted).
pub fn write_samples_csv<W: Write>(mut out: W, samples: &[CsiSample], config_hash: &str) -> std::io::Result<()> {
    writeln!(out, "{SAMPLES_CSV_HEADER}")?;
    for (i, s) in samples.iter().enumerate() {
        writeln!(
            out,
            "{i},{:.6},{:.6},{:.3},{},{},{},{},{:.6e},{:.6},{config_hash}",
            s.position.x,
            s.position.y,
            s.height,
            s.vehicle_id,
            s.time_index,
            s.los as u8,
            s.labeled as u8,
            s.delay_estimate,
            crate::baselines::rssi_of(&s.covariance),
        )?;
    }
    Ok(())
}

/// Summary of a generated dataset, stored next to it as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub mode: String,
    pub seed: u64,
    pub dataset_file: String,
    pub samples_file: String,
    pub records: usize,
    pub antennas: usize,
    pub los_fraction: f64,
    pub train_records: usize,
    pub validation_records: usize,
    /// Vehicles whose samples may be used as labels.
    pub train_vehicles: Vec<u64>,
    /// Vehicles whose samples are held out for validation.
    pub validation_vehicles: Vec<u64>,
    /// Pool of `(vehicle, snapshot)` pairs the samples were drawn from.
    pub pool_size: usize,
    /// Share of examined pool entries with at least one path to the base station.
    pub coverage: f64,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Data(format!("bad manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Checks the manifest against the samples it describes.
    pub fn check(&self, samples: &[CsiSample], file_hash: &str) -> Result<()> {
        if self.config_hash != file_hash {
            return Err(Error::Data(format!(
                "manifest hash {} does not match dataset hash {file_hash}",
                self.config_hash
            )));
        }
        if self.records != samples.len() {
            return Err(Error::Data(format!(
                "manifest lists {} records but the dataset holds {}",
                self.records,
                samples.len()
            )));
        }
        let train = samples.iter().filter(|s| s.labeled).count();
        if train != self.train_records || samples.len() - train != self.validation_records {
            return Err(Error::Data("manifest split counts do not match the dataset".into()));
        }
        Ok(())
    }
}

/// Splits samples into training (`true`) and validation by whole trajectories.
///
/// Vehicles are visited in a seeded random order and moved to validation while
/// that keeps the validation share at or below `fraction`, so no vehicle
/// contributes to both sides.
pub fn trajectory_split(vehicle_ids: &[u64], fraction: f64, seed: u64) -> Vec<bool> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for v in vehicle_ids {
        *counts.entry(*v).or_default() += 1;
    }
    let mut vehicles: Vec<u64> = counts.keys().copied().collect();
    vehicles.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let budget = (fraction * vehicle_ids.len() as f64).floor() as usize;
    let mut held = std::collections::HashSet::new();
    let mut used = 0;
    for v in vehicles {
        let c = counts[&v];
        if used + c <= budget {
            used += c;
            held.insert(v);
        }
    }
    vehicle_ids.iter().map(|v| !held.contains(v)).collect()
}

/// Splits individual samples at random, `⌊fraction·N⌋` of them to validation.
pub fn per_point_split(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = (fraction * n as f64).floor() as usize;
    let mut train = vec![true; n];
    for &i in &idx[..held] {
        train[i] = false;
    }
    train
}

/// Number of labels for a supervision percentage of `n` samples.
pub fn label_count(n: usize, supervision: f64) -> usize {
    (supervision / 100.0 * n as f64).round() as usize
}

/// The first `count` training samples in a seeded order, so subsets at
/// increasing supervision are nested.
pub fn labeled_subset(train: &[bool], count: usize, seed: u64) -> Result<Vec<usize>> {
    let mut pool: Vec<usize> = (0..train.len()).filter(|&i| train[i]).collect();
    if count > pool.len() {
        return Err(Error::Config(format!(
            "{count} labels requested but only {} training samples exist",
            pool.len()
        )));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = pool[..count].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
