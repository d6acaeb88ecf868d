//! Experiment configuration and the stage hashes derived from it.
//!
//! Configs are TOML with one table per module; unknown keys are rejected. Each
//! pipeline stage is keyed by a SHA-256 over the canonical serialization of the
//! settings it depends on, so changing e.g. the charting learning rate reuses
//! the cached dataset and dissimilarity matrix but not the chart.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::MusicConfig;
use crate::channel::{ChannelConfig, PilotConfig};
use crate::charting::ChartingConfig;
use crate::error::{Error, Result};
use crate::features::DEFAULT_EIG_FLOOR;
use crate::raytrace::{TraceConfig, TraceMode};
use crate::scene::{ScenarioParams, TrafficParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub vehicles: usize,
    pub steps: usize,
    /// Time between snapshots, s.
    pub dt: f64,
    /// Relative frequency of sedan, hatchback, truck and bus.
    pub class_mix: [f64; 4],
    /// Cruise speed as a fraction of the class speed cap, drawn from this range.
    pub speed_fraction: [f64; 2],
}

impl Default for TrafficConfig {
    fn default() -> Self {
        let p = TrafficParams::default();
        Self {
            vehicles: 250,
            steps: 40,
            dt: 1.0,
            class_mix: p.class_mix,
            speed_fraction: p.speed_fraction,
        }
    }
}

impl TrafficConfig {
    pub fn params(&self) -> TrafficParams {
        TrafficParams {
            class_mix: self.class_mix,
            speed_fraction: self.speed_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-antenna noise power relative to the pilot power, dB.
    pub power_db: f64,
    /// Optional directional interferer power relative to the pilot power, dB.
    pub interferer_db: Option<f64>,
    pub interferer_azimuth: f64,
    pub interferer_elevation: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            power_db: -125.0,
            interferer_db: None,
            interferer_azimuth: 0.0,
            interferer_elevation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotSection {
    pub power: f64,
    /// Pilot blocks of `subcarriers` samples per antenna.
    pub blocks: usize,
}

impl Default for PilotSection {
    fn default() -> Self {
        Self { power: 1.0, blocks: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub eig_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            eig_floor: DEFAULT_EIG_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Neighborhood size for continuity and trustworthiness; 0 selects ⌈0.01 N⌉.
    pub k: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { k: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub enabled: bool,
    /// Fingerprint grid cell size, m.
    pub cell_size: f64,
    /// Candidate cells blended per fingerprint query.
    pub candidates: usize,
    pub music: MusicConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            cell_size: 4.0,
            candidates: 3,
            music: MusicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: TraceMode,
    /// Number of samples N.
    pub samples: usize,
    /// Supervision levels, percent of N.
    pub supervision: Vec<f64>,
    pub validation_fraction: f64,
    /// Split by individual samples instead of whole trajectories.
    pub per_point_split: bool,
    pub output_dir: PathBuf,
    pub scenario: ScenarioParams,
    pub traffic: TrafficConfig,
    /// Redraw path amplitudes as CN(0, Ω) per sample instead of using geometric phases.
    pub wssus: bool,
    pub trace: TraceConfig,
    pub channel: ChannelConfig,
    pub pilot: PilotSection,
    pub noise: NoiseConfig,
    pub features: FeatureConfig,
    /// Keys left out fall back to [`desk_charting`], not the library defaults.
    #[serde(deserialize_with = "charting_over_desk")]
    pub charting: ChartingConfig,
    pub evaluate: EvaluateConfig,
    pub baselines: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: TraceMode::Dynamic,
            samples: 2000,
            supervision: vec![5.0, 10.0, 25.0, 35.0, 50.0],
            validation_fraction: 0.5,
            per_point_split: false,
            output_dir: PathBuf::from("out"),
            scenario: ScenarioParams::default(),
            traffic: TrafficConfig::default(),
            wssus: false,
            trace: TraceConfig::default(),
            channel: ChannelConfig::default(),
            pilot: PilotSection::default(),
            noise: NoiseConfig::default(),
            features: FeatureConfig::default(),
            charting: desk_charting(),
            evaluate: EvaluateConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

/// Charting settings used by the desk-scale experiments.
pub fn desk_charting() -> ChartingConfig {
    ChartingConfig {
        perplexity: 10.0,
        extent: 60.0,
        early_exaggeration: 12.0,
        exaggeration_iters: 500,
        kl_every: 50,
        ..ChartingConfig::default()
    }
}

fn charting_over_desk<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<ChartingConfig, D::Error> {
    use serde::de::Error as _;
    let given = toml::Table::deserialize(d)?;
    let mut merged = toml::Table::try_from(desk_charting()).map_err(D::Error::custom)?;
    merged.extend(given);
    merged.try_into().map_err(D::Error::custom)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.trace.validate()?;
        self.channel.validate()?;
        if self.samples < 4 {
            return Err(Error::Config("need at least 4 samples".into()));
        }
        if self.supervision.iter().any(|s| !(*s > 0.0 && *s < 100.0)) {
            return Err(Error::Config("supervision percentages must lie in (0, 100)".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        let max_sup = self.supervision.iter().copied().fold(0.0, f64::max);
        if max_sup / 100.0 > 1.0 - self.validation_fraction + 1e-12 {
            return Err(Error::Config(format!(
                "supervision {max_sup}% exceeds the training share {}",
                1.0 - self.validation_fraction
            )));
        }
        let t = &self.traffic;
        if t.vehicles == 0 || t.steps == 0 || !(t.dt > 0.0) {
            return Err(Error::Config("traffic needs vehicles, steps and a positive dt".into()));
        }
        t.params().validate()?;
        if self.samples > t.vehicles * t.steps {
            return Err(Error::Config(format!(
                "{} samples exceed the {} available vehicle snapshots",
                self.samples,
                t.vehicles * t.steps
            )));
        }
        if !(self.pilot.power > 0.0) || self.pilot.blocks == 0 {
            return Err(Error::Config("pilot power and blocks must be positive".into()));
        }
        if !(self.features.eig_floor > 0.0) {
            return Err(Error::Config("eig_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn pilot_config(&self) -> PilotConfig {
        PilotConfig {
            power: self.pilot.power,
            length: self.pilot.blocks * self.channel.subcarriers,
            seed: crate::seeds::derive(self.seed, "pilot"),
        }
    }

    /// Hash of everything that determines the dataset.
    pub fn dataset_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            seed: u64,
            mode: TraceMode,
            samples: usize,
            validation_fraction: f64,
            per_point_split: bool,
            scenario: &'a ScenarioParams,
            traffic: &'a TrafficConfig,
            trace: &'a TraceConfig,
            wssus: bool,
            channel: &'a ChannelConfig,
            pilot: &'a PilotSection,
            noise: &'a NoiseConfig,
            delay_step: f64,
        }
        digest(&[&toml_of(&Key {
            seed: self.seed,
            mode: self.mode,
            samples: self.samples,
            validation_fraction: self.validation_fraction,
            per_point_split: self.per_point_split,
            scenario: &self.scenario,
            traffic: &self.traffic,
            trace: &self.trace,
            wssus: self.wssus,
            channel: &self.channel,
            pilot: &self.pilot,
            noise: &self.noise,
            delay_step: self.baselines.music.delay_step,
        })])
    }

    /// Hash keying the dissimilarity matrix: dataset plus eigenvalue floor.
    pub fn dissimilarity_hash(&self) -> String {
        digest(&[&self.dataset_hash(), &toml_of(&self.features)])
    }

    /// Hash of a chart at one supervision level.
    pub fn chart_hash(&self, supervision: f64) -> String {
        digest(&[&self.dissimilarity_hash(), &toml_of(&self.charting), &format!("{supervision}")])
    }

    /// Hash of the evaluation of one chart.
    pub fn evaluation_hash(&self, supervision: f64) -> String {
        digest(&[&self.chart_hash(supervision), &toml_of(&self.evaluate)])
    }

    pub fn baseline_hash(&self) -> String {
        digest(&[&self.dataset_hash(), &toml_of(&self.baselines)])
    }
}

/// Canonical TOML text of a config section.
fn toml_of<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config section serializes")
}

/// Hex SHA-256 over length-prefixed parts.
pub fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("sead = 3"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("[charting]\nlearning_rat = 3.0"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_sections_take_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 9\n[charting]\niterations = 10\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.charting.iterations, 10);
        assert_eq!(cfg.charting.perplexity, desk_charting().perplexity);
    }

    #[test]
    fn stage_hashes_track_their_inputs() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.charting.learning_rate = 50.0;
        assert_eq!(a.dataset_hash(), b.dataset_hash());
        assert_eq!(a.dissimilarity_hash(), b.dissimilarity_hash());
        assert_ne!(a.chart_hash(5.0), b.chart_hash(5.0));
        b.noise.power_db = -100.0;
        assert_ne!(a.dataset_hash(), b.dataset_hash());
        assert_eq!(a.dataset_hash().len(), 64);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(ExperimentConfig::from_toml("supervision = [0.0]").is_err());
        assert!(ExperimentConfig::from_toml("supervision = [60.0]").is_err());
        assert!(ExperimentConfig::from_toml("[trace]\nmax_order = 5").is_err());
    }
}
