//! Comparison localizers: RSSI fingerprinting and MUSIC angle-plus-range.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use rayon::prelude::*;

use crate::channel::{pulse, steering_vector, ArrayConfig, ChannelConfig, ChannelTaps, C64};
use crate::error::{Error, Result};
use crate::geometry::{Direction, SPEED_OF_LIGHT};
use crate::scene::BaseStation;

/// Received power proxy `10 log10(tr(C) / N_R)`, dB.
pub fn rssi_of(c: &DMatrix<C64>) -> f64 {
    10.0 * (c.trace().re / c.nrows() as f64).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintCell {
    /// Grid coordinates `(ix, iy)` relative to the origin.
    pub cell: (i64, i64),
    pub center: [f64; 2],
    pub mean_rssi: f64,
    pub count: usize,
}

/// Per-cell mean RSSI on a square grid. Cells are ordered by `(iy, ix)`, which
/// is also the tie-break order.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub cells: Vec<FingerprintCell>,
    /// Number of candidate cells blended per query.
    pub k: usize,
}

impl FingerprintDb {
    /// Averages the RSSI of training samples `(position, rssi)` per cell.
    pub fn train(samples: &[([f64; 2], f64)], origin: [f64; 2], cell_size: f64, k: usize) -> Result<Self> {
        if !(cell_size > 0.0) || k == 0 {
            return Err(Error::Config("cell size and candidate count must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Domain("fingerprint training set is empty".into()));
        }
        let mut acc: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
        for (p, rssi) in samples {
            let ix = ((p[0] - origin[0]) / cell_size).floor() as i64;
            let iy = ((p[1] - origin[1]) / cell_size).floor() as i64;
            let e = acc.entry((iy, ix)).or_insert((0.0, 0));
            e.0 += rssi;
            e.1 += 1;
        }
        let cells = acc
            .into_iter()
            .map(|((iy, ix), (sum, count))| FingerprintCell {
                cell: (ix, iy),
                center: [
                    origin[0] + (ix as f64 + 0.5) * cell_size,
                    origin[1] + (iy as f64 + 0.5) * cell_size,
                ],
                mean_rssi: sum / count as f64,
                count,
            })
            .collect();
        Ok(Self {
            origin,
            cell_size,
            cells,
            k,
        })
    }

    /// Blends the centers of the `k` cells closest in RSSI with weights
    /// inversely proportional to the RSSI gap; an exact match wins outright.
    pub fn locate(&self, rssi: f64) -> Result<[f64; 2]> {
        if self.cells.is_empty() {
            return Err(Error::Domain("fingerprint database is empty".into()));
        }
        let mut order: Vec<(f64, usize)> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.mean_rssi - rssi).abs(), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let best = order[0];
        if best.0 == 0.0 || self.k == 1 {
            return Ok(self.cells[best.1].center);
        }
        let mut w_sum = 0.0;
        let mut pos = [0.0, 0.0];
        for &(gap, i) in order.iter().take(self.k) {
            let w = 1.0 / gap;
            w_sum += w;
            pos[0] += w * self.cells[i].center[0];
            pos[1] += w * self.cells[i].center[1];
        }
        Ok([pos[0] / w_sum, pos[1] / w_sum])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MusicConfig {
    /// Assumed number of sources P̂.
    pub sources: usize,
    /// Azimuth grid step, rad.
    pub azimuth_step: f64,
    /// Elevation grid step, rad.
    pub elevation_step: f64,
    /// Lowest and highest elevation searched, rad.
    pub elevation_range: [f64; 2],
    /// Delay grid step for ranging, s.
    pub delay_step: f64,
    /// Peak-to-median ratio below which a sample is unlocalizable, dB.
    pub min_peak_db: f64,
}

impl Default for MusicConfig {
    fn default() -> Self {
        Self {
            sources: 2,
            azimuth_step: 0.25f64.to_radians(),
            elevation_step: 0.25f64.to_radians(),
            elevation_range: [-80f64.to_radians(), 10f64.to_radians()],
            delay_step: 0.25e-9,
            min_peak_db: 3.0,
        }
    }
}

impl MusicConfig {
    pub fn validate(&self, n_r: usize) -> Result<()> {
        if self.sources == 0 || self.sources >= n_r {
            return Err(Error::Config(format!(
                "source count {} must lie in [1, {n_r})",
                self.sources
            )));
        }
        if !(self.azimuth_step > 0.0 && self.elevation_step > 0.0 && self.delay_step > 0.0) {
            return Err(Error::Config("MUSIC grid steps must be positive".into()));
        }
        if !(self.elevation_range[0] <= self.elevation_range[1]) {
            return Err(Error::Config("elevation range is reversed".into()));
        }
        Ok(())
    }
}

/// Precomputed steering vectors over the search grid.
///
/// Azimuth covers the front half-plane of the array, `orientation ± π/2`, where
/// the planar array is unambiguous.
pub struct MusicGrid {
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
    steering: Vec<DVector<C64>>,
    pub sources: usize,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

impl MusicGrid {
    pub fn new(cfg: &MusicConfig, array: &ArrayConfig) -> Result<Self> {
        cfg.validate(array.len())?;
        let half = std::f64::consts::FRAC_PI_2;
        // Centered on boresight so that boresight itself is a grid point.
        let k = ((half - 1e-6) / cfg.azimuth_step).floor() as i64;
        let azimuths: Vec<f64> = (-k..=k).map(|i| array.orientation + i as f64 * cfg.azimuth_step).collect();
        let elevations = grid(cfg.elevation_range[0], cfg.elevation_range[1], cfg.elevation_step);
        let mut steering = Vec::with_capacity(azimuths.len() * elevations.len());
        for &el in &elevations {
            for &az in &azimuths {
                steering.push(steering_vector(array, Direction::new(az, el)));
            }
        }
        Ok(Self {
            azimuths,
            elevations,
            steering,
            sources: cfg.sources,
        })
    }

    pub fn direction(&self, index: usize) -> Direction {
        let na = self.azimuths.len();
        Direction::new(self.azimuths[index % na], self.elevations[index / na])
    }
}

/// `1 / ‖E_n^H a‖²` over the grid (elevation-major), with `E_n` the weakest
/// `N_R − P̂` eigenvectors of `C`.
///
/// Uses `‖E_n^H a‖² = ‖a‖² − ‖E_s^H a‖²`, which needs only the `P̂` signal
/// eigenvectors per grid point.
pub fn music_spectrum(c: &DMatrix<C64>, grid: &MusicGrid) -> Result<Vec<f64>> {
    let n = c.nrows();
    if grid.steering.first().map_or(0, |a| a.len()) != n {
        return Err(Error::Config("covariance and array sizes differ".into()));
    }
    let eig = c.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let signal: Vec<Vec<C64>> = idx[n - grid.sources..]
        .iter()
        .map(|&k| (0..n).map(|r| eig.eigenvectors[(r, k)].conj()).collect())
        .collect();
    Ok(grid
        .steering
        .par_iter()
        .map(|a| {
            let mut proj = a.norm_squared();
            for e in &signal {
                let dot: C64 = e.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
                proj -= dot.norm_sqr();
            }
            1.0 / proj.max(f64::MIN_POSITIVE)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MusicOutcome {
    Located([f64; 2]),
    /// No spectral peak stands out from the median by the configured margin.
    Unlocalizable,
}

/// Position from the MUSIC peak direction and the ranging delay.
pub fn music_locate(
    c: &DMatrix<C64>,
    grid: &MusicGrid,
    cfg: &MusicConfig,
    bs: &BaseStation,
    delay_estimate: f64,
) -> Result<MusicOutcome> {
    let spec = music_spectrum(c, grid)?;
    let mut best = 0;
    for (i, v) in spec.iter().enumerate() {
        if *v > spec[best] {
            best = i;
        }
    }
    let mut sorted = spec.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(10.0 * (spec[best] / median).log10() > cfg.min_peak_db) || !(delay_estimate > 0.0) {
        return Ok(MusicOutcome::Unlocalizable);
    }
    let d = grid.direction(best);
    let ground_range = SPEED_OF_LIGHT * delay_estimate * d.elevation.cos();
    Ok(MusicOutcome::Located([
        bs.position.x + ground_range * d.azimuth.cos(),
        bs.position.y + ground_range * d.azimuth.sin(),
    ]))
}

/// Delay of the strongest tap, refined on a grid of `step` by a normalized
/// matched filter against the sampled pulse.
pub fn estimate_delay(taps: &ChannelTaps, cfg: &ChannelConfig, step: f64) -> f64 {
    let period = cfg.sample_period();
    let power: Vec<f64> = taps.taps.iter().map(|h| h.norm_squared()).collect();
    let mut peak = 0;
    for (w, p) in power.iter().enumerate() {
        if *p > power[peak] {
            peak = w;
        }
    }
    if power[peak] == 0.0 {
        return 0.0;
    }
    let support = cfg.pulse_support;
    let lo_tap = peak.saturating_sub(support);
    let hi_tap = (peak + support).min(taps.taps.len() - 1);
    let (lo, hi) = ((peak as f64 - 1.0) * period, (peak as f64 + 1.0) * period);
    let mut best = (f64::NEG_INFINITY, peak as f64 * period);
    for tau in grid(lo, hi, step) {
        let mut acc = DMatrix::<C64>::zeros(taps.n_rx(), taps.n_tx());
        let mut energy = 0.0;
        for w in lo_tap..=hi_tap {
            let g = pulse(w as f64 * period - tau, cfg);
            acc += &taps.taps[w] * C64::new(g, 0.0);
            energy += g * g;
        }
        if energy > 0.0 {
            let score = acc.norm_squared() / energy;
            if score > best.0 {
                best = (score, tau);
            }
        }
    }
    best.1
}
