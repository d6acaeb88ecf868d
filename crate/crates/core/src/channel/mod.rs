//! Discrete-time MIMO channel synthesis and covariance CSI.
//!
//! Paths from the ray tracer are turned into `N_R × N_T` channel taps
//! `h[w] = Σ_p α_p a_R(ϑ_p) a_T(ψ_p)^T g(wT − τ_p)`, moved to the subcarrier
//! domain with a length-`N_c` DFT, and summarised as the receive-side spatial
//! covariance averaged over subcarriers and transmit antennas.

mod estimation;

pub use estimation::{estimate_channel, NoiseModel, Pilot, PilotConfig};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Point2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Direction};
use crate::raytrace::PathTuple;

pub type C64 = Complex64;

/// Uniform planar array. Rows are stacked vertically, columns horizontally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
    /// Boresight azimuth in the global frame, rad.
    pub orientation: f64,
}

impl ArrayConfig {
    /// 4 × 8 base-station panel.
    pub fn base_station() -> Self {
        Self {
            rows: 4,
            cols: 8,
            spacing: 0.5,
            orientation: 0.0,
        }
    }

    /// 4 × 2 vehicle panel.
    pub fn vehicle() -> Self {
        Self {
            rows: 4,
            cols: 2,
            spacing: 0.5,
            orientation: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_orientation(mut self, orientation: f64) -> Self {
        self.orientation = orientation;
        self
    }
}

/// Array response toward `direction`. Element `(m, n)` sits at index `m·cols + n`.
pub fn steering_vector(array: &ArrayConfig, direction: Direction) -> DVector<C64> {
    let az = wrap_angle(direction.azimuth - array.orientation);
    let el = direction.elevation;
    let vertical = el.sin();
    let horizontal = az.sin() * el.cos();
    DVector::from_fn(array.len(), |k, _| {
        let m = (k / array.cols) as f64;
        let n = (k % array.cols) as f64;
        let phase = 2.0 * PI * array.spacing * (m * vertical + n * horizontal);
        C64::from_polar(1.0, phase)
    })
}

const SECTOR_BEAMWIDTH: f64 = 65.0;
const SECTOR_FLOOR_DB: f64 = 30.0;

/// Amplitude gain of a sector panel element relative to boresight: 65° half-power
/// beamwidth in both planes, attenuation capped at 30 dB.
pub fn sector_gain(array: &ArrayConfig, direction: Direction) -> f64 {
    let az = wrap_angle(direction.azimuth - array.orientation).to_degrees();
    let el = direction.elevation.to_degrees();
    let cut = |x: f64| (12.0 * (x / SECTOR_BEAMWIDTH).powi(2)).min(SECTOR_FLOOR_DB);
    let loss_db = (cut(az) + cut(el)).min(SECTOR_FLOOR_DB);
    10f64.powf(-loss_db / 20.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Bandwidth B, Hz. The sampling period is T = 1/B.
    pub bandwidth: f64,
    /// Carrier frequency f0, Hz.
    pub carrier: f64,
    /// Maximum delay support τ_max, s.
    pub tau_max: f64,
    /// Number of subcarriers N_c.
    pub subcarriers: usize,
    /// Root-raised-cosine roll-off.
    pub rolloff: f64,
    /// Pulse support on each side, in taps.
    pub pulse_support: usize,
    /// Weight each receive path by [`sector_gain`]; `false` keeps isotropic elements,
    /// which cannot tell the front of a planar panel from its back.
    pub rx_sector_pattern: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            bandwidth: 200e6,
            carrier: 28e9,
            tau_max: 2e-6,
            subcarriers: 512,
            rolloff: 0.25,
            pulse_support: 8,
            rx_sector_pattern: true,
        }
    }
}

impl ChannelConfig {
    pub fn sample_period(&self) -> f64 {
        1.0 / self.bandwidth
    }

    /// W = ⌈τ_max / T⌉.
    pub fn taps(&self) -> usize {
        // Guard against 400.00000000000006-style products of inexact decimals.
        let ratio = self.tau_max * self.bandwidth;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
            rounded as usize
        } else {
            ratio.ceil() as usize
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.carrier > 0.0 && self.tau_max > 0.0) {
            return Err(Error::Config("bandwidth, carrier and tau_max must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::Config("rolloff must be in [0, 1]".into()));
        }
        let w = self.taps();
        if w == 0 {
            return Err(Error::Config("tau_max gives zero taps".into()));
        }
        if self.subcarriers < w {
            return Err(Error::Config(format!(
                "{} subcarriers cannot resolve {w} taps",
                self.subcarriers
            )));
        }
        Ok(())
    }
}

/// Root-raised-cosine pulse, truncated to ±`pulse_support` sampling periods.
pub fn pulse(t: f64, cfg: &ChannelConfig) -> f64 {
    let x = t / cfg.sample_period();
    if x.abs() > cfg.pulse_support as f64 {
        return 0.0;
    }
    let b = cfg.rolloff;
    if b > 0.0 {
        // The closed form is 0/0 at |x| = 1/(4b) and loses digits near it;
        // interpolate across a small gap there instead.
        let s = 1.0 / (4.0 * b);
        let gap = 1e-5;
        let u = x.abs() - s;
        if u.abs() < gap {
            let lo = rrc(s - gap, b);
            let hi = rrc(s + gap, b);
            return lo + (hi - lo) * (u + gap) / (2.0 * gap);
        }
    }
    rrc(x, b)
}

/// Unit-energy root-raised-cosine at `x` sample periods (away from its removable singularities).
fn rrc(x: f64, b: f64) -> f64 {
    if x == 0.0 {
        return 1.0 - b + 4.0 * b / PI;
    }
    let num = (PI * x * (1.0 - b)).sin() + 4.0 * b * x * (PI * x * (1.0 + b)).cos();
    let den = PI * x * (1.0 - (4.0 * b * x).powi(2));
    num / den
}

/// `W` channel taps of shape `N_R × N_T` at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTaps {
    pub taps: Vec<DMatrix<C64>>,
    /// Absolute time of the snapshot, s.
    pub time: f64,
}

impl ChannelTaps {
    pub fn zeros(n_rx: usize, n_tx: usize, n_taps: usize, time: f64) -> Self {
        Self {
            taps: vec![DMatrix::zeros(n_rx, n_tx); n_taps],
            time,
        }
    }

    pub fn n_rx(&self) -> usize {
        self.taps.first().map_or(0, |t| t.nrows())
    }

    pub fn n_tx(&self) -> usize {
        self.taps.first().map_or(0, |t| t.ncols())
    }

    /// Σ_w ‖h[w]‖²_F.
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_squared()).sum()
    }
}

/// Sums the contribution of every path into `W` taps.
///
/// With `wssus_seed = None` each path gets the deterministic amplitude
/// `√Ω_p · exp(j(2πν_p t − 2π f0 τ_p))`; otherwise amplitudes are drawn
/// i.i.d. `CN(0, Ω_p)` from the seed.
pub fn synthesize_taps(
    paths: &[PathTuple],
    tx_array: &ArrayConfig,
    rx_array: &ArrayConfig,
    t: f64,
    cfg: &ChannelConfig,
    wssus_seed: Option<u64>,
) -> Result<ChannelTaps> {
    if tx_array.is_empty() || rx_array.is_empty() {
        return Err(Error::Config("antenna arrays must have at least one element".into()));
    }
    cfg.validate()?;
    let n_taps = cfg.taps();
    let period = cfg.sample_period();
    let mut out = ChannelTaps::zeros(rx_array.len(), tx_array.len(), n_taps, t);
    let mut rng = wssus_seed.map(ChaCha8Rng::seed_from_u64);
    for p in paths {
        let alpha = match rng.as_mut() {
            Some(rng) => {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im) * (p.power / 2.0).sqrt()
            }
            None => C64::from_polar(
                p.power.sqrt(),
                2.0 * PI * p.doppler * t - 2.0 * PI * cfg.carrier * p.delay,
            ),
        };
        let mut a_r = steering_vector(rx_array, p.doa);
        if cfg.rx_sector_pattern {
            a_r *= C64::new(sector_gain(rx_array, p.doa), 0.0);
        }
        let a_t = steering_vector(tx_array, p.dod);
        let outer = &a_r * a_t.transpose();
        let centre = p.delay / period;
        let support = cfg.pulse_support as f64;
        let first = (centre - support).ceil().max(0.0) as usize;
        let last = (centre + support).floor();
        if last < 0.0 {
            continue;
        }
        let last = (last as usize).min(n_taps.saturating_sub(1));
        for w in first..=last {
            if w >= n_taps {
                break;
            }
            let g = pulse(w as f64 * period - p.delay, cfg);
            if g != 0.0 {
                out.taps[w] += &outer * (alpha * g);
            }
        }
    }
    Ok(out)
}

/// `H[f_n] = Σ_w h[w] e^{−j2π n w / N_c}` for n = 0..N_c.
pub fn taps_to_frequency(taps: &ChannelTaps, cfg: &ChannelConfig) -> Result<Vec<DMatrix<C64>>> {
    let n_c = cfg.subcarriers;
    if n_c < taps.taps.len() {
        return Err(Error::Config(format!(
            "{n_c} subcarriers cannot resolve {} taps",
            taps.taps.len()
        )));
    }
    let (n_r, n_t) = (taps.n_rx(), taps.n_tx());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_c);
    let mut out = vec![DMatrix::<C64>::zeros(n_r, n_t); n_c];
    let mut buf = vec![C64::new(0.0, 0.0); n_c];
    for r in 0..n_r {
        for c in 0..n_t {
            buf.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
            for (w, tap) in taps.taps.iter().enumerate() {
                buf[w] = tap[(r, c)];
            }
            fft.process(&mut buf);
            for (n, v) in buf.iter().enumerate() {
                out[n][(r, c)] = *v;
            }
        }
    }
    Ok(out)
}

/// Receive-side spatial covariance `C = (1/(N_c·N_T)) Σ_n H[f_n] H[f_n]^H`.
pub fn csi_covariance(freq: &[DMatrix<C64>]) -> Result<DMatrix<C64>> {
    let first = freq
        .first()
        .ok_or_else(|| Error::Domain("covariance needs at least one subcarrier".into()))?;
    let (n_r, n_t) = first.shape();
    let mut c = DMatrix::<C64>::zeros(n_r, n_r);
    for h in freq {
        c.gemm(C64::new(1.0, 0.0), h, &h.adjoint(), C64::new(1.0, 0.0));
    }
    c /= C64::new((freq.len() * n_t) as f64, 0.0);
    // Exact Hermitian symmetry regardless of summation rounding.
    let sym = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    Ok(sym)
}

/// One CSI observation: covariance plus the ground truth used for labels and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub covariance: DMatrix<C64>,
    pub position: Point2<f64>,
    /// Antenna height, m. Not used for evaluation, which is 2D.
    pub height: f64,
    pub vehicle_id: u64,
    pub time_index: u64,
    pub los: bool,
    /// The sample belongs to a training trajectory, so its position may be used as a label.
    pub labeled: bool,
    /// Delay of the strongest estimated tap, s (used by the angle-and-range baseline).
    pub delay_estimate: f64,
}
