//! Pilot transmission and least-squares channel estimation.
//!
//! Pilots are sent as `M` cyclic-prefixed blocks of `N_c` samples per transmit
//! antenna, so after prefix removal every block sees a circular convolution and
//! the received signal decouples per subcarrier as `Y_f = H_f X_f + N_f`. The
//! pilot matrices `X_f` (`N_T × M`) are random-phase unitary-like blocks,
//! `X_f X_f^H = N_c σ_x² M I`, which makes the per-subcarrier LS solve a
//! single matrix product.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{taps_to_frequency, ArrayConfig, ChannelConfig, ChannelTaps, C64};
use crate::error::{Error, Result};
use crate::geometry::Direction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    /// Transmit power per antenna and sample, σ_x².
    pub power: f64,
    /// Total pilot length in samples per antenna (multiple of the subcarrier count).
    pub length: usize,
    pub seed: u64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            power: 1.0,
            length: 8 * 512,
            seed: 0,
        }
    }
}

/// A generated pilot block, kept in both domains.
#[derive(Debug, Clone)]
pub struct Pilot {
    /// Per subcarrier: `N_T × M` pilot matrix.
    pub freq: Vec<DMatrix<C64>>,
    /// Per block: `N_T × N_c` time-domain samples.
    pub time: Vec<DMatrix<C64>>,
}

impl Pilot {
    pub fn generate(cfg: &PilotConfig, n_tx: usize, n_c: usize) -> Result<Self> {
        if n_c == 0 || cfg.length % n_c != 0 {
            return Err(Error::Config(format!(
                "pilot length {} is not a multiple of {n_c} subcarriers",
                cfg.length
            )));
        }
        let blocks = cfg.length / n_c;
        if blocks < n_tx {
            return Err(Error::Config(format!(
                "{blocks} pilot blocks cannot identify {n_tx} transmit antennas"
            )));
        }
        if !(cfg.power > 0.0) {
            return Err(Error::Config("pilot power must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let amp = (n_c as f64 * cfg.power).sqrt();
        // DFT code over (antenna, block) gives orthogonal rows; random phases
        // per antenna and per block whiten the sequence in time.
        let freq: Vec<DMatrix<C64>> = (0..n_c)
            .map(|_| {
                let ant: Vec<f64> = (0..n_tx).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                let blk: Vec<f64> = (0..blocks).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                DMatrix::from_fn(n_tx, blocks, |a, b| {
                    let code = -2.0 * PI * (a * b) as f64 / blocks as f64;
                    C64::from_polar(amp, ant[a] + blk[b] + code)
                })
            })
            .collect();
        let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_c);
        let mut time = vec![DMatrix::<C64>::zeros(n_tx, n_c); blocks];
        let mut buf = vec![C64::new(0.0, 0.0); n_c];
        for (b, block) in time.iter_mut().enumerate() {
            for a in 0..n_tx {
                for (f, x) in freq.iter().enumerate() {
                    buf[f] = x[(a, b)];
                }
                ifft.process(&mut buf);
                for (k, v) in buf.iter().enumerate() {
                    block[(a, k)] = v / n_c as f64;
                }
            }
        }
        Ok(Self { freq, time })
    }

    pub fn blocks(&self) -> usize {
        self.time.len()
    }
}

/// Spatially correlated additive distortion, `n[w] ~ CN(0, Q_n)` i.i.d. over time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub covariance: DMatrix<C64>,
}

impl NoiseModel {
    pub fn noiseless(n_rx: usize) -> Self {
        Self {
            covariance: DMatrix::zeros(n_rx, n_rx),
        }
    }

    /// `Q_n = σ² I`.
    pub fn white(n_rx: usize, power: f64) -> Self {
        Self {
            covariance: DMatrix::identity(n_rx, n_rx) * C64::new(power, 0.0),
        }
    }

    /// White noise at `snr_db` below a per-antenna signal power.
    pub fn from_snr(n_rx: usize, signal_power: f64, snr_db: f64) -> Self {
        Self::white(n_rx, signal_power / 10f64.powf(snr_db / 10.0))
    }

    /// White noise plus one directional interferer: `σ² I + P_i a a^H`.
    pub fn directional(array: &ArrayConfig, power: f64, interferer_power: f64, direction: Direction) -> Self {
        let a = super::steering_vector(array, direction);
        let mut q = DMatrix::identity(array.len(), array.len()) * C64::new(power, 0.0);
        q += &a * a.adjoint() * C64::new(interferer_power, 0.0);
        Self { covariance: q }
    }

    pub fn validate(&self) -> Result<()> {
        let q = &self.covariance;
        if !q.is_square() {
            return Err(Error::Config("noise covariance must be square".into()));
        }
        let scale = q.norm().max(f64::MIN_POSITIVE);
        if (q - q.adjoint()).norm() > 1e-12 * scale {
            return Err(Error::Config("noise covariance is not Hermitian".into()));
        }
        let tr = q.trace().re;
        if q.clone().symmetric_eigen().eigenvalues.iter().any(|&l| l < -1e-12 * tr.abs()) {
            return Err(Error::Config("noise covariance is not positive semidefinite".into()));
        }
        Ok(())
    }

    /// A square root `S` with `S S^H = Q_n`, and whether it is diagonal.
    fn sqrt(&self) -> (DMatrix<C64>, bool) {
        let q = &self.covariance;
        let n = q.nrows();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] == C64::new(0.0, 0.0)));
        if diagonal {
            let s = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    C64::new(q[(i, i)].re.max(0.0).sqrt(), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            return (s, true);
        }
        let eig = q.clone().symmetric_eigen();
        let mut s = eig.eigenvectors.clone();
        for (j, l) in eig.eigenvalues.iter().enumerate() {
            s.column_mut(j).scale_mut(l.max(0.0).sqrt());
        }
        (s, false)
    }
}

/// Least-squares estimate of the first `W` taps from one pilot transmission.
///
/// The received blocks are `Y_f = H_f X_f + N_f` per subcarrier, with noise drawn
/// directly in the frequency domain (the DFT of i.i.d. `CN(0, Q_n)` samples is
/// i.i.d. `CN(0, N_c Q_n)`). The LS solution `Ĥ_f = Y_f X_f^H (X_f X_f^H)^{-1}` is
/// brought back to the delay domain and truncated to the `W` taps of the model.
pub fn estimate_channel(
    taps: &ChannelTaps,
    cfg: &ChannelConfig,
    pilot_cfg: &PilotConfig,
    noise: &NoiseModel,
    seed: u64,
) -> Result<ChannelTaps> {
    let n_taps = taps.taps.len();
    let (n_r, n_t) = (taps.n_rx(), taps.n_tx());
    let n_c = cfg.subcarriers;
    if pilot_cfg.length < n_taps * n_t {
        return Err(Error::Config(format!(
            "pilot of {} samples is too short to identify {n_taps} taps × {n_t} antennas",
            pilot_cfg.length
        )));
    }
    if noise.covariance.nrows() != n_r {
        return Err(Error::Config(format!(
            "noise covariance is {}×{} but the array has {n_r} elements",
            noise.covariance.nrows(),
            noise.covariance.ncols()
        )));
    }
    noise.validate()?;
    let pilot = Pilot::generate(pilot_cfg, n_t, n_c)?;
    let blocks = pilot.blocks();
    let h_freq = taps_to_frequency(taps, cfg)?;
    let (s, diagonal) = noise.sqrt();
    let noise_scale = (n_c as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gram_inv = 1.0 / (n_c as f64 * pilot_cfg.power * blocks as f64);

    let mut est_freq = Vec::with_capacity(n_c);
    let mut z = DMatrix::<C64>::zeros(n_r, blocks);
    for (h, x) in h_freq.iter().zip(&pilot.freq) {
        let mut y = h * x;
        for v in z.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v = C64::new(re, im) * (0.5f64.sqrt() * noise_scale);
        }
        if diagonal {
            for r in 0..n_r {
                let g = s[(r, r)];
                for b in 0..blocks {
                    y[(r, b)] += g * z[(r, b)];
                }
            }
        } else {
            y += &s * &z;
        }
        est_freq.push(y * x.adjoint() * C64::new(gram_inv, 0.0));
    }

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_c);
    let mut out = ChannelTaps::zeros(n_r, n_t, n_taps, taps.time);
    let mut buf = vec![C64::new(0.0, 0.0); n_c];
    for r in 0..n_r {
        for c in 0..n_t {
            for (f, h) in est_freq.iter().enumerate() {
                buf[f] = h[(r, c)];
            }
            ifft.process(&mut buf);
            for w in 0..n_taps {
                out.taps[w][(r, c)] = buf[w] / n_c as f64;
            }
        }
    }
    Ok(out)
}
