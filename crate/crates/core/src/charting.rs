//! Semi-supervised t-SNE.
//!
//! Gaussian conditionals are calibrated to a target perplexity on the
//! dissimilarities, symmetrized into a joint distribution `P`, and matched by a
//! Student-t distribution `Q` over 2D chart points. Labeled samples are either
//! clamped to their (normalized) true positions or pulled toward them by a
//! quadratic penalty.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DissimilarityMatrix;

/// Floor applied to off-diagonal `P` entries before renormalization.
pub const P_FLOOR: f64 = 1e-12;
const PERPLEXITY_TOL: f64 = 1e-4;
const MAX_BISECTION: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Labeled points are fixed at their normalized positions.
    Hard,
    /// Labeled points move, with `μ Σ ‖z_k − a_k‖²` added to the objective.
    Penalty,
    /// Labels only set the normalization; the optimization ignores them.
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartingConfig {
    pub perplexity: f64,
    pub momentum: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub anchor_mode: AnchorMode,
    pub penalty_weight: f64,
    /// Diagonal of the labeled bounding box in chart units.
    pub extent: f64,
    /// Standard deviation of the initial unlabeled points, chart units.
    pub init_std: f64,
    /// Multiplier on `P` during the first `exaggeration_iters` iterations (1 = off).
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Record the KL divergence every this many iterations (the first and last
    /// iterations are always recorded).
    pub kl_every: usize,
}

impl Default for ChartingConfig {
    fn default() -> Self {
        Self {
            perplexity: 400.0,
            momentum: 0.6,
            learning_rate: 100.0,
            iterations: 1500,
            anchor_mode: AnchorMode::Hard,
            penalty_weight: 0.005,
            extent: 1.0,
            init_std: 1e-2,
            early_exaggeration: 1.0,
            exaggeration_iters: 0,
            kl_every: 1,
        }
    }
}

impl ChartingConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.perplexity > 1.0) || self.perplexity >= n as f64 {
            return Err(Error::Config(format!(
                "perplexity {} must lie in (1, {n})",
                self.perplexity
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.extent > 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::Config("extent must be positive and init_std non-negative".into()));
        }
        // The penalty alone is a quadratic well; heavy-ball descent on it is
        // stable only for 2ημ < 2(1 + α).
        if self.anchor_mode == AnchorMode::Penalty
            && !(self.penalty_weight > 0.0 && self.learning_rate * self.penalty_weight < 1.0 + self.momentum)
        {
            return Err(Error::Config(
                "penalty weight must be positive and below (1 + momentum) / learning_rate".into(),
            ));
        }
        if !(self.early_exaggeration >= 1.0) || self.kl_every == 0 {
            return Err(Error::Config("early_exaggeration must be ≥ 1 and kl_every ≥ 1".into()));
        }
        Ok(())
    }
}

/// Row-stochastic Gaussian conditionals `p_{j|i}` (row `i`).
#[derive(Debug, Clone)]
pub struct Conditionals {
    pub n: usize,
    pub p: Vec<f64>,
    /// Bandwidth σ_i per row (in dissimilarity units).
    pub sigma: Vec<f64>,
    /// Rows whose distances are all equal; their conditionals are uniform.
    pub degenerate: Vec<bool>,
}

/// Shannon entropy in bits of the row `exp(−β s_j) / Σ` where `s_j` are shifted squared distances.
fn row_entropy(shifted: &[f64], beta: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    let mut moment = 0.0;
    for (o, &s) in out.iter_mut().zip(shifted) {
        let e = (-beta * s).exp();
        *o = e;
        sum += e;
        moment += e * s;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    (sum.ln() + beta * moment / sum) / std::f64::consts::LN_2
}

fn calibrate_row(d: &[f64], i: usize, target: f64) -> Result<(Vec<f64>, f64, bool)> {
    let n = d.len();
    let sq: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[j] * d[j]).collect();
    let lo = sq.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut row = vec![0.0; n];
    if hi - lo <= 0.0 {
        let u = 1.0 / (n - 1) as f64;
        for (j, r) in row.iter_mut().enumerate() {
            if j != i {
                *r = u;
            }
        }
        return Ok((row, f64::INFINITY, true));
    }
    let shifted: Vec<f64> = sq.iter().map(|s| s - lo).collect();
    let mut probs = vec![0.0; n - 1];
    let target_bits = target.log2();
    let mut beta = 1.0 / (hi - lo);
    let (mut beta_lo, mut beta_hi) = (0.0, f64::INFINITY);
    let mut gap = f64::INFINITY;
    for _ in 0..MAX_BISECTION {
        let h = row_entropy(&shifted, beta, &mut probs);
        gap = (h.exp2() - target).abs() / target;
        // Refine well past the acceptance tolerance; it is cheap and keeps the
        // conditionals stable to many digits.
        if gap <= 1e-12 {
            break;
        }
        if h > target_bits {
            beta_lo = beta;
            beta = if beta_hi.is_finite() { (beta + beta_hi) / 2.0 } else { beta * 2.0 };
        } else {
            beta_hi = beta;
            beta = (beta + beta_lo) / 2.0;
        }
    }
    if gap > PERPLEXITY_TOL {
        return Err(Error::Numerical(format!(
            "perplexity calibration of row {i} did not converge"
        )));
    }
    let mut k = 0;
    for (j, r) in row.iter_mut().enumerate() {
        if j != i {
            *r = probs[k];
            k += 1;
        }
    }
    Ok((row, (1.0 / (2.0 * beta)).sqrt(), false))
}

/// Bisection on each row's Gaussian precision so that `2^H(p_{·|i}) = k_t`.
pub fn calibrate_conditionals(d: &DissimilarityMatrix, perplexity: f64) -> Result<Conditionals> {
    let n = d.len();
    if n < 2 || !(perplexity > 1.0) || perplexity >= n as f64 {
        return Err(Error::Config(format!(
            "perplexity {perplexity} must lie in (1, {n})"
        )));
    }
    let rows: Vec<(Vec<f64>, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(d.row(i), i, perplexity))
        .collect::<Result<_>>()?;
    let degenerate: Vec<bool> = rows.iter().map(|r| r.2).collect();
    let count = degenerate.iter().filter(|&&x| x).count();
    if count > 0 {
        log::warn!("{count} rows have all-equal distances; using uniform conditionals");
    }
    Ok(Conditionals {
        n,
        sigma: rows.iter().map(|r| r.1).collect(),
        degenerate,
        p: rows.into_iter().flat_map(|r| r.0).collect(),
    })
}

/// Joint similarity matrix: symmetric, zero diagonal, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub n: usize,
    pub p: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

/// `P_ij ∝ (p_{j|i} + p_{i|j}) / 2`, floored and renormalized to a joint distribution.
pub fn symmetrize(c: &Conditionals) -> SimilarityMatrix {
    let n = c.n;
    let mut p = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (c.p[i * n + j] + c.p[j * n + i]);
            p[i * n + j] = v;
            p[j * n + i] = v;
            total += 2.0 * v;
        }
    }
    let mut floored = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let v = (p[i * n + j] / total).max(P_FLOOR);
            p[i * n + j] = v;
            floored += 2.0 * v;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = p[i * n + j] / floored;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    SimilarityMatrix { n, p }
}

/// Student-t joint distribution of a 2D embedding, dense.
pub fn q_matrix(z: &[[f64; 2]]) -> Vec<f64> {
    let n = z.len();
    let mut q = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = kernel(&z[i], &z[j]);
                q[i * n + j] = w;
                total += w;
            }
        }
    }
    q.iter_mut().for_each(|v| *v /= total);
    q
}

fn kernel(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// `Σ_ij P_ij ln(P_ij / Q_ij)` over entries with `P_ij > 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Per-row accumulation of the gradient terms for the current embedding.
struct Pass {
    grad: Vec<[f64; 2]>,
    z_sum: f64,
}

fn gradient_pass(p: &SimilarityMatrix, z: &[[f64; 2]], exaggeration: f64) -> Pass {
    let n = z.len();
    // Per row: attractive sum, repulsive sum (unnormalized), kernel sum.
    let rows: Vec<([f64; 2], [f64; 2], f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = z[i];
            let pr = &p.p[i * n..(i + 1) * n];
            let (mut ax, mut ay, mut rx, mut ry, mut s) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for range in [0..i, i + 1..n] {
                for j in range {
                    let dx = zi[0] - z[j][0];
                    let dy = zi[1] - z[j][1];
                    let w = 1.0 / (1.0 + dx * dx + dy * dy);
                    let pw = pr[j] * w;
                    ax += pw * dx;
                    ay += pw * dy;
                    let ww = w * w;
                    rx += ww * dx;
                    ry += ww * dy;
                    s += w;
                }
            }
            ([ax, ay], [rx, ry], s)
        })
        .collect();
    let z_sum: f64 = rows.iter().map(|r| r.2).sum();
    let grad = rows
        .iter()
        .map(|(a, r, _)| {
            [
                4.0 * (exaggeration * a[0] - r[0] / z_sum),
                4.0 * (exaggeration * a[1] - r[1] / z_sum),
            ]
        })
        .collect();
    Pass { grad, z_sum }
}

/// Analytic gradient of `KL(P‖Q)` with respect to each chart point.
pub fn kl_gradient(p: &SimilarityMatrix, z: &[[f64; 2]]) -> Vec<[f64; 2]> {
    gradient_pass(p, z, 1.0).grad
}

/// `KL(P‖Q(z))` evaluated without forming `Q`, given the kernel sum `Z`.
fn kl_with_sum(p: &SimilarityMatrix, z: &[[f64; 2]], z_sum: f64, p_log_p: f64) -> f64 {
    let n = z.len();
    let cross: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let pr = &p.p[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for range in [0..i, i + 1..n] {
                for j in range {
                    if pr[j] > 0.0 {
                        let dx = z[i][0] - z[j][0];
                        let dy = z[i][1] - z[j][1];
                        acc += pr[j] * (1.0 + dx * dx + dy * dy).ln();
                    }
                }
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    p_log_p + cross + z_sum.ln()
}

/// `KL(P‖Q(z))` for an embedding.
pub fn embedding_kl(p: &SimilarityMatrix, z: &[[f64; 2]]) -> f64 {
    let pass = gradient_pass(p, z, 1.0);
    kl_with_sum(p, z, pass.z_sum, p_log_p(p))
}

fn p_log_p(p: &SimilarityMatrix) -> f64 {
    p.p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum()
}

/// Labeled indices with their true 2D positions, m.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub n: usize,
    pub labeled: Vec<usize>,
    pub positions: Vec<[f64; 2]>,
}

impl LabeledSplit {
    pub fn new(n: usize, labeled: Vec<usize>, positions: Vec<[f64; 2]>) -> Result<Self> {
        if labeled.len() != positions.len() {
            return Err(Error::Config("labeled indices and positions differ in length".into()));
        }
        let mut seen = vec![false; n];
        for &k in &labeled {
            if k >= n || seen[k] {
                return Err(Error::Config(format!("labeled index {k} is out of range or repeated")));
            }
            seen[k] = true;
        }
        Ok(Self { n, labeled, positions })
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        let mut is_labeled = vec![false; self.n];
        for &k in &self.labeled {
            is_labeled[k] = true;
        }
        (0..self.n).filter(|&k| !is_labeled[k]).collect()
    }
}

/// Affine map between meters and chart units: `z = (p − offset)·scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub offset: [f64; 2],
    pub scale: f64,
}

impl Normalization {
    /// Centers the bounding box of `positions` and scales its diagonal to `extent`.
    pub fn fit(positions: &[[f64; 2]], extent: f64) -> Self {
        if positions.is_empty() {
            return Self {
                offset: [0.0, 0.0],
                scale: 1.0,
            };
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in positions {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let diag = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
        Self {
            offset: [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0],
            scale: if diag > 0.0 { extent / diag } else { 1.0 },
        }
    }

    pub fn to_chart(&self, p: &[f64; 2]) -> [f64; 2] {
        [(p[0] - self.offset[0]) * self.scale, (p[1] - self.offset[1]) * self.scale]
    }

    pub fn to_meters(&self, z: &[f64; 2]) -> [f64; 2] {
        [z[0] / self.scale + self.offset[0], z[1] / self.scale + self.offset[1]]
    }
}

/// A fitted chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub z: Vec<[f64; 2]>,
    /// True position (m) of each labeled point; `None` for unlabeled points.
    pub anchors: Vec<Option<[f64; 2]>>,
    pub mode: AnchorMode,
    pub normalization: Normalization,
    /// `(iteration, KL)` pairs; iteration 0 is the initial embedding.
    pub kl_trace: Vec<(usize, f64)>,
}

impl Chart {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn is_anchored(&self, k: usize) -> bool {
        self.anchors[k].is_some()
    }

    /// Position estimate in meters; anchored points in hard mode return their label.
    pub fn localize(&self, k: usize) -> [f64; 2] {
        match (self.mode, self.anchors[k]) {
            (AnchorMode::Hard, Some(a)) => a,
            _ => self.normalization.to_meters(&self.z[k]),
        }
    }

    /// Text persistence: `index anchored z_x z_y x y` per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,anchored,z_x,z_y,x,y")?;
        for k in 0..self.len() {
            let p = self.localize(k);
            writeln!(
                out,
                "{k},{},{:.12e},{:.12e},{:.9},{:.9}",
                u8::from(self.is_anchored(k)),
                self.z[k][0],
                self.z[k][1],
                p[0],
                p[1]
            )?;
        }
        Ok(())
    }

    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,kl")?;
        for (it, kl) in &self.kl_trace {
            writeln!(out, "{it},{kl:.12e}")?;
        }
        Ok(())
    }
}

/// Fits a chart to a dissimilarity matrix with the given labels.
pub fn fit(d: &DissimilarityMatrix, split: &LabeledSplit, cfg: &ChartingConfig, seed: u64) -> Result<Chart> {
    let n = d.len();
    if split.n != n {
        return Err(Error::Config(format!(
            "split covers {} samples but the dissimilarity matrix has {n}",
            split.n
        )));
    }
    cfg.validate(n)?;
    if cfg.anchor_mode != AnchorMode::Unsupervised && split.labeled.is_empty() {
        return Err(Error::Config(
            "no labeled samples; use the unsupervised anchor mode explicitly".into(),
        ));
    }
    let p = symmetrize(&calibrate_conditionals(d, cfg.perplexity)?);
    Ok(fit_with_p(&p, split, cfg, seed))
}

/// Optimization stage of [`fit`] for a precomputed `P`.
pub fn fit_with_p(p: &SimilarityMatrix, split: &LabeledSplit, cfg: &ChartingConfig, seed: u64) -> Chart {
    let n = p.n;
    let norm = Normalization::fit(&split.positions, cfg.extent);
    let mut anchors = vec![None; n];
    for (&k, pos) in split.labeled.iter().zip(&split.positions) {
        anchors[k] = Some(*pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, cfg.init_std).expect("validated std");
    let mut z: Vec<[f64; 2]> = (0..n).map(|_| [gauss.sample(&mut rng), gauss.sample(&mut rng)]).collect();
    let targets: Vec<Option<[f64; 2]>> = anchors.iter().map(|a| a.map(|a| norm.to_chart(&a))).collect();
    if cfg.anchor_mode != AnchorMode::Unsupervised {
        for (zk, t) in z.iter_mut().zip(&targets) {
            if let Some(t) = t {
                *zk = *t;
            }
        }
    }
    let frozen: Vec<bool> = targets
        .iter()
        .map(|t| cfg.anchor_mode == AnchorMode::Hard && t.is_some())
        .collect();

    let plogp = p_log_p(p);
    let mut prev = z.clone();
    let mut trace = Vec::new();
    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let pass = gradient_pass(p, &z, exaggeration);
        if it % cfg.kl_every == 0 {
            trace.push((it, kl_with_sum(p, &z, pass.z_sum, plogp)));
        }
        let mut next = z.clone();
        for k in 0..n {
            if frozen[k] {
                continue;
            }
            let mut g = pass.grad[k];
            if cfg.anchor_mode == AnchorMode::Penalty {
                if let Some(t) = targets[k] {
                    g[0] += 2.0 * cfg.penalty_weight * (z[k][0] - t[0]);
                    g[1] += 2.0 * cfg.penalty_weight * (z[k][1] - t[1]);
                }
            }
            for a in 0..2 {
                next[k][a] = z[k][a] - cfg.learning_rate * g[a] + cfg.momentum * (z[k][a] - prev[k][a]);
            }
        }
        prev = std::mem::replace(&mut z, next);
    }
    let last = embedding_kl(p, &z);
    trace.push((cfg.iterations, last));
    if trace.len() > 1 && last >= trace[0].1 {
        log::warn!("KL did not decrease: {} -> {last}", trace[0].1);
    }
    Chart {
        z,
        anchors,
        mode: cfg.anchor_mode,
        normalization: norm,
        kl_trace: trace,
    }
}
