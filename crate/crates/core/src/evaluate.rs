//! Chart quality and localization error statistics.
//!
//! Continuity and trustworthiness compare K-nearest-neighbor sets between the
//! true 2D positions and the chart (ranks break distance ties by index).
//! Kruskal stress compares all pairwise distances after the least-squares
//! optimal rescaling of the chart.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Identifier of the stress variant reported alongside its value.
pub const KS_VARIANT: &str = "kruskal-optimal-scale";

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Default neighborhood size `⌈0.01 N⌉`, at least 1.
pub fn default_k(n: usize) -> usize {
    n.div_ceil(100).max(1)
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n || 2 * n <= 3 * k + 1 {
        return Err(Error::Domain(format!(
            "neighborhood size {k} is invalid for {n} points"
        )));
    }
    Ok(())
}

/// Per point, the rank (1-based) of every other point in one space.
fn rank_rows(points: &[[f64; 2]]) -> Vec<Vec<usize>> {
    let n = points.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(&points[i], &points[j]), j))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut rank = vec![0; n];
            for (r, &(_, j)) in order.iter().enumerate() {
                rank[j] = r + 1;
            }
            rank
        })
        .collect()
}

/// Penalty of neighbors present in space `a` but missing in space `b`,
/// weighted by their rank in `b`.
fn neighborhood_score(a: &[Vec<usize>], b: &[Vec<usize>], k: usize) -> f64 {
    let n = a.len();
    let sum: usize = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && a[i][j] <= k && b[i][j] > k)
                .map(|j| b[i][j] - k)
                .sum::<usize>()
        })
        .sum();
    let (nf, kf) = (n as f64, k as f64);
    1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * sum as f64
}

fn check_pair(truth: &[[f64; 2]], chart: &[[f64; 2]]) -> Result<()> {
    if truth.len() != chart.len() {
        return Err(Error::Domain("truth and chart differ in length".into()));
    }
    Ok(())
}

/// How well true neighborhoods are preserved in the chart.
pub fn continuity(truth: &[[f64; 2]], chart: &[[f64; 2]], k: usize) -> Result<f64> {
    check_pair(truth, chart)?;
    check_k(truth.len(), k)?;
    Ok(neighborhood_score(&rank_rows(truth), &rank_rows(chart), k))
}

/// How few chart neighbors are false neighbors in the true space.
pub fn trustworthiness(truth: &[[f64; 2]], chart: &[[f64; 2]], k: usize) -> Result<f64> {
    check_pair(truth, chart)?;
    check_k(truth.len(), k)?;
    Ok(neighborhood_score(&rank_rows(chart), &rank_rows(truth), k))
}

/// Both neighborhood scores from one ranking pass: `(continuity, trustworthiness)`.
pub fn neighborhood_scores(truth: &[[f64; 2]], chart: &[[f64; 2]], k: usize) -> Result<(f64, f64)> {
    check_pair(truth, chart)?;
    check_k(truth.len(), k)?;
    let (rt, rc) = (rank_rows(truth), rank_rows(chart));
    Ok((neighborhood_score(&rt, &rc, k), neighborhood_score(&rc, &rt, k)))
}

/// `√(Σ (d − β* d̂)² / Σ d²)` over pairs, with `β* = Σ d d̂ / Σ d̂²`.
pub fn kruskal_stress(truth: &[[f64; 2]], chart: &[[f64; 2]]) -> Result<f64> {
    check_pair(truth, chart)?;
    let n = truth.len();
    if n < 2 {
        return Err(Error::Domain("stress needs at least two points".into()));
    }
    let (mut tt, mut tc, mut cc) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&truth[i], &truth[j]).sqrt();
            let e = sq_dist(&chart[i], &chart[j]).sqrt();
            tt += d * d;
            tc += d * e;
            cc += e * e;
        }
    }
    if tt == 0.0 {
        return Err(Error::Domain("all true positions coincide".into()));
    }
    let beta = if cc > 0.0 { tc / cc } else { 0.0 };
    let mut num = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&truth[i], &truth[j]).sqrt();
            let e = sq_dist(&chart[i], &chart[j]).sqrt();
            num += (d - beta * e).powi(2);
        }
    }
    Ok((num / tt).sqrt())
}

/// Summary of a set of errors, m.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    /// Minimum, first quartile, median, third quartile, maximum.
    pub quartiles: [f64; 5],
}

/// Linear interpolation between order statistics of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let mut s = errors.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            count: s.len(),
            mean: errors.iter().sum::<f64>() / errors.len() as f64,
            median: quantile(&s, 0.5),
            p90: quantile(&s, 0.9),
            quartiles: [s[0], quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75), s[s.len() - 1]],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    /// Per-point 2D error, in input order.
    pub errors: Vec<f64>,
    pub overall: ErrorStats,
    pub los: Option<ErrorStats>,
    pub nlos: Option<ErrorStats>,
    /// `(error, k/N)` with errors sorted ascending.
    pub ecdf: Vec<(f64, f64)>,
}

/// 2D error statistics of position estimates.
pub fn localization_report(truth: &[[f64; 2]], estimates: &[[f64; 2]], los: &[bool]) -> Result<LocalizationReport> {
    if truth.is_empty() {
        return Err(Error::Domain("no points to evaluate".into()));
    }
    if truth.len() != estimates.len() || truth.len() != los.len() {
        return Err(Error::Domain("truth, estimates and LoS flags differ in length".into()));
    }
    let errors: Vec<f64> = truth.iter().zip(estimates).map(|(t, e)| sq_dist(t, e).sqrt()).collect();
    let pick = |want: bool| -> Vec<f64> {
        errors.iter().zip(los).filter(|(_, &l)| l == want).map(|(e, _)| *e).collect()
    };
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let ecdf = sorted.iter().enumerate().map(|(k, &e)| (e, (k + 1) as f64 / n)).collect();
    Ok(LocalizationReport {
        overall: ErrorStats::from_errors(&errors).expect("non-empty"),
        los: ErrorStats::from_errors(&pick(true)),
        nlos: ErrorStats::from_errors(&pick(false)),
        errors,
        ecdf,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub continuity: f64,
    pub trustworthiness: f64,
    pub kruskal_stress: f64,
    pub localization: LocalizationReport,
}

/// Chart metrics on the chart coordinates plus localization on the estimates.
pub fn metrics_report(
    truth: &[[f64; 2]],
    chart: &[[f64; 2]],
    estimates: &[[f64; 2]],
    los: &[bool],
    k: usize,
) -> Result<MetricsReport> {
    let (ct, tw) = neighborhood_scores(truth, chart, k)?;
    Ok(MetricsReport {
        k,
        continuity: ct,
        trustworthiness: tw,
        kruskal_stress: kruskal_stress(truth, chart)?,
        localization: localization_report(truth, estimates, los)?,
    })
}

pub fn write_ecdf<W: Write>(mut out: W, ecdf: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "error_m,fraction")?;
    for (e, f) in ecdf {
        writeln!(out, "{e:.9},{f:.9}")?;
    }
    Ok(())
}
