//! Correlation reports, disentanglement score, NMI and timeline analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("pearson", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 samples, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Concept-by-latent correlation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `concepts × latents`; `None` where the coefficient is undefined.
    pub matrix: Vec<Vec<Option<f64>>>,
    /// Latent with the largest `|r|` per concept, lowest index on ties.
    pub assignment: Vec<Option<usize>>,
    /// Mean per-window KL per latent, when the model defines one.
    #[serde(default)]
    pub kl_per_dim: Option<Vec<f64>>,
}

impl CorrelationReport {
    pub fn abs(&self, concept: usize, latent: usize) -> f64 {
        self.matrix[concept][latent].map_or(0.0, f64::abs)
    }

    pub fn best_abs(&self, concept: usize) -> f64 {
        self.assignment[concept].map_or(0.0, |j| self.abs(concept, j))
    }

    /// Whether every concept reaches `|r| >= threshold` with its own latent,
    /// no latent serving two concepts.
    pub fn distinct_assignment_above(&self, threshold: f64) -> bool {
        let n = self.matrix.len();
        let m = self.matrix.first().map_or(0, Vec::len);
        // Small bipartite matching by augmenting paths.
        fn augment(
            c: usize,
            ok: &[Vec<bool>],
            seen: &mut [bool],
            owner: &mut [Option<usize>],
        ) -> bool {
            for j in 0..ok[c].len() {
                if ok[c][j] && !seen[j] {
                    seen[j] = true;
                    if owner[j].is_none_or(|o| augment(o, ok, seen, owner)) {
                        owner[j] = Some(c);
                        return true;
                    }
                }
            }
            false
        }
        let ok: Vec<Vec<bool>> = (0..n)
            .map(|c| (0..m).map(|j| self.abs(c, j) >= threshold).collect())
            .collect();
        let mut owner = vec![None; m];
        (0..n).all(|c| augment(c, &ok, &mut vec![false; m], &mut owner))
    }

    /// Number of concepts with some latent at `|r| >= threshold`.
    pub fn concepts_above(&self, threshold: f64) -> usize {
        (0..self.matrix.len())
            .filter(|&c| self.best_abs(c) >= threshold)
            .count()
    }
}

/// Pearson coefficients between every concept column and every latent column.
pub fn correlation_matrix(latents: &Tensor, concepts: &Tensor) -> Result<CorrelationReport> {
    if latents.rows() != concepts.rows() {
        return Err(Error::shape(
            "correlation rows",
            &[concepts.rows()],
            &[latents.rows()],
        ));
    }
    let lat: Vec<Vec<f64>> = (0..latents.cols()).map(|j| latents.column(j)).collect();
    let mut matrix = Vec::with_capacity(concepts.cols());
    let mut assignment = Vec::with_capacity(concepts.cols());
    for c in 0..concepts.cols() {
        let col = concepts.column(c);
        let row: Vec<Option<f64>> = lat.iter().map(|l| pearson(&col, l).ok()).collect();
        let mut best: Option<(usize, f64)> = None;
        for (j, r) in row.iter().enumerate() {
            if let Some(r) = r {
                if best.is_none_or(|(_, b)| r.abs() > b) {
                    best = Some((j, r.abs()));
                }
            }
        }
        assignment.push(best.map(|b| b.0));
        matrix.push(row);
    }
    Ok(CorrelationReport {
        matrix,
        assignment,
        kl_per_dim: None,
    })
}

/// Mean over concepts of the gap between the assigned `|r|` and the largest
/// other `|r|` in the same row, clipped to `[0, 1]`.
pub fn disentanglement_score(report: &CorrelationReport) -> f64 {
    let n = report.matrix.len();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|c| {
            let Some(best) = report.assignment[c] else {
                return 0.0;
            };
            let other = (0..report.matrix[c].len())
                .filter(|&j| j != best)
                .map(|j| report.abs(c, j))
                .fold(0.0, f64::max);
            (report.abs(c, best) - other).clamp(0.0, 1.0)
        })
        .sum();
    (total / n as f64).clamp(0.0, 1.0)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalised mutual information with arithmetic-mean normalisation,
/// `I(P; T) / ((H(P) + H(T)) / 2)`. Zero when either side has one class.
pub fn nmi<A: Ord + Clone, B: Ord + Clone>(pred: &[A], truth: &[B]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("nmi", &[truth.len()], &[pred.len()]));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let n = pred.len() as f64;
    let mut pc: BTreeMap<A, usize> = BTreeMap::new();
    let mut tc: BTreeMap<B, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(A, B), usize> = BTreeMap::new();
    for (p, t) in pred.iter().zip(truth) {
        *pc.entry(p.clone()).or_default() += 1;
        *tc.entry(t.clone()).or_default() += 1;
        *joint.entry((p.clone(), t.clone())).or_default() += 1;
    }
    if pc.len() < 2 || tc.len() < 2 {
        return Ok(0.0);
    }
    let hp = entropy(pc.values().copied(), n);
    let ht = entropy(tc.values().copied(), n);
    let mut mi = 0.0;
    for ((p, t), &c) in &joint {
        let pxy = c as f64 / n;
        let px = pc[p] as f64 / n;
        let py = tc[t] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok((mi / (0.5 * (hp + ht))).clamp(0.0, 1.0))
}

/// Autocorrelation of a categorical sequence at `lag`: the summed covariance
/// of the per-state indicator series, normalised by their summed variance.
pub fn categorical_autocorrelation(seq: &[usize], lag: usize) -> f64 {
    let n = seq.len();
    if lag >= n {
        return 0.0;
    }
    let states = seq.iter().copied().max().map_or(0, |m| m + 1);
    let mut freq = vec![0.0; states];
    for &s in seq {
        freq[s] += 1.0;
    }
    for f in &mut freq {
        *f /= n as f64;
    }
    let var: f64 = freq.iter().map(|p| p * (1.0 - p)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let pairs = (n - lag) as f64;
    let same = (0..n - lag).filter(|&t| seq[t] == seq[t + lag]).count() as f64 / pairs;
    let expected: f64 = freq.iter().map(|p| p * p).sum();
    (same - expected) / var
}

/// Peak of the autocorrelation near an expected period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityReport {
    /// Lag of the highest autocorrelation within the search window.
    pub peak_lag: usize,
    pub peak_value: f64,
    /// Peak height over the lowest autocorrelation between half the period and the peak.
    pub prominence: f64,
}

/// Searches lags within `period ± tolerance` for the autocorrelation peak.
pub fn periodicity(seq: &[usize], period: usize, tolerance: usize) -> PeriodicityReport {
    let lo = period.saturating_sub(tolerance).max(1);
    let hi = period + tolerance;
    let (mut peak_lag, mut peak_value) = (lo, f64::NEG_INFINITY);
    for lag in lo..=hi {
        let v = categorical_autocorrelation(seq, lag);
        if v > peak_value {
            peak_value = v;
            peak_lag = lag;
        }
    }
    let trough = (peak_lag / 2..peak_lag)
        .map(|lag| categorical_autocorrelation(seq, lag))
        .fold(f64::INFINITY, f64::min);
    PeriodicityReport {
        peak_lag,
        peak_value,
        prominence: peak_value - trough.min(peak_value),
    }
}

/// States that occupy at least `min_share` of the sequence.
pub fn frequent_states(seq: &[usize], min_share: f64) -> Vec<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in seq {
        *counts.entry(s).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c as f64 >= min_share * seq.len() as f64)
        .map(|(s, _)| s)
        .collect()
}

pub fn switch_count<T: PartialEq>(seq: &[T]) -> usize {
    seq.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Relabels each predicted state with the true label it most often
/// coincides with (ties to the smallest label).
pub fn majority_map(pred: &[usize], truth: &[usize]) -> Vec<usize> {
    let mut votes: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *votes.entry(p).or_default().entry(t).or_default() += 1;
    }
    let map: BTreeMap<usize, usize> = votes
        .into_iter()
        .map(|(p, v)| {
            let best = v.iter().fold(
                (usize::MAX, 0usize),
                |acc, (&t, &c)| if c > acc.1 { (t, c) } else { acc },
            );
            (p, best.0)
        })
        .collect();
    pred.iter().map(|p| map[p]).collect()
}

/// Shift of the prediction relative to the truth that maximises agreement
/// after majority relabelling; positive values mean the prediction lags.
pub fn estimate_lag(pred: &[usize], truth: &[usize], max_lag: usize) -> Result<(i64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::shape("lag", &[truth.len()], &[pred.len()]));
    }
    let mapped = majority_map(pred, truth);
    let n = pred.len() as i64;
    let mut best = (0i64, f64::NEG_INFINITY);
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        let (mut hit, mut total) = (0usize, 0usize);
        for t in 0..n {
            let s = t - lag;
            if s >= 0 && s < n {
                total += 1;
                if mapped[t as usize] == truth[s as usize] {
                    hit += 1;
                }
            }
        }
        let agree = hit as f64 / total.max(1) as f64;
        if agree > best.1 || (agree == best.1 && lag.abs() < best.0.abs()) {
            best = (lag, agree);
        }
    }
    Ok(best)
}
