//! Test-set metrics: ROC AUC and demographic parity distance, plus seed
//! aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Probability that a random positive scores above a random negative, ties
/// counting one half. Computed from midranks (Mann-Whitney U).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::AucUndefined);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of doubled midranks of positives keeps everything integral
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share the midrank (i + j + 2) / 2
        let doubled_midrank = (i + j + 2) as u128;
        let tied_positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        doubled_rank_sum += doubled_midrank * tied_positives;
        i = j + 1;
    }
    let p = positives as u128;
    // 2U = sum(2 * rank) - p(p+1)
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// `|P(yhat = 1 | a = 1) - P(yhat = 1 | a = 0)|`.
pub fn delta_dp(predicted_labels: &[u8], protected: &[u8]) -> Result<f64> {
    if predicted_labels.len() != protected.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} protected values",
            predicted_labels.len(),
            protected.len()
        )));
    }
    let mut counts = [0usize; 2];
    let mut hits = [0usize; 2];
    for (&y, &a) in predicted_labels.iter().zip(protected) {
        let g = usize::from(a == 1);
        counts[g] += 1;
        hits[g] += usize::from(y == 1);
    }
    if counts.contains(&0) {
        return Err(Error::DpUndefined);
    }
    let rate = |g: usize| hits[g] as f64 / counts[g] as f64;
    Ok((rate(1) - rate(0)).abs())
}

pub fn threshold(probs: &[f64], cutoff: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= cutoff)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub auc: f64,
    pub delta_dp: f64,
}

/// AUC and DP of one model's test predictions.
pub fn evaluate(probs: &[f64], labels: &[u8], protected: &[u8], cutoff: f64) -> Result<(f64, f64)> {
    let auc = auc(probs, labels)?;
    let dp = delta_dp(&threshold(probs, cutoff), protected)?;
    Ok((auc, dp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub approach: String,
    pub eta: f64,
    pub per_seed: Vec<SeedMetrics>,
    pub mean_auc: f64,
    pub mean_delta_dp: f64,
    pub std_auc: f64,
    pub std_delta_dp: f64,
}

fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of each metric across seeds.
pub fn aggregate(approach: &str, eta: f64, per_seed: Vec<SeedMetrics>) -> Result<ExperimentResult> {
    if per_seed.is_empty() {
        return Err(Error::Empty("no per-seed results to aggregate".into()));
    }
    let aucs: Vec<f64> = per_seed.iter().map(|m| m.auc).collect();
    let dps: Vec<f64> = per_seed.iter().map(|m| m.delta_dp).collect();
    let (mean_auc, std_auc) = mean_and_population_std(&aucs);
    let (mean_delta_dp, std_delta_dp) = mean_and_population_std(&dps);
    Ok(ExperimentResult {
        approach: approach.to_string(),
        eta,
        per_seed,
        mean_auc,
        mean_delta_dp,
        std_auc,
        std_delta_dp,
    })
}
