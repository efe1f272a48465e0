use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OodScores;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseCurvePoint {
    #[serde(rename = "T_s")]
    pub t_s: f64,
    #[serde(rename = "SDR")]
    pub sdr: f64,
    #[serde(rename = "FPR")]
    pub fpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(rename = "T_s")]
    pub threshold: f64,
    #[serde(rename = "TPR")]
    pub tpr: f64,
    #[serde(rename = "FPR")]
    pub fpr: f64,
}

/// Trapezoidal area under a set of ROC points, closed with (0,0) and (1,1).
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Area under the full ROC curve of a score where lower means "more anomalous":
/// the probability an OOD input scores below an in-distribution one, ties counting half.
pub fn auc_from_scores(scores: &OodScores) -> f64 {
    let mut ind = scores.in_dist.clone();
    ind.sort_by(f64::total_cmp);
    let n = ind.len() as f64;
    let mut total = 0.0;
    for &s in &scores.ood {
        let below = ind.partition_point(|&v| v < s);
        let not_above = ind.partition_point(|&v| v <= s);
        let above = ind.len() - not_above;
        total += above as f64 + 0.5 * (not_above - below) as f64;
    }
    total / (n * scores.ood.len() as f64)
}

pub fn write_defense_csv(points: &[DefenseCurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv(points: &[RocPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
