//! Binary classification metrics from scores: ROC and precision-recall
//! curves, trapezoidal AUC, and the operating point nearest (0, 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub auc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: f64,
    /// Scores `>= threshold` are called positive.
    pub threshold: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    #[serde(skip)]
    pub roc_points: Vec<RocPoint>,
    #[serde(skip)]
    pub pr_points: Vec<PrPoint>,
}

/// ROC curve with one point per distinct score (descending), starting at
/// `(0, 0)` with threshold `+inf`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Vec<RocPoint> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let n = labels.len() as f64 - p;
    let mut pts = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push(RocPoint {
            threshold: s,
            fpr: fp / n,
            tpr: tp / p,
        });
    }
    pts
}

pub fn trapezoid_auc(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Full metric set. The operating threshold minimises the Euclidean
/// distance of the ROC point to `(0, 1)`; ties go to the higher threshold.
pub fn classification_metrics(scores: &[f64], labels: &[bool]) -> Result<ClassificationMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::dim(labels.len(), scores.len(), "scores vs labels"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidData("metrics need both outcome classes".into()));
    }
    let roc = roc_curve(scores, labels);
    let auc = trapezoid_auc(&roc);
    let best = roc[1..]
        .iter()
        .min_by(|a, b| {
            let da = a.fpr.powi(2) + (1.0 - a.tpr).powi(2);
            let db = b.fpr.powi(2) + (1.0 - b.tpr).powi(2);
            da.total_cmp(&db)
        })
        .expect("at least one score");
    let (pf, nf) = (n_pos as f64, n_neg as f64);
    let tp = best.tpr * pf;
    let fp = best.fpr * nf;
    let tn = nf - fp;
    let pr_points = roc[1..]
        .iter()
        .map(|r| {
            let tp = r.tpr * pf;
            let fp = r.fpr * nf;
            PrPoint {
                threshold: r.threshold,
                precision: tp / (tp + fp),
                recall: r.tpr,
            }
        })
        .collect();
    Ok(ClassificationMetrics {
        auc,
        accuracy: (tp + tn) / (pf + nf),
        sensitivity: best.tpr,
        specificity: 1.0 - best.fpr,
        ppv: if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 },
        threshold: best.threshold,
        n_positive: n_pos,
        n_negative: n_neg,
        roc_points: roc,
        pr_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let m = classification_metrics(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!((m.sensitivity, m.specificity, m.accuracy, m.ppv), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.threshold, 0.8);
    }

    #[test]
    fn all_tied_is_half() {
        let m = classification_metrics(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(m.auc, 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(classification_metrics(&[0.1, 0.2], &[true, true]).is_err());
    }
}
