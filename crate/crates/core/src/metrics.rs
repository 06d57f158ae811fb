//! Selective classification metrics: macro precision, recall and f1 over
//! the accepted predictions only, reported together with coverage.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::reject::{PredictionRecord, RejectDecision};
use crate::store::EmbeddingDataset;

pub const NO_ACCEPTED_WARNING: &str = "no accepted samples; f1 undefined, reported as 0";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectiveReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub coverage: f64,
    pub total: usize,
    pub accepted: usize,
    pub rejected_count: usize,
    pub per_class_f1: Vec<f64>,
    /// `confusion[truth][predicted]` over accepted samples.
    pub confusion: Vec<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Macro-averaged scores from a confusion matrix. Per-class ratios with a
/// zero denominator count as 0, so a class absent from both truth and
/// predictions contributes 0 to every average.
pub fn macro_scores(confusion: &[Vec<u64>]) -> (Vec<f64>, f64, f64, f64) {
    let c = confusion.len();
    let mut f1s = Vec::with_capacity(c);
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for k in 0..c {
        let tp = confusion[k][k] as f64;
        let fn_ = confusion[k].iter().sum::<u64>() as f64 - tp;
        let fp = confusion.iter().map(|row| row[k]).sum::<u64>() as f64 - tp;
        let div = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
        p_sum += div(tp, tp + fp);
        r_sum += div(tp, tp + fn_);
        f1s.push(div(2.0 * tp, 2.0 * tp + fp + fn_));
    }
    let n = c.max(1) as f64;
    let f1 = f1s.iter().sum::<f64>() / n;
    (f1s, f1, p_sum / n, r_sum / n)
}

/// Scores accepted predictions against `truth`. `preds` and `decisions`
/// must list the same ids in the same order.
pub fn selective_metrics(
    truth: &EmbeddingDataset,
    preds: &[PredictionRecord],
    decisions: &[RejectDecision],
) -> Result<SelectiveReport> {
    if preds.len() != decisions.len() {
        return Err(Error::Misaligned(format!(
            "{} predictions but {} decisions",
            preds.len(),
            decisions.len()
        )));
    }
    let labels: HashMap<&str, u32> = truth.records().iter().map(|r| (r.id.as_str(), r.label)).collect();
    let c = truth.num_classes() as usize;
    let mut confusion = vec![vec![0u64; c]; c];
    let mut accepted = 0usize;
    for (i, (p, d)) in preds.iter().zip(decisions).enumerate() {
        if p.id != d.id {
            return Err(Error::Misaligned(format!(
                "position {i}: prediction {:?} vs decision {:?}",
                p.id, d.id
            )));
        }
        let &t = labels
            .get(p.id.as_str())
            .ok_or_else(|| Error::UnresolvedId(p.id.clone()))?;
        if p.predicted_label as usize >= c {
            return Err(Error::LabelOutOfRange {
                label: p.predicted_label,
                num_classes: c as u32,
            });
        }
        if d.accepted {
            accepted += 1;
            confusion[t as usize][p.predicted_label as usize] += 1;
        }
    }

    let total = preds.len();
    if accepted == 0 {
        return Ok(SelectiveReport {
            f1: 0.0,
            precision: 0.0,
            recall: 0.0,
            coverage: 0.0,
            total,
            accepted: 0,
            rejected_count: total,
            per_class_f1: vec![0.0; c],
            confusion,
            warning: Some(NO_ACCEPTED_WARNING.to_owned()),
        });
    }
    let (per_class_f1, f1, precision, recall) = macro_scores(&confusion);
    Ok(SelectiveReport {
        f1,
        precision,
        recall,
        coverage: accepted as f64 / total as f64,
        total,
        accepted,
        rejected_count: total - accepted,
        per_class_f1,
        confusion,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::EmbeddingRecord;

    fn truth(labels: &[u32]) -> EmbeddingDataset {
        EmbeddingDataset::new(
            "truth",
            1,
            2,
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| EmbeddingRecord {
                    id: format!("s{i}"),
                    label: l,
                    vector: vec![i as f32],
                })
                .collect(),
        )
        .unwrap()
    }

    fn inputs(pred: &[u32], accepted: &[bool]) -> (Vec<PredictionRecord>, Vec<RejectDecision>) {
        let preds = pred
            .iter()
            .enumerate()
            .map(|(i, &l)| PredictionRecord {
                id: format!("s{i}"),
                predicted_label: l,
                score: None,
            })
            .collect();
        let decisions = accepted
            .iter()
            .enumerate()
            .map(|(i, &a)| RejectDecision {
                id: format!("s{i}"),
                accepted: a,
                reasons: vec![],
                proxy_index: 0,
                proxy_label: 0,
                distance: 0.0,
                radius: 0.0,
            })
            .collect();
        (preds, decisions)
    }

    #[test]
    fn binary_all_accepted() {
        // class 1: tp 1, fn 1 -> f1 2/3; class 0: tp 2, fp 1 -> f1 4/5
        let t = truth(&[1, 1, 0, 0]);
        let (p, d) = inputs(&[1, 0, 0, 0], &[true; 4]);
        let r = selective_metrics(&t, &p, &d).unwrap();
        assert!((r.per_class_f1[0] - 0.8).abs() < 1e-12);
        assert!((r.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 0.733_333_333_333).abs() < 1e-9);
        assert_eq!(r.coverage, 1.0);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![1, 1]]);
        // precision: class 0 = 2/3, class 1 = 1; recall: class 0 = 1, class 1 = 1/2
        assert!((r.precision - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert!((r.recall - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rejecting_the_error() {
        let t = truth(&[1, 1, 0, 0]);
        let (p, d) = inputs(&[1, 0, 0, 0], &[true, false, true, true]);
        let r = selective_metrics(&t, &p, &d).unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.coverage, 0.75);
        assert_eq!((r.accepted, r.rejected_count), (3, 1));
    }

    #[test]
    fn all_rejected() {
        let t = truth(&[1, 0]);
        let (p, d) = inputs(&[1, 0], &[false, false]);
        let r = selective_metrics(&t, &p, &d).unwrap();
        assert_eq!((r.f1, r.coverage), (0.0, 0.0));
        assert_eq!(r.warning.as_deref(), Some(NO_ACCEPTED_WARNING));
    }

    #[test]
    fn absent_class_contributes_zero() {
        let t = truth(&[0, 0]);
        let (p, d) = inputs(&[0, 0], &[true, true]);
        let r = selective_metrics(&t, &p, &d).unwrap();
        assert_eq!(r.per_class_f1, vec![1.0, 0.0]);
        assert_eq!(r.f1, 0.5);
    }

    #[test]
    fn misalignment_errors() {
        let t = truth(&[0, 1]);
        let (p, mut d) = inputs(&[0, 1], &[true, true]);
        d.swap(0, 1);
        assert!(matches!(selective_metrics(&t, &p, &d), Err(Error::Misaligned(_))));
        assert!(matches!(selective_metrics(&t, &p, &d[..1]), Err(Error::Misaligned(_))));
        let (mut p, d) = inputs(&[0, 1], &[true, true]);
        p[1].id = "zz".into();
        let mut d = d;
        d[1].id = "zz".into();
        assert!(matches!(selective_metrics(&t, &p, &d), Err(Error::UnresolvedId(_))));
    }
}
