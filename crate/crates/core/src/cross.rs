//! Cross-dataset evaluation: every trained model against every evaluation
//! set, with selective metrics and directional overlap per cell.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::metrics::{selective_metrics, SelectiveReport};
use crate::overlap::directional_overlap;
use crate::proxy::ProxyModel;
use crate::reject::{decide, Policy, PredictionRecord};
use crate::store::EmbeddingDataset;

/// A finalized model together with the dataset it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: ProxyModel,
    pub train: EmbeddingDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCell {
    pub train: String,
    pub eval: String,
    pub report: SelectiveReport,
    pub o_directional: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub policy: Policy,
    pub overlap_metric: Metric,
    /// Row-major: `cells[i * cols.len() + j]` is (rows[i], cols[j]).
    pub cells: Vec<CrossCell>,
}

impl CrossMatrix {
    pub fn cell(&self, train: &str, eval: &str) -> Option<&CrossCell> {
        self.cells.iter().find(|c| c.train == train && c.eval == eval)
    }

    /// Aligned text table with one row per evaluation set and an
    /// `f1 / cov / O` column group per trained model.
    pub fn to_table(&self) -> String {
        let mut header = vec!["testing".to_owned()];
        for m in &self.rows {
            header.push(format!("{m}:f1"));
            header.push(format!("{m}:cov"));
            header.push(format!("{m}:O"));
        }
        let mut lines = vec![header];
        for (j, eval) in self.cols.iter().enumerate() {
            let mut line = vec![eval.clone()];
            for i in 0..self.rows.len() {
                let c = &self.cells[i * self.cols.len() + j];
                line.push(format!("{:.4}", c.report.f1));
                line.push(format!("{:.4}", c.report.coverage));
                line.push(format!("{:.4}", c.o_directional));
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|k| lines.iter().map(|l| l[k].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let mut row = String::new();
            for (k, cell) in line.iter().enumerate() {
                if k == 0 {
                    let _ = write!(row, "{cell:<w$}", w = widths[k]);
                } else {
                    let _ = write!(row, "  {cell:>w$}", w = widths[k]);
                }
            }
            out.push_str(row.trim_end());
            out.push('\n');
        }
        out
    }
}

/// Evaluates every `(model, eval set)` pair. Predictions are keyed by
/// `(model name, eval name)`; a missing key is an error naming the pair.
/// Overlap is measured with the training set as A and the eval set as B.
pub fn cross_matrix(
    models: &BTreeMap<String, TrainedModel>,
    evals: &BTreeMap<String, EmbeddingDataset>,
    preds: &BTreeMap<(String, String), Vec<PredictionRecord>>,
    policy: Policy,
    overlap_metric: Metric,
) -> Result<CrossMatrix> {
    let mut pairs = Vec::with_capacity(models.len() * evals.len());
    for (m, tm) in models {
        if !tm.model.is_finalized() {
            return Err(Error::NotFinalized);
        }
        for e in evals.keys() {
            let key = (m.clone(), e.clone());
            let p = preds.get(&key).ok_or_else(|| Error::MissingPair {
                train: m.clone(),
                eval: e.clone(),
            })?;
            pairs.push((m, e, p));
        }
    }

    let cells = pairs
        .into_par_iter()
        .map(|(m, e, p)| {
            let tm = &models[m];
            let eval = &evals[e];
            let decisions = decide(&tm.model, eval, p, policy)?;
            let report = selective_metrics(eval, p, &decisions)?;
            let overlap = directional_overlap(&tm.train, eval, overlap_metric, false)?;
            Ok(CrossCell {
                train: m.clone(),
                eval: e.clone(),
                report,
                o_directional: overlap.o_directional,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CrossMatrix {
        rows: models.keys().cloned().collect(),
        cols: evals.keys().cloned().collect(),
        policy,
        overlap_metric,
        cells,
    })
}
