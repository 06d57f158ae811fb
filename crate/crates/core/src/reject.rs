//! Reject policy: combine a classifier's prediction with the nearest proxy.
//!
//! A prediction carries two independent reject signals. `label_flip` fires
//! when the predicted label differs from the nearest proxy's class;
//! `out_of_radius` fires when the sample lies farther from that proxy than
//! its coverage radius. The policy decides which combination abstains.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proxy::ProxyModel;
use crate::store::EmbeddingDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(rename = "label")]
    pub predicted_label: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    LabelFlip,
    OutOfRadius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Reject on either signal.
    #[default]
    Either,
    /// Reject only when both signals fire.
    Both,
    FlipOnly,
    RadiusOnly,
}

impl Policy {
    pub fn accepts(self, label_flip: bool, out_of_radius: bool) -> bool {
        match self {
            Policy::Either => !(label_flip || out_of_radius),
            Policy::Both => !(label_flip && out_of_radius),
            Policy::FlipOnly => !label_flip,
            Policy::RadiusOnly => !out_of_radius,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Either => "either",
            Policy::Both => "both",
            Policy::FlipOnly => "flip_only",
            Policy::RadiusOnly => "radius_only",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "either" => Ok(Policy::Either),
            "both" => Ok(Policy::Both),
            "flip_only" => Ok(Policy::FlipOnly),
            "radius_only" => Ok(Policy::RadiusOnly),
            other => Err(Error::InvalidParameter(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectDecision {
    pub id: String,
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
    pub proxy_index: usize,
    pub proxy_label: u32,
    pub distance: f64,
    pub radius: f64,
}

/// One decision per prediction, in prediction order. `reasons` is always
/// fully populated; only `accepted` depends on `policy`.
pub fn decide(
    model: &ProxyModel,
    eval_ds: &EmbeddingDataset,
    preds: &[PredictionRecord],
    policy: Policy,
) -> Result<Vec<RejectDecision>> {
    if !model.is_finalized() {
        return Err(Error::NotFinalized);
    }
    if eval_ds.dim() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: eval_ds.dim(),
        });
    }
    let index: HashMap<&str, usize> = eval_ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let resolved: Vec<usize> = preds
        .iter()
        .map(|p| {
            if p.predicted_label >= model.num_classes() {
                return Err(Error::LabelOutOfRange {
                    label: p.predicted_label,
                    num_classes: model.num_classes(),
                });
            }
            index
                .get(p.id.as_str())
                .copied()
                .ok_or_else(|| Error::UnresolvedId(p.id.clone()))
        })
        .collect::<Result<_>>()?;

    preds
        .par_iter()
        .zip(resolved.par_iter())
        .map(|(p, &i)| {
            let q = model.nearest_proxy(&eval_ds.records()[i].vector)?;
            let mut reasons = Vec::with_capacity(2);
            let flip = p.predicted_label != q.proxy_label;
            if flip {
                reasons.push(RejectReason::LabelFlip);
            }
            if !q.within_radius {
                reasons.push(RejectReason::OutOfRadius);
            }
            Ok(RejectDecision {
                id: p.id.clone(),
                accepted: policy.accepts(flip, !q.within_radius),
                reasons,
                proxy_index: q.proxy_index,
                proxy_label: q.proxy_label,
                distance: q.distance,
                radius: q.radius,
            })
        })
        .collect()
}

/// Reads a JSONL file of `T`, one object per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: idx + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
