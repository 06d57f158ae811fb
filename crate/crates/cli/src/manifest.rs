//! JSON manifest for `eval`. Relative paths resolve against the manifest's
//! directory.
//!
//! ```json
//! {
//!   "models": { "a": { "model": "a.kmpx", "train": "a-train.embd" } },
//!   "datasets": { "a": "a-test.embd", "b": "b-test.embd" },
//!   "predictions": { "a": { "a": "a-on-a.jsonl", "b": "a-on-b.jsonl" } }
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use kmproxy_core::reject::read_jsonl;
use kmproxy_core::{EmbeddingDataset, PredictionRecord, ProxyModel, TrainedModel};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    models: BTreeMap<String, ModelEntry>,
    datasets: BTreeMap<String, PathBuf>,
    /// model name -> dataset name -> predictions file
    #[serde(default)]
    predictions: BTreeMap<String, BTreeMap<String, PathBuf>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    model: PathBuf,
    train: PathBuf,
}

pub struct Inputs {
    pub models: BTreeMap<String, TrainedModel>,
    pub evals: BTreeMap<String, EmbeddingDataset>,
    pub preds: BTreeMap<(String, String), Vec<PredictionRecord>>,
}

pub fn load(path: &Path) -> anyhow::Result<Inputs> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| base.join(p);

    let mut models = BTreeMap::new();
    for (name, entry) in &m.models {
        let model_path = resolve(&entry.model);
        let model = ProxyModel::load(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
        let train = crate::load(&resolve(&entry.train), Some(model.num_classes()))?;
        models.insert(name.clone(), TrainedModel { model, train });
    }

    let classes = models.values().map(|t| t.model.num_classes()).max();
    let mut evals = BTreeMap::new();
    for (name, p) in &m.datasets {
        let ds = crate::load(&resolve(p), classes)?;
        evals.insert(name.clone(), ds.with_name(name.clone()));
    }

    let mut preds = BTreeMap::new();
    for (model, row) in &m.predictions {
        for (dataset, p) in row {
            let p = resolve(p);
            let records: Vec<PredictionRecord> = read_jsonl(&p).with_context(|| format!("loading {}", p.display()))?;
            preds.insert((model.clone(), dataset.clone()), records);
        }
    }
    Ok(Inputs { models, evals, preds })
}
