//! Seeded Gaussian blob datasets and a nearest-centroid classifier, so the
//! whole pipeline runs without an external encoder or model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::reject::PredictionRecord;
use crate::store::{EmbeddingDataset, EmbeddingRecord};

/// `centers` lists `num_classes * clusters_per_class` cluster centers; center
/// `i` belongs to class `i / clusters_per_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub name: String,
    pub num_classes: u32,
    pub clusters_per_class: usize,
    pub centers: Vec<Vec<f32>>,
    pub spread: f64,
    pub n_per_cluster: usize,
    pub dim: usize,
    pub seed: u64,
}

pub fn gen_blobs(spec: &BlobSpec) -> Result<EmbeddingDataset> {
    let invalid = |msg: String| Err(Error::InvalidParameter(msg));
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return invalid(format!("spread must be positive, got {}", spec.spread));
    }
    if spec.num_classes == 0 || spec.clusters_per_class == 0 || spec.n_per_cluster == 0 || spec.dim == 0 {
        return invalid("num_classes, clusters_per_class, n_per_cluster and dim must be positive".into());
    }
    let expected = spec.num_classes as usize * spec.clusters_per_class;
    if spec.centers.len() != expected {
        return invalid(format!("expected {expected} centers, got {}", spec.centers.len()));
    }
    if let Some(c) = spec.centers.iter().find(|c| c.len() != spec.dim) {
        return invalid(format!("center of length {} in a {}-dim spec", c.len(), spec.dim));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(expected * spec.n_per_cluster);
    for (ci, center) in spec.centers.iter().enumerate() {
        let label = (ci / spec.clusters_per_class) as u32;
        for _ in 0..spec.n_per_cluster {
            let vector = center
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (m as f64 + spec.spread * z) as f32
                })
                .collect();
            records.push(EmbeddingRecord {
                id: format!("{}-{}", spec.name, records.len()),
                label,
                vector,
            });
        }
    }
    EmbeddingDataset::new(spec.name.clone(), spec.dim, spec.num_classes, records)
}

/// `count` centers with coordinates drawn from `N(0, scale^2)` plus `shift`.
/// Uses a ChaCha8 stream distinct from the one [`gen_blobs`] samples with, so
/// the same seed can drive both.
pub fn scattered_centers(count: usize, dim: usize, scale: f64, shift: f64, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (shift + scale * z) as f32
                })
                .collect()
        })
        .collect()
}

/// Per-class mean vectors, accumulated in `f64`.
pub fn class_centroids(train: &EmbeddingDataset) -> Result<Vec<Vec<f32>>> {
    let c = train.num_classes() as usize;
    let mut sums = vec![vec![0.0f64; train.dim()]; c];
    let mut counts = vec![0usize; c];
    for r in train.records() {
        counts[r.label as usize] += 1;
        for (s, &v) in sums[r.label as usize].iter_mut().zip(&r.vector) {
            *s += v as f64;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(k, (s, n))| {
            if n == 0 {
                return Err(Error::ClassTooSmall {
                    class: k as u32,
                    count: 0,
                    needed: 1,
                });
            }
            Ok(s.into_iter().map(|v| (v / n as f64) as f32).collect())
        })
        .collect()
}

/// Predicts the class whose training centroid is nearest, lowest class
/// index on ties.
pub fn nearest_center_classify(
    train: &EmbeddingDataset,
    eval: &EmbeddingDataset,
    metric: Metric,
) -> Result<Vec<PredictionRecord>> {
    if train.dim() != eval.dim() {
        return Err(Error::Dimension {
            expected: train.dim(),
            got: eval.dim(),
        });
    }
    let centroids = class_centroids(train)?;
    eval.records()
        .iter()
        .map(|r| {
            let mut best = (0u32, f64::INFINITY);
            for (k, c) in centroids.iter().enumerate() {
                let d = metric.distance(&r.vector, c)?;
                if d < best.1 {
                    best = (k as u32, d);
                }
            }
            Ok(PredictionRecord {
                id: r.id.clone(),
                predicted_label: best.0,
                score: None,
            })
        })
        .collect()
}
