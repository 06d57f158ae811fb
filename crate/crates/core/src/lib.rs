//! KMeans-Proxy reject option, O-metric dataset overlap and selective
//! classification evaluation over precomputed embeddings.
//!
//! * [`store`]: labeled embedding datasets, JSONL and binary formats, splits.
//! * [`proxy`]: `k` online k-means proxies per class with coverage radii.
//! * [`overlap`]: exact nearest-neighbour O-metric between two datasets.
//! * [`reject`], [`metrics`], [`cross`]: reject decisions, selective
//!   metrics and cross-dataset evaluation matrices.
//! * [`synth`]: seeded blob data and a nearest-centroid classifier.

mod codec;
pub mod cross;
pub mod error;
pub mod metric;
pub mod metrics;
pub mod overlap;
pub mod proxy;
pub mod reject;
pub mod stats;
pub mod store;
pub mod synth;

pub use cross::{cross_matrix, CrossCell, CrossMatrix, TrainedModel};
pub use error::{Error, Result};
pub use metric::Metric;
pub use metrics::{selective_metrics, SelectiveReport};
pub use overlap::{directional_overlap, per_point_ratios, OverlapReport, PointRatio};
pub use proxy::{ProxyModel, ProxyQuery};
pub use reject::{decide, Policy, PredictionRecord, RejectDecision, RejectReason};
pub use store::{class_balanced_split, EmbeddingDataset, EmbeddingRecord, LoadOptions};
pub use synth::{gen_blobs, nearest_center_classify, scattered_centers, BlobSpec};
