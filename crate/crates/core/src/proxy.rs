//! KMeans-Proxy: `k` online k-means centers per class plus a coverage
//! radius per center.
//!
//! Training is class-constrained: a sample only moves centers of its own
//! class. Each class's first `k` distinct samples seed its centers; after
//! that every sample is assigned to the nearest seeded center of its class
//! and folded in with the running-mean update `c += (x - c) / n`.
//!
//! Finalizing makes a second pass over the training set against the final
//! centers and sets each center's radius to the mean plus one population
//! standard deviation of the distances assigned to it. Queries are global
//! over all active centers, since an unseen sample has no trusted label.
//!
//! Model file layout (little-endian, no padding):
//!
//! ```text
//! magic "KMPX" | version u32 = 1 | metric u8 | dim u32 | num_classes u32 | proxy_factor u32
//! centers: k*c*dim x f32
//! counts:  k*c x u64
//! per center: stats.count u64 | stats.mean f64 | stats.m2 f64 | radius f64 (NaN = none)
//! finalized u8
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::Cursor;
use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::stats::RunningStats;
use crate::store::EmbeddingDataset;

pub const MODEL_MAGIC: &[u8; 4] = b"KMPX";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ProxyModel {
    dim: usize,
    num_classes: u32,
    proxy_factor: u32,
    metric: Metric,
    centers: Vec<f32>,
    counts: Vec<u64>,
    radius_stats: Vec<RunningStats>,
    radii: Vec<Option<f64>>,
    finalized: bool,
}

/// Result of a nearest-proxy lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyQuery {
    pub proxy_index: usize,
    pub proxy_label: u32,
    pub distance: f64,
    pub radius: f64,
    pub within_radius: bool,
}

impl PartialEq for ProxyModel {
    fn eq(&self, other: &Self) -> bool {
        fn bits_f64(v: Option<f64>) -> Option<u64> {
            v.map(f64::to_bits)
        }
        self.dim == other.dim
            && self.num_classes == other.num_classes
            && self.proxy_factor == other.proxy_factor
            && self.metric == other.metric
            && self.finalized == other.finalized
            && self.counts == other.counts
            && self.centers.len() == other.centers.len()
            && self
                .centers
                .iter()
                .zip(&other.centers)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.radius_stats.iter().zip(&other.radius_stats).all(|(a, b)| {
                a.count == b.count && a.mean.to_bits() == b.mean.to_bits() && a.m2.to_bits() == b.m2.to_bits()
            })
            && self
                .radii
                .iter()
                .zip(&other.radii)
                .all(|(a, b)| bits_f64(*a) == bits_f64(*b))
    }
}

impl ProxyModel {
    pub fn new(proxy_factor: u32, num_classes: u32, dim: usize, metric: Metric) -> Result<Self> {
        if proxy_factor == 0 || num_classes == 0 || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "proxy_factor, num_classes and dim must be positive (got {proxy_factor}, {num_classes}, {dim})"
            )));
        }
        let n = proxy_factor as usize * num_classes as usize;
        Ok(Self {
            dim,
            num_classes,
            proxy_factor,
            metric,
            centers: vec![0.0; n * dim],
            counts: vec![0; n],
            radius_stats: vec![RunningStats::default(); n],
            radii: vec![None; n],
            finalized: false,
        })
    }

    /// Streams `train` in record order, then finalizes radii against it.
    pub fn fit(proxy_factor: u32, train: &EmbeddingDataset, metric: Metric) -> Result<Self> {
        train.ensure_all_classes_present()?;
        let mut model = Self::new(proxy_factor, train.num_classes(), train.dim(), metric)?;
        let batch: Vec<(&[f32], u32)> = train.records().iter().map(|r| (r.vector.as_slice(), r.label)).collect();
        model.update_proxies(&batch)?;
        model.finalize_radii(train)?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn proxy_factor(&self) -> u32 {
        self.proxy_factor
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn num_centers(&self) -> usize {
        self.counts.len()
    }

    pub fn center(&self, j: usize) -> &[f32] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn proxy_label(&self, j: usize) -> u32 {
        (j / self.proxy_factor as usize) as u32
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.counts[j] > 0
    }

    pub fn radius(&self, j: usize) -> Option<f64> {
        self.radii[j]
    }

    pub fn radius_stats(&self, j: usize) -> &RunningStats {
        &self.radius_stats[j]
    }

    fn class_range(&self, class: u32) -> std::ops::Range<usize> {
        let k = self.proxy_factor as usize;
        let start = class as usize * k;
        start..start + k
    }

    pub fn active_in_class(&self, class: u32) -> usize {
        self.class_range(class).filter(|&j| self.is_active(j)).count()
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_label(&self, label: u32) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Nearest active center of `class`, lowest index on ties.
    fn nearest_in_class(&self, x: &[f32], class: u32) -> Result<Option<(usize, f64)>> {
        let mut best: Option<(usize, f64)> = None;
        for j in self.class_range(class) {
            if !self.is_active(j) {
                continue;
            }
            let d = self.metric.distance(x, self.center(j))?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        Ok(best)
    }

    /// Processes `batch` in order. The whole batch is validated before any
    /// center moves.
    pub fn update_proxies(&mut self, batch: &[(&[f32], u32)]) -> Result<()> {
        if self.finalized {
            return Err(Error::AlreadyFinalized);
        }
        for &(x, label) in batch {
            self.check_dim(x)?;
            self.check_label(label)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite sample".into()));
            }
        }
        for &(x, label) in batch {
            self.update_one(x, label)?;
        }
        Ok(())
    }

    fn update_one(&mut self, x: &[f32], label: u32) -> Result<()> {
        let range = self.class_range(label);
        let duplicate_seed = range
            .clone()
            .find(|&j| self.is_active(j) && self.center(j).iter().zip(x).all(|(c, v)| c.to_bits() == v.to_bits()));
        if duplicate_seed.is_none() {
            if let Some(j) = range.clone().find(|&j| !self.is_active(j)) {
                let dim = self.dim;
                self.centers[j * dim..(j + 1) * dim].copy_from_slice(x);
                self.counts[j] = 1;
                return Ok(());
            }
        }
        let (j, _) = self
            .nearest_in_class(x, label)?
            .expect("class has at least one seeded center here");
        self.counts[j] += 1;
        let n = self.counts[j] as f64;
        let dim = self.dim;
        for (c, &v) in self.centers[j * dim..(j + 1) * dim].iter_mut().zip(x) {
            let cur = *c as f64;
            *c = (cur + (v as f64 - cur) / n) as f32;
        }
        Ok(())
    }

    /// Second pass over `train`: assigns each record to its nearest active
    /// center of the same class and sets `radius = mean + stddev` of the
    /// assigned distances. Active centers that receive no assignment get
    /// radius zero.
    pub fn finalize_radii(&mut self, train: &EmbeddingDataset) -> Result<()> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if train.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: train.dim(),
            });
        }
        if train.num_classes() != self.num_classes {
            return Err(Error::InvalidParameter(format!(
                "training set has {} classes, model has {}",
                train.num_classes(),
                self.num_classes
            )));
        }
        for class in 0..self.num_classes {
            if self.active_in_class(class) == 0 {
                return Err(Error::InactiveClass(class));
            }
        }

        let assignments: Vec<(usize, f64)> = train
            .records()
            .par_iter()
            .map(|r| {
                self.nearest_in_class(&r.vector, r.label)
                    .map(|a| a.expect("every class has an active center"))
            })
            .collect::<Result<_>>()?;

        let mut stats = vec![RunningStats::default(); self.num_centers()];
        for (j, d) in assignments {
            stats[j].push(d);
        }
        self.radii = stats
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if !self.is_active(j) {
                    None
                } else if s.count == 0 {
                    Some(0.0)
                } else {
                    Some(s.mean + s.population_stddev())
                }
            })
            .collect();
        self.radius_stats = stats;
        self.finalized = true;
        Ok(())
    }

    /// Globally nearest active center, lowest index on ties.
    pub fn nearest_proxy(&self, x: &[f32]) -> Result<ProxyQuery> {
        if !self.finalized {
            return Err(Error::NotFinalized);
        }
        self.check_dim(x)?;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.num_centers() {
            if !self.is_active(j) {
                continue;
            }
            let d = self.metric.distance(x, self.center(j))?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, distance) = best.ok_or(Error::InactiveClass(0))?;
        let radius = self.radii[j].expect("active centers of a finalized model have a radius");
        Ok(ProxyQuery {
            proxy_index: j,
            proxy_label: self.proxy_label(j),
            distance,
            radius,
            within_radius: distance <= radius,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.num_centers();
        let mut buf = Vec::with_capacity(32 + self.centers.len() * 4 + n * 40);
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.push(self.metric.tag());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&self.num_classes.to_le_bytes());
        buf.extend_from_slice(&self.proxy_factor.to_le_bytes());
        for c in &self.centers {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        for c in &self.counts {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        for (s, r) in self.radius_stats.iter().zip(&self.radii) {
            buf.extend_from_slice(&s.count.to_le_bytes());
            buf.extend_from_slice(&s.mean.to_le_bytes());
            buf.extend_from_slice(&s.m2.to_le_bytes());
            buf.extend_from_slice(&r.unwrap_or(f64::NAN).to_le_bytes());
        }
        buf.push(self.finalized as u8);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        cur.expect_magic(MODEL_MAGIC)?;
        let version = cur.u32().ok_or(Error::TruncatedHeader)?;
        if version != MODEL_VERSION {
            return Err(Error::Version(version));
        }
        let header = (|| Some((cur.u8()?, cur.u32()?, cur.u32()?, cur.u32()?)))();
        let (tag, dim, num_classes, proxy_factor) = header.ok_or(Error::TruncatedHeader)?;
        let metric =
            Metric::from_tag(tag).ok_or_else(|| Error::InvalidParameter(format!("unknown metric tag {tag}")))?;
        let mut model = Self::new(proxy_factor, num_classes, dim as usize, metric)?;
        let n = model.num_centers();
        let truncated = || Error::InvalidParameter("truncated model body".into());

        model.centers = cur.f32_vec(n * model.dim).ok_or_else(truncated)?;
        for c in model.counts.iter_mut() {
            *c = cur.u64().ok_or_else(truncated)?;
        }
        for j in 0..n {
            let (count, mean, m2, radius) =
                (|| Some((cur.u64()?, cur.f64()?, cur.f64()?, cur.f64()?)))().ok_or_else(truncated)?;
            model.radius_stats[j] = RunningStats { count, mean, m2 };
            model.radii[j] = if radius.is_nan() { None } else { Some(radius) };
        }
        model.finalized = match cur.u8().ok_or_else(truncated)? {
            0 => false,
            1 => true,
            other => return Err(Error::InvalidParameter(format!("bad finalized flag {other}"))),
        };
        if !cur.is_empty() {
            return Err(Error::InvalidParameter("trailing bytes after model".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
