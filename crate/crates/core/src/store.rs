//! Labeled embedding datasets and their two on-disk formats.
//!
//! JSONL: one `{"id": .., "label": .., "vector": [..]}` object per line.
//!
//! Binary (little-endian, no padding):
//!
//! ```text
//! magic "EMBD" | version u32 = 1 | dim u32 | num_classes u32 | count u64
//! per record: id_len u16 | id bytes (UTF-8) | label u32 | dim x f32
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Cursor;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"EMBD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub label: u32,
    pub vector: Vec<f32>,
}

/// An immutable, validated collection of labeled vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingDataset {
    name: String,
    dim: usize,
    num_classes: u32,
    records: Vec<EmbeddingRecord>,
}

/// Bit-level equality: vectors compare by their `f32` bit patterns.
impl PartialEq for EmbeddingDataset {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.dim == other.dim
            && self.num_classes == other.num_classes
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.id == b.id
                    && a.label == b.label
                    && a.vector.len() == b.vector.len()
                    && a.vector.iter().zip(&b.vector).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Overrides for values otherwise inferred while loading JSONL.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub dim: Option<usize>,
    pub num_classes: Option<u32>,
}

impl EmbeddingDataset {
    pub fn new(name: impl Into<String>, dim: usize, num_classes: u32, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidParameter("num_classes must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            validate_record(r, dim, num_classes)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            num_classes,
            records,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Record count per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize];
        for r in &self.records {
            counts[r.label as usize] += 1;
        }
        counts
    }

    /// Requirement for fitting: every class has at least one record.
    pub fn ensure_all_classes_present(&self) -> Result<()> {
        for (class, &count) in self.class_counts().iter().enumerate() {
            if count == 0 {
                return Err(Error::ClassTooSmall {
                    class: class as u32,
                    count,
                    needed: 1,
                });
            }
        }
        Ok(())
    }
}

fn validate_record(r: &EmbeddingRecord, dim: usize, num_classes: u32) -> Result<()> {
    if r.vector.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: r.vector.len(),
        });
    }
    if r.label >= num_classes {
        return Err(Error::LabelOutOfRange {
            label: r.label,
            num_classes,
        });
    }
    if let Some(index) = r.vector.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            id: r.id.clone(),
            index,
        });
    }
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>, name: &str, opts: LoadOptions) -> Result<EmbeddingDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut records: Vec<EmbeddingRecord> = Vec::new();
    let mut dim = opts.dim;
    let mut max_label = 0u32;
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        let expected = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != expected {
            return Err(Error::LineDimension {
                line: lineno,
                expected,
                got: rec.vector.len(),
            });
        }
        if let Some(index) = rec.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { id: rec.id, index });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        max_label = max_label.max(rec.label);
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = opts.num_classes.unwrap_or(max_label + 1);
    EmbeddingDataset::new(name, dim.unwrap_or(0), num_classes, records)
}

pub fn save_jsonl(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in ds.records() {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode_binary(ds: &EmbeddingDataset) -> Result<Vec<u8>> {
    let per_record = 2 + 4 + 4 * ds.dim;
    let mut buf = Vec::with_capacity(24 + ds.len() * (per_record + 16));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    buf.extend_from_slice(&ds.num_classes.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for r in ds.records() {
        let id = r.id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidParameter(format!("id {:?} longer than 65535 bytes", r.id)))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&r.label.to_le_bytes());
        for v in &r.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_binary(bytes: &[u8], name: &str) -> Result<EmbeddingDataset> {
    let mut cur = Cursor::new(bytes);
    cur.expect_magic(DATASET_MAGIC)?;
    let header = (|| -> Option<(u32, u32, u32, u64)> { Some((cur.u32()?, cur.u32()?, cur.u32()?, cur.u64()?)) })();
    let (version, dim, num_classes, count) = header.ok_or(Error::TruncatedHeader)?;
    if version != DATASET_VERSION {
        return Err(Error::Version(version));
    }
    let dim = dim as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for k in 0..count {
        let rec = (|| -> Option<std::result::Result<EmbeddingRecord, std::str::Utf8Error>> {
            let id_len = cur.u16()? as usize;
            let id = cur.bytes(id_len)?;
            let label = cur.u32()?;
            let vector = cur.f32_vec(dim)?;
            Some(std::str::from_utf8(id).map(|id| EmbeddingRecord {
                id: id.to_owned(),
                label,
                vector,
            }))
        })();
        match rec {
            None => return Err(Error::Truncated(k)),
            Some(Err(e)) => return Err(Error::InvalidParameter(format!("record {k}: id is not UTF-8: {e}"))),
            Some(Ok(r)) => records.push(r),
        }
    }
    if !cur.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} trailing bytes after {count} records",
            cur.remaining()
        )));
    }
    EmbeddingDataset::new(name, dim, num_classes, records)
}

pub fn save_binary(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_binary(ds)?)?;
    Ok(())
}

pub fn load_binary(path: impl AsRef<Path>, name: &str) -> Result<EmbeddingDataset> {
    decode_binary(&fs::read(path)?, name)
}

/// Loads either format, choosing JSONL for `.jsonl`/`.json` extensions and
/// binary otherwise. The dataset name defaults to the file stem.
pub fn load_any(path: impl AsRef<Path>, opts: LoadOptions) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if is_jsonl(path) {
        load_jsonl(path, &name, opts)
    } else {
        let ds = load_binary(path, &name)?;
        if let Some(d) = opts.dim {
            if d != ds.dim() {
                return Err(Error::Dimension {
                    expected: d,
                    got: ds.dim(),
                });
            }
        }
        match opts.num_classes {
            Some(c) if c != ds.num_classes() => {
                let dim = ds.dim();
                EmbeddingDataset::new(name, dim, c, ds.into_records())
            }
            _ => Ok(ds),
        }
    }
}

/// Saves in the format implied by the extension (see [`load_any`]).
pub fn save_any(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_jsonl(path) {
        save_jsonl(ds, path)
    } else {
        save_binary(ds, path)
    }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl") | Some("json"))
}

/// Splits every class independently: `floor(train_fraction * n_class)`
/// records of each class go to the train split, the rest to test.
///
/// Selection uses a ChaCha8 stream seeded with `seed`; each output split is
/// then shuffled with the same stream so downstream streaming fits do not
/// see records grouped by class.
pub fn class_balanced_split(
    ds: &EmbeddingDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = (0..ds.num_classes).map(|c| (c, Vec::new())).collect();
    for (i, r) in ds.records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    for (&class, idx) in &by_class {
        if idx.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                count: idx.len(),
                needed: 2,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).floor() as usize;
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);

    let take = |idx: &[usize], suffix: &str| EmbeddingDataset {
        name: format!("{}-{suffix}", ds.name),
        dim: ds.dim,
        num_classes: ds.num_classes,
        records: idx.iter().map(|&i| ds.records[i].clone()).collect(),
    };
    Ok((take(&train_idx, "train"), take(&test_idx, "test")))
}
