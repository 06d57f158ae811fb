//! Point-proximity overlap (O-metric) between two embedding datasets.
//!
//! For each `x` in A, `w` is the distance to the nearest *other* record of A
//! and `b` the distance to the nearest record of B. A point counts as
//! overlapped when `w / b > 1`, i.e. its nearest neighbour lies in B.
//! `p_a` is the overlapped fraction of A; `p_b` the same with the roles
//! swapped.
//!
//! Nearest neighbours are exact (brute force). Both sets are widened to
//! `f64` once and scanned in square tiles; each cross distance serves both
//! directions and each within-set distance both of its endpoints.

use std::io::Write;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::metric::{
    cosine_from_parts, dot, dot_4x4, dot_x4, squared_l2, squared_l2_4x4, squared_l2_x4, squared_norm, Metric,
};
use crate::store::EmbeddingDataset;

const BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRatio {
    pub id: String,
    pub w: f64,
    pub b: f64,
    #[serde(serialize_with = "ratio_json")]
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub p_a: f64,
    pub p_b: f64,
    pub o_bidirectional: f64,
    pub o_directional: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_point: Option<Vec<PointRatio>>,
}

/// JSON has no infinity; an unbounded ratio is written as the string "inf".
fn ratio_json<S: Serializer>(r: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if r.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*r)
    }
}

/// `w / b` with the coincident-point conventions: `b = 0, w > 0` is `+inf`,
/// `b = 0, w = 0` is exactly 1.
pub fn ratio(w: f64, b: f64) -> f64 {
    if b == 0.0 {
        if w > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    } else {
        w / b
    }
}

/// Row-major `f64` copy of a dataset plus squared norms.
struct Packed {
    dim: usize,
    rows: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl Packed {
    fn new(ds: &EmbeddingDataset, metric: Metric) -> Result<Self> {
        let dim = ds.dim();
        let mut rows = Vec::with_capacity(ds.len() * dim);
        for r in ds.records() {
            rows.extend(r.vector.iter().map(|&v| v as f64));
        }
        let sq_norms: Vec<f64> = rows.chunks_exact(dim).map(squared_norm).collect();
        if metric == Metric::Cosine && sq_norms.contains(&0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(Self { dim, rows, sq_norms })
    }

    fn len(&self) -> usize {
        self.sq_norms.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

/// Visits every `(query, reference)` pair of one tile with its comparison
/// value: squared distance for L2, distance for cosine.
fn scan_tile(
    queries: &Packed,
    qs: std::ops::Range<usize>,
    refs: &Packed,
    rs: std::ops::Range<usize>,
    metric: Metric,
    mut visit: impl FnMut(usize, usize, f64),
) {
    let q_full = qs.start + (qs.len() / 4) * 4;
    let r_full = rs.start + (rs.len() / 4) * 4;
    for q in (qs.start..q_full).step_by(4) {
        let qrows = [
            queries.row(q),
            queries.row(q + 1),
            queries.row(q + 2),
            queries.row(q + 3),
        ];
        for j in (rs.start..r_full).step_by(4) {
            let rrows = [refs.row(j), refs.row(j + 1), refs.row(j + 2), refs.row(j + 3)];
            match metric {
                Metric::L2 => {
                    for (a, row) in squared_l2_4x4(qrows, rrows).iter().enumerate() {
                        for (p, &v) in row.iter().enumerate() {
                            visit(q + a, j + p, v);
                        }
                    }
                }
                Metric::Cosine => {
                    for (a, row) in dot_4x4(qrows, rrows).iter().enumerate() {
                        for (p, &v) in row.iter().enumerate() {
                            let d = cosine_from_parts(v, queries.sq_norms[q + a], refs.sq_norms[j + p]);
                            visit(q + a, j + p, d);
                        }
                    }
                }
            }
        }
        for a in 0..4 {
            for j in r_full..rs.end {
                visit(q + a, j, pair_value(queries, q + a, refs, j, metric));
            }
        }
    }
    for q in q_full..qs.end {
        let mut j = rs.start;
        while j + 4 <= rs.end {
            let rrows = [refs.row(j), refs.row(j + 1), refs.row(j + 2), refs.row(j + 3)];
            let vals = match metric {
                Metric::L2 => squared_l2_x4(queries.row(q), rrows),
                Metric::Cosine => {
                    let dots = dot_x4(queries.row(q), rrows);
                    std::array::from_fn(|p| cosine_from_parts(dots[p], queries.sq_norms[q], refs.sq_norms[j + p]))
                }
            };
            for (p, &v) in vals.iter().enumerate() {
                visit(q, j + p, v);
            }
            j += 4;
        }
        for j in j..rs.end {
            visit(q, j, pair_value(queries, q, refs, j, metric));
        }
    }
}

fn pair_value(queries: &Packed, q: usize, refs: &Packed, j: usize, metric: Metric) -> f64 {
    match metric {
        Metric::L2 => squared_l2(queries.row(q), refs.row(j)),
        Metric::Cosine => cosine_from_parts(dot(queries.row(q), refs.row(j)), queries.sq_norms[q], refs.sq_norms[j]),
    }
}

fn finish(mut v: Vec<f64>, metric: Metric) -> Vec<f64> {
    // sqrt is monotone, so the root of the minimum squared distance is the
    // minimum distance.
    if metric == Metric::L2 {
        v.iter_mut().for_each(|x| *x = x.sqrt());
    }
    v
}

fn elementwise_min(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        if y < *x {
            *x = y;
        }
    }
    a
}

/// Nearest-neighbour distance of every row of `a` to every row of `b` and
/// vice versa, computing each cross distance once.
///
/// Work is split by row blocks of `a`; each task owns its row minima and
/// folds column minima into a private buffer. Minimum is exact and
/// order-independent, so the merge is deterministic under any schedule.
fn cross_nearest(a: &Packed, b: &Packed, metric: Metric) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (a.len(), b.len());
    let mut rows = vec![f64::INFINITY; na];
    let cols = rows
        .par_chunks_mut(BLOCK)
        .enumerate()
        .fold(
            || vec![f64::INFINITY; nb],
            |mut cols, (blk, row_min)| {
                let q0 = blk * BLOCK;
                for r0 in (0..nb).step_by(BLOCK) {
                    let rs = r0..(r0 + BLOCK).min(nb);
                    scan_tile(a, q0..q0 + row_min.len(), b, rs, metric, |i, j, v| {
                        if v < row_min[i - q0] {
                            row_min[i - q0] = v;
                        }
                        if v < cols[j] {
                            cols[j] = v;
                        }
                    });
                }
                cols
            },
        )
        .reduce(|| vec![f64::INFINITY; nb], elementwise_min);
    (finish(rows, metric), finish(cols, metric))
}

/// Distance from every row of `a` to its nearest *other* row, by index.
/// Only tiles on or above the block diagonal are computed; each distance
/// updates both endpoints.
fn within_nearest(a: &Packed, metric: Metric) -> Vec<f64> {
    let n = a.len();
    let mut rows = vec![f64::INFINITY; n];
    let cols = rows
        .par_chunks_mut(BLOCK)
        .enumerate()
        .fold(
            || vec![f64::INFINITY; n],
            |mut cols, (blk, row_min)| {
                let q0 = blk * BLOCK;
                for r0 in (q0..n).step_by(BLOCK) {
                    let rs = r0..(r0 + BLOCK).min(n);
                    scan_tile(a, q0..q0 + row_min.len(), a, rs, metric, |i, j, v| {
                        if i == j {
                            return;
                        }
                        if v < row_min[i - q0] {
                            row_min[i - q0] = v;
                        }
                        if v < cols[j] {
                            cols[j] = v;
                        }
                    });
                }
                cols
            },
        )
        .reduce(|| vec![f64::INFINITY; n], elementwise_min);
    finish(elementwise_min(rows, cols), metric)
}

fn check_pair(a: &EmbeddingDataset, b: &EmbeddingDataset) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "dataset {:?} needs at least 2 records for a within-set neighbour",
            a.name()
        )));
    }
    if b.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn point_ratios(a: &EmbeddingDataset, w: Vec<f64>, b: Vec<f64>) -> Vec<PointRatio> {
    a.records()
        .iter()
        .zip(w.into_iter().zip(b))
        .map(|(r, (w, b))| PointRatio {
            id: r.id.clone(),
            w,
            b,
            ratio: ratio(w, b),
        })
        .collect()
}

/// Per-point `(w, b, w / b)` for every record of `a`, in record order.
pub fn per_point_ratios(a: &EmbeddingDataset, b: &EmbeddingDataset, metric: Metric) -> Result<Vec<PointRatio>> {
    check_pair(a, b)?;
    let pa = Packed::new(a, metric)?;
    let pb = Packed::new(b, metric)?;
    let (to_b, _) = cross_nearest(&pa, &pb, metric);
    Ok(point_ratios(a, within_nearest(&pa, metric), to_b))
}

/// Fraction of ratios strictly greater than one.
pub fn overlap_fraction(ratios: &[PointRatio]) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().filter(|r| r.ratio > 1.0).count() as f64 / ratios.len() as f64
}

/// Both directions of the O-metric; `o_directional` is `p_a`, with A the
/// training set and B the unseen set.
pub fn directional_overlap(
    a: &EmbeddingDataset,
    b: &EmbeddingDataset,
    metric: Metric,
    keep_per_point: bool,
) -> Result<OverlapReport> {
    check_pair(a, b)?;
    check_pair(b, a)?;
    let pa = Packed::new(a, metric)?;
    let pb = Packed::new(b, metric)?;
    let (a_to_b, b_to_a) = cross_nearest(&pa, &pb, metric);
    let ra = point_ratios(a, within_nearest(&pa, metric), a_to_b);
    let rb = point_ratios(b, within_nearest(&pb, metric), b_to_a);
    let p_a = overlap_fraction(&ra);
    let p_b = overlap_fraction(&rb);
    Ok(OverlapReport {
        p_a,
        p_b,
        o_bidirectional: (p_a + p_b) / 2.0,
        o_directional: p_a,
        per_point: keep_per_point.then_some(ra),
    })
}

/// Tab-separated per-point dump with a header row.
pub fn write_ratios_tsv<W: Write>(mut w: W, ratios: &[PointRatio]) -> std::io::Result<()> {
    writeln!(w, "id\tw\tb\tratio")?;
    for r in ratios {
        writeln!(w, "{}\t{}\t{}\t{}", r.id, r.w, r.b, r.ratio)?;
    }
    Ok(())
}
