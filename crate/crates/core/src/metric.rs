//! Distance metrics over `f32` embeddings with `f64` accumulation.
//!
//! Every distance in the crate goes through the kernels here, so two code
//! paths that compute the distance between the same pair of vectors produce
//! bit-identical results. Accumulation uses a fixed set of interleaved lanes
//! that are summed in a fixed order; the lane layout is part of the
//! expression and never depends on the caller.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Euclidean distance.
    L2,
    /// `1 - cos(x, y)`, clamped at zero.
    Cosine,
}

impl Metric {
    pub fn tag(self) -> u8 {
        match self {
            Metric::L2 => 0,
            Metric::Cosine => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Metric::L2),
            1 => Some(Metric::Cosine),
            _ => None,
        }
    }

    /// Distance between two vectors of equal length.
    ///
    /// Cosine distance of a zero vector is an error.
    pub fn distance(self, a: &[f32], b: &[f32]) -> Result<f64> {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::L2 => Ok(squared_l2(a, b).sqrt()),
            Metric::Cosine => {
                let na = squared_norm(a);
                let nb = squared_norm(b);
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::ZeroVector);
                }
                Ok(cosine_from_parts(dot(a, b), na, nb))
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// Sum of squared coordinate differences.
#[inline]
pub fn squared_l2<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            let d = xa[i].into() - xb[i].into();
            acc[i] += d * d;
        }
    }
    for (i, (&x, &y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        let d = x.into() - y.into();
        acc[i] += d * d;
    }
    reduce(acc)
}

#[inline]
pub fn dot<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            acc[i] += xa[i].into() * xb[i].into();
        }
    }
    for (i, (&x, &y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[i] += x.into() * y.into();
    }
    reduce(acc)
}

#[inline]
pub fn squared_norm<T: Copy + Into<f64>>(a: &[T]) -> f64 {
    dot(a, a)
}

/// [`squared_l2`] of one query against four references at once.
///
/// Each result is bit-identical to the single-pair kernel: the vector paths
/// perform the same per-lane subtract, multiply and add (no fused
/// multiply-add) and finish with the same remainder and reduction.
#[inline]
pub fn squared_l2_x4(q: &[f64], r: [&[f64]; 4]) -> [f64; 4] {
    blocked4(q, r, Term::SquaredDiff)
}

/// [`dot`] of one query against four references at once.
#[inline]
pub fn dot_x4(q: &[f64], r: [&[f64]; 4]) -> [f64; 4] {
    blocked4(q, r, Term::Product)
}

/// [`squared_l2`] for a 4x4 block of query and reference rows;
/// `out[a][p]` pairs query `a` with reference `p`.
#[inline]
pub fn squared_l2_4x4(q: [&[f64]; 4], r: [&[f64]; 4]) -> [[f64; 4]; 4] {
    block4x4(q, r, Term::SquaredDiff)
}

/// [`dot`] for a 4x4 block of query and reference rows.
#[inline]
pub fn dot_4x4(q: [&[f64]; 4], r: [&[f64]; 4]) -> [[f64; 4]; 4] {
    block4x4(q, r, Term::Product)
}

fn block4x4(q: [&[f64]; 4], r: [&[f64]; 4], term: Term) -> [[f64; 4]; 4] {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            let n = q[0].len();
            assert!(q.iter().chain(r.iter()).all(|x| x.len() == n));
            let full = n - n % LANES;
            let mut acc = [[[0.0f64; LANES]; 4]; 4];
            // SAFETY: feature checked above; all slices have length n.
            unsafe { simd::avx512_4x4(q, r, full, term, &mut acc) };
            let mut out = [[0.0; 4]; 4];
            for a in 0..4 {
                for p in 0..4 {
                    let lanes = &mut acc[a][p];
                    for i in 0..n - full {
                        lanes[i] += term.eval(q[a][full + i], r[p][full + i]);
                    }
                    out[a][p] = reduce(*lanes);
                }
            }
            return out;
        }
    }
    q.map(|qa| blocked4(qa, r, term))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Term {
    SquaredDiff,
    Product,
}

impl Term {
    #[inline(always)]
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            Term::SquaredDiff => {
                let d = a - b;
                d * d
            }
            Term::Product => a * b,
        }
    }
}

fn blocked4(q: &[f64], r: [&[f64]; 4], term: Term) -> [f64; 4] {
    let n = q.len();
    assert!(r.iter().all(|x| x.len() == n));
    let full = n - n % LANES;
    let mut acc = [[0.0f64; LANES]; 4];

    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature checked above; all slices have length n.
            unsafe { simd::avx512_4(q, r, full, term, &mut acc) };
        } else if std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: as above.
            unsafe { simd::avx_4(q, r, full, term, &mut acc) };
        } else {
            portable4(q, r, full, term, &mut acc);
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    portable4(q, r, full, term, &mut acc);

    for (p, a) in acc.iter_mut().enumerate() {
        for i in 0..n - full {
            a[i] += term.eval(q[full + i], r[p][full + i]);
        }
    }
    acc.map(reduce)
}

fn portable4(q: &[f64], r: [&[f64]; 4], full: usize, term: Term, acc: &mut [[f64; LANES]; 4]) {
    for off in (0..full).step_by(LANES) {
        for (p, a) in acc.iter_mut().enumerate() {
            for i in 0..LANES {
                a[i] += term.eval(q[off + i], r[p][off + i]);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    use super::{Term, LANES};

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn avx512_4(q: &[f64], r: [&[f64]; 4], full: usize, term: Term, acc: &mut [[f64; LANES]; 4]) {
        let mut a = [_mm512_setzero_pd(); 4];
        let mut off = 0;
        while off < full {
            let qv = _mm512_loadu_pd(q.as_ptr().add(off));
            for p in 0..4 {
                let rv = _mm512_loadu_pd(r[p].as_ptr().add(off));
                let t = match term {
                    Term::SquaredDiff => {
                        let d = _mm512_sub_pd(qv, rv);
                        _mm512_mul_pd(d, d)
                    }
                    Term::Product => _mm512_mul_pd(qv, rv),
                };
                a[p] = _mm512_add_pd(a[p], t);
            }
            off += LANES;
        }
        for p in 0..4 {
            _mm512_storeu_pd(acc[p].as_mut_ptr(), a[p]);
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn avx512_4x4(
        q: [&[f64]; 4],
        r: [&[f64]; 4],
        full: usize,
        term: Term,
        acc: &mut [[[f64; LANES]; 4]; 4],
    ) {
        let mut a = [[_mm512_setzero_pd(); 4]; 4];
        let mut off = 0;
        while off < full {
            let rv = [
                _mm512_loadu_pd(r[0].as_ptr().add(off)),
                _mm512_loadu_pd(r[1].as_ptr().add(off)),
                _mm512_loadu_pd(r[2].as_ptr().add(off)),
                _mm512_loadu_pd(r[3].as_ptr().add(off)),
            ];
            for qi in 0..4 {
                let qv = _mm512_loadu_pd(q[qi].as_ptr().add(off));
                for p in 0..4 {
                    let t = match term {
                        Term::SquaredDiff => {
                            let d = _mm512_sub_pd(qv, rv[p]);
                            _mm512_mul_pd(d, d)
                        }
                        Term::Product => _mm512_mul_pd(qv, rv[p]),
                    };
                    a[qi][p] = _mm512_add_pd(a[qi][p], t);
                }
            }
            off += LANES;
        }
        for qi in 0..4 {
            for p in 0..4 {
                _mm512_storeu_pd(acc[qi][p].as_mut_ptr(), a[qi][p]);
            }
        }
    }

    #[target_feature(enable = "avx")]
    pub(super) unsafe fn avx_4(q: &[f64], r: [&[f64]; 4], full: usize, term: Term, acc: &mut [[f64; LANES]; 4]) {
        let mut lo = [_mm256_setzero_pd(); 4];
        let mut hi = [_mm256_setzero_pd(); 4];
        let mut off = 0;
        while off < full {
            let ql = _mm256_loadu_pd(q.as_ptr().add(off));
            let qh = _mm256_loadu_pd(q.as_ptr().add(off + 4));
            for p in 0..4 {
                let rl = _mm256_loadu_pd(r[p].as_ptr().add(off));
                let rh = _mm256_loadu_pd(r[p].as_ptr().add(off + 4));
                let (tl, th) = match term {
                    Term::SquaredDiff => {
                        let dl = _mm256_sub_pd(ql, rl);
                        let dh = _mm256_sub_pd(qh, rh);
                        (_mm256_mul_pd(dl, dl), _mm256_mul_pd(dh, dh))
                    }
                    Term::Product => (_mm256_mul_pd(ql, rl), _mm256_mul_pd(qh, rh)),
                };
                lo[p] = _mm256_add_pd(lo[p], tl);
                hi[p] = _mm256_add_pd(hi[p], th);
            }
            off += LANES;
        }
        for p in 0..4 {
            _mm256_storeu_pd(acc[p].as_mut_ptr(), lo[p]);
            _mm256_storeu_pd(acc[p].as_mut_ptr().add(4), hi[p]);
        }
    }
}

/// Cosine distance from a dot product and the two squared norms.
///
/// `sqrt(na * na) == na` holds exactly in IEEE arithmetic, so a vector has
/// distance exactly zero to itself.
#[inline]
pub fn cosine_from_parts(dot: f64, sq_norm_a: f64, sq_norm_b: f64) -> f64 {
    let d = 1.0 - dot / (sq_norm_a * sq_norm_b).sqrt();
    if d > 0.0 {
        d
    } else {
        0.0
    }
}

#[inline]
fn reduce(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}
