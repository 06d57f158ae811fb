//! Times directional overlap between two random 10k x 768 datasets.
//!
//! `cargo run --release -p kmproxy-core --example overlap_bench -- [n] [dim]`

use std::time::Instant;

use kmproxy_core::{directional_overlap, gen_blobs, BlobSpec, Metric};

fn main() -> kmproxy_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(10_000, |s| s.parse().expect("n"));
    let dim: usize = args.next().map_or(768, |s| s.parse().expect("dim"));
    let spec = |name: &str, shift: f32, seed| BlobSpec {
        name: name.into(),
        num_classes: 1,
        clusters_per_class: 1,
        centers: vec![vec![shift; dim]],
        spread: 1.0,
        n_per_cluster: n,
        dim,
        seed,
    };
    let a = gen_blobs(&spec("a", 0.0, 1))?;
    let b = gen_blobs(&spec("b", 0.05, 2))?;
    for metric in [Metric::L2, Metric::Cosine] {
        let t = Instant::now();
        let r = directional_overlap(&a, &b, metric, false)?;
        println!(
            "{metric}: p_a={:.4} p_b={:.4} in {:.2?} ({} threads)",
            r.p_a,
            r.p_b,
            t.elapsed(),
            rayon::current_num_threads()
        );
    }
    Ok(())
}
