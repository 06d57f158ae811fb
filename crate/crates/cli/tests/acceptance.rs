//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the test harness so the lines always show.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use kmproxy_core::store::{decode_binary, encode_binary};
use kmproxy_core::{
    class_balanced_split, decide, directional_overlap, gen_blobs, nearest_center_classify, scattered_centers,
    selective_metrics, BlobSpec, EmbeddingDataset, EmbeddingRecord, Metric, Policy, PredictionRecord, ProxyModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 7] = [
        ("overlap oracle equivalence", overlap_oracle),
        ("proxy mean equivalence", mean_equivalence),
        ("radius statistic", radius_statistic),
        ("ood rejection", ood_rejection),
        ("proxy factor trend", proxy_factor_trend),
        ("determinism and formats", determinism_and_formats),
        ("overlap performance", overlap_performance),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    }
}

fn dataset(name: &str, rows: Vec<(Vec<f32>, u32)>, num_classes: u32) -> EmbeddingDataset {
    let dim = rows[0].0.len();
    let records = rows
        .into_iter()
        .enumerate()
        .map(|(i, (vector, label))| EmbeddingRecord {
            id: format!("{name}-{i}"),
            label,
            vector,
        })
        .collect();
    EmbeddingDataset::new(name, dim, num_classes, records).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

// ---------------------------------------------------------------- overlap

/// Naive O(n^2) reference with its own self-exclusion and conventions.
fn naive_fraction(a: &[Vec<f32>], b: &[Vec<f32>], metric: Metric) -> f64 {
    let mut over = 0usize;
    for (i, x) in a.iter().enumerate() {
        let mut w = f64::INFINITY;
        for (j, y) in a.iter().enumerate() {
            if i != j {
                w = w.min(metric.distance(x, y).unwrap());
            }
        }
        let nb = b
            .iter()
            .map(|y| metric.distance(x, y).unwrap())
            .fold(f64::INFINITY, f64::min);
        let r = if nb == 0.0 {
            if w == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            w / nb
        };
        over += usize::from(r > 1.0);
    }
    over as f64 / a.len() as f64
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, grid: bool) -> Vec<Vec<f32>> {
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let v: Vec<f32> = (0..d)
            .map(|_| {
                if grid {
                    rng.random_range(-2i32..=2) as f32
                } else {
                    (3.0 * normal(rng)) as f32
                }
            })
            .collect();
        // cosine needs non-zero vectors
        if v.iter().any(|&x| x != 0.0) {
            rows.push(v);
        }
    }
    rows
}

fn overlap_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=8);
        let grid = seed % 3 == 0;
        let (na, nb) = (rng.random_range(2..=200), rng.random_range(2..=200));
        let a = random_rows(&mut rng, na, d, grid);
        let b = random_rows(&mut rng, nb, d, grid);
        let da = dataset("a", a.iter().map(|v| (v.clone(), 0)).collect(), 1);
        let db = dataset("b", b.iter().map(|v| (v.clone(), 0)).collect(), 1);
        for metric in [Metric::L2, Metric::Cosine] {
            let r = directional_overlap(&da, &db, metric, false).unwrap();
            let (pa, pb) = (naive_fraction(&a, &b, metric), naive_fraction(&b, &a, metric));
            compared += 1;
            if r.p_a != pa || r.p_b != pb {
                mismatches.push(format!("seed {seed} {metric}: ({}, {}) vs ({pa}, {pb})", r.p_a, r.p_b));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "{compared} pair/metric runs, {} mismatches{}, {:.2}s (limit 10s)",
            mismatches.len(),
            mismatches.first().map(|m| format!(" e.g. {m}")).unwrap_or_default(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------- proxy means

fn mean_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d = rng.random_range(1..=16);
        let c = rng.random_range(2..=4u32);
        let n = rng.random_range(c as usize * 5..=1000);
        // class means with every coordinate in [2, 10] in magnitude
        let means: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                (0..d)
                    .map(|_| rng.random_range(2.0..10.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        let spread = rng.random_range(0.5..3.0);
        let rows: Vec<(Vec<f32>, u32)> = (0..n)
            .map(|i| {
                let l = (i % c as usize) as u32;
                let v = means[l as usize]
                    .iter()
                    .map(|&m| (m + spread * normal(&mut rng)) as f32)
                    .collect();
                (v, l)
            })
            .collect();

        let model = ProxyModel::fit(1, &dataset("m", rows.clone(), c), Metric::L2).unwrap();
        for class in 0..c {
            let members: Vec<&Vec<f32>> = rows.iter().filter(|r| r.1 == class).map(|r| &r.0).collect();
            let mean: Vec<f64> = (0..d)
                .map(|k| members.iter().map(|v| v[k] as f64).sum::<f64>() / members.len() as f64)
                .collect();
            let center = model.center(class as usize);
            let err: f64 = center
                .iter()
                .zip(&mean)
                .map(|(&x, &m)| (x as f64 - m).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
            worst = worst.max(err / norm);
        }
    }
    outcome(
        worst <= 1e-5,
        format!("20 datasets, max relative center error {worst:.3e} (limit 1e-5)"),
    )
}

// ---------------------------------------------------------------- radius

fn radius_statistic() -> Outcome {
    let ds = gen_blobs(&BlobSpec {
        name: "radius".into(),
        num_classes: 1,
        clusters_per_class: 1,
        centers: vec![vec![0.0, 0.0]],
        spread: 1.0,
        n_per_cluster: 1000,
        dim: 2,
        seed: 7,
    })
    .unwrap();
    let model = ProxyModel::fit(1, &ds, Metric::L2).unwrap();
    let radius = model.radius(0).unwrap();

    // same-sample oracle: distances to the sample mean, population mean + sd
    let n = ds.len() as f64;
    let mean: Vec<f64> = (0..2)
        .map(|k| ds.records().iter().map(|r| r.vector[k] as f64).sum::<f64>() / n)
        .collect();
    let dists: Vec<f64> = ds
        .records()
        .iter()
        .map(|r| ((r.vector[0] as f64 - mean[0]).powi(2) + (r.vector[1] as f64 - mean[1]).powi(2)).sqrt())
        .collect();
    let mu = dists.iter().sum::<f64>() / n;
    let sd = (dists.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
    let oracle = mu + sd;
    // population analogue for a unit 2-d Gaussian: Rayleigh mean + sd
    let rayleigh = (std::f64::consts::PI / 2.0).sqrt() + ((4.0 - std::f64::consts::PI) / 2.0).sqrt();

    let agrees = (radius - oracle).abs() <= 1e-6;
    let in_range = (1.2..=1.6).contains(&radius);
    outcome(
        agrees && in_range,
        format!(
            "radius {radius:.6}; same-sample oracle {oracle:.6} (|diff| {:.1e}, limit 1e-6: {}); \
             population value {rayleigh:.4}; range [1.2, 1.6]: {}",
            (radius - oracle).abs(),
            if agrees { "ok" } else { "violated" },
            if in_range { "ok" } else { "violated" },
        ),
    )
}

// ------------------------------------------------------------------- ood

fn ood_rejection() -> Outcome {
    let start = Instant::now();
    let (d, sigma) = (8usize, 1.0f64);
    let mut worst_reject = 1.0f64;
    let mut f1_ok = true;
    let mut min_gap = f64::INFINITY;
    let mut sums = (0.0, 0.0);
    for seed in 0..10u64 {
        let centers = scattered_centers(2, d, 10.0, 0.0, seed);
        let ds = gen_blobs(&BlobSpec {
            name: format!("in{seed}"),
            num_classes: 2,
            clusters_per_class: 1,
            centers: centers.clone(),
            spread: sigma,
            n_per_cluster: 300,
            dim: d,
            seed,
        })
        .unwrap();
        let (train, test) = class_balanced_split(&ds, 0.7, seed).unwrap();
        let model = ProxyModel::fit(2, &train, Metric::L2).unwrap();
        let mut preds = nearest_center_classify(&train, &test, Metric::L2).unwrap();

        // far blob: 10 sigma from one training center in a random direction,
        // redrawn until every center is at least 10 sigma away
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (far, gap) = loop {
            let dir: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            let far: Vec<f32> = centers[0]
                .iter()
                .zip(&dir)
                .map(|(&c, x)| (c as f64 + 10.0 * sigma * x / len) as f32)
                .collect();
            let gap = centers
                .iter()
                .map(|c| Metric::L2.distance(c, &far).unwrap())
                .fold(f64::INFINITY, f64::min);
            if gap >= 10.0 * sigma {
                break (far, gap);
            }
        };
        min_gap = min_gap.min(gap / sigma);
        let far_ds = gen_blobs(&BlobSpec {
            name: format!("far{seed}"),
            num_classes: 2,
            clusters_per_class: 1,
            centers: vec![far.clone(), far],
            spread: sigma,
            n_per_cluster: 50,
            dim: d,
            seed: 900 + seed,
        })
        .unwrap();

        // far points carry truth 0 and an adversarial prediction of 1
        let mut records = test.records().to_vec();
        for r in far_ds.records() {
            records.push(EmbeddingRecord {
                id: r.id.clone(),
                label: 0,
                vector: r.vector.clone(),
            });
            preds.push(PredictionRecord {
                id: r.id.clone(),
                predicted_label: 1,
                score: None,
            });
        }
        let eval = EmbeddingDataset::new("ood-eval", d, 2, records).unwrap();

        let decisions = decide(&model, &eval, &preds, Policy::Either).unwrap();
        let with_reject = selective_metrics(&eval, &preds, &decisions).unwrap();
        let mut keep_all = decisions.clone();
        keep_all.iter_mut().for_each(|x| x.accepted = true);
        let without = selective_metrics(&eval, &preds, &keep_all).unwrap();

        let far_prefix = format!("far{seed}-");
        let far_dec: Vec<_> = decisions.iter().filter(|x| x.id.starts_with(&far_prefix)).collect();
        let rate = far_dec.iter().filter(|x| !x.accepted).count() as f64 / far_dec.len() as f64;
        worst_reject = worst_reject.min(rate);
        f1_ok &= with_reject.f1 >= without.f1;
        sums.0 += with_reject.f1;
        sums.1 += without.f1;
    }
    let elapsed = start.elapsed();
    let pass = worst_reject >= 0.95 && f1_ok && min_gap >= 10.0 && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "10 seeds, far blob centers >= {min_gap:.2} sigma from training clusters; min far-blob rejection {worst_reject:.3} (limit 0.95); \
             mean f1 {:.4} with reject vs {:.4} without, never lower: {f1_ok}; {:.1}s (limit 30s)",
            sums.0 / 10.0,
            sums.1 / 10.0,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------- proxy factor

fn proxy_factor_trend() -> Outcome {
    let seeds = 12u64;
    let (mut f1_k1, mut f1_k3, mut f1_base) = (0.0, 0.0, 0.0);
    let (mut cov_k1, mut cov_k3) = (0.0, 0.0);
    for seed in 0..seeds {
        let ds = gen_blobs(&BlobSpec {
            name: format!("mix{seed}"),
            num_classes: 3,
            clusters_per_class: 3,
            centers: scattered_centers(9, 4, 4.0, 0.0, 40 + seed),
            spread: 1.0,
            n_per_cluster: 150,
            dim: 4,
            seed,
        })
        .unwrap();
        let (train, test) = class_balanced_split(&ds, 0.7, seed).unwrap();
        let preds = nearest_center_classify(&train, &test, Metric::L2).unwrap();
        for (k, f1_sum, cov_sum) in [(1u32, &mut f1_k1, &mut cov_k1), (3, &mut f1_k3, &mut cov_k3)] {
            let model = ProxyModel::fit(k, &train, Metric::L2).unwrap();
            let decisions = decide(&model, &test, &preds, Policy::Either).unwrap();
            let r = selective_metrics(&test, &preds, &decisions).unwrap();
            *f1_sum += r.f1;
            *cov_sum += r.coverage;
        }
        let model = ProxyModel::fit(1, &train, Metric::L2).unwrap();
        let mut all = decide(&model, &test, &preds, Policy::Either).unwrap();
        all.iter_mut().for_each(|x| x.accepted = true);
        f1_base += selective_metrics(&test, &preds, &all).unwrap().f1;
    }
    let n = seeds as f64;
    outcome(
        f1_k3 >= f1_k1,
        format!(
            "{seeds} seeds, mean f1: k=3 {:.4} (coverage {:.3}) vs k=1 {:.4} (coverage {:.3}); no reject {:.4}",
            f1_k3 / n,
            cov_k3 / n,
            f1_k1 / n,
            cov_k1 / n,
            f1_base / n
        ),
    )
}

// ----------------------------------------------------------- determinism

fn kmproxy(dir: &Path, threads: &str, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_kmproxy"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads)
        .args(args)
        .output()
        .expect("spawn kmproxy");
    assert!(
        out.status.success(),
        "kmproxy {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Full pipeline in `dir`; returns every produced file's bytes by name.
fn pipeline(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let run = |args: &[&str]| kmproxy(dir, threads, args);
    for (name, shift, seed) in [("x", "0", "3"), ("y", "6", "4")] {
        let all = format!("{name}.embd");
        let (tr, te) = (format!("{name}-train.embd"), format!("{name}-test.embd"));
        run(&[
            "gen",
            "--classes",
            "3",
            "--per-class",
            "240",
            "--dim",
            "12",
            "--clusters-per-class",
            "2",
            "--seed",
            seed,
            "--center-seed",
            "1",
            "--shift",
            shift,
            "--out",
            &all,
        ]);
        run(&[
            "split",
            "--in",
            &all,
            "--train-out",
            &tr,
            "--test-out",
            &te,
            "--train-fraction",
            "0.75",
        ]);
        run(&["fit", "--k", "3", "--in", &tr, "--out", &format!("{name}.kmpx")]);
    }
    let mut manifest = serde_json::json!({"models": {}, "datasets": {}, "predictions": {}});
    for m in ["x", "y"] {
        manifest["models"][m] = serde_json::json!({"model": format!("{m}.kmpx"), "train": format!("{m}-train.embd")});
        manifest["datasets"][m] = serde_json::json!(format!("{m}-test.embd"));
        for e in ["x", "y"] {
            let p = format!("{m}-on-{e}.jsonl");
            run(&[
                "predict",
                "--train",
                &format!("{m}-train.embd"),
                "--eval",
                &format!("{e}-test.embd"),
                "--out",
                &p,
            ]);
            manifest["predictions"][m][e] = serde_json::json!(p);
        }
    }
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();
    run(&[
        "score",
        "--model",
        "x.kmpx",
        "--eval",
        "y-test.embd",
        "--preds",
        "x-on-y.jsonl",
        "--decisions",
        "dec.jsonl",
        "--report",
        "rep.json",
    ]);
    run(&[
        "overlap",
        "x-train.embd",
        "y-test.embd",
        "--metric",
        "cosine",
        "--out",
        "ov.json",
        "--per-point",
        "ov.tsv",
    ]);
    run(&[
        "eval",
        "--manifest",
        "manifest.json",
        "--out",
        "cm.json",
        "--table",
        "cm.txt",
    ]);

    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism_and_formats() -> Outcome {
    let runs: Vec<_> = [("1", 0), ("1", 1), ("8", 2)]
        .iter()
        .map(|&(threads, _)| {
            let dir = tempfile::tempdir().unwrap();
            (pipeline(dir.path(), threads), dir)
        })
        .collect();
    let base = &runs[0].0;
    let differing: Vec<String> = runs[1..]
        .iter()
        .flat_map(|(files, _)| {
            base.iter()
                .zip(files)
                .filter(|(a, b)| a != b)
                .map(|(a, _)| a.0.clone())
                .collect::<Vec<_>>()
        })
        .collect();
    let same_names = runs.iter().all(|(f, _)| f.len() == base.len());

    // format round trips on the produced artifacts
    let dir = runs[0].1.path();
    let embd = fs::read(dir.join("x.embd")).unwrap();
    let ds = decode_binary(&embd, "x").unwrap();
    let binary_ok = encode_binary(&ds).unwrap() == embd;
    kmproxy(dir, "1", &["convert", "--in", "x.embd", "--out", "x-rt.jsonl"]);
    kmproxy(dir, "1", &["convert", "--in", "x-rt.jsonl", "--out", "x-rt.embd"]);
    let jsonl_ok = fs::read(dir.join("x-rt.embd")).unwrap() == embd;
    let kmpx = fs::read(dir.join("x.kmpx")).unwrap();
    let model_ok = ProxyModel::from_bytes(&kmpx).unwrap().to_bytes() == kmpx;

    let pass = differing.is_empty() && same_names && binary_ok && jsonl_ok && model_ok;
    outcome(
        pass,
        format!(
            "{} files compared across 3 runs (threads 1, 1, 8), differing: {:?}; \
             binary round trip {binary_ok}, jsonl round trip {jsonl_ok}, model round trip {model_ok}",
            base.len(),
            differing
        ),
    )
}

// ----------------------------------------------------------- performance

fn overlap_performance() -> Outcome {
    let (n, d) = (10_000usize, 768usize);
    let make = |name: &str, seed: u64| {
        gen_blobs(&BlobSpec {
            name: name.into(),
            num_classes: 2,
            clusters_per_class: 1,
            centers: scattered_centers(2, d, 0.2, 0.0, seed),
            spread: 1.0,
            n_per_cluster: n / 2,
            dim: d,
            seed,
        })
        .unwrap()
    };
    let (a, b) = (make("a", 1), make("b", 2));
    let threads = rayon::current_num_threads();
    let mut parts = Vec::new();
    let mut pass = true;
    for metric in [Metric::L2, Metric::Cosine] {
        let start = Instant::now();
        let r = directional_overlap(&a, &b, metric, false).unwrap();
        let secs = start.elapsed().as_secs_f64();
        pass &= secs < 60.0;
        parts.push(format!("{metric} {secs:.1}s (O {:.3})", r.o_bidirectional));
    }
    outcome(
        pass,
        format!(
            "{n} x {n} at d={d}: {} on {threads} threads (limit 60s)",
            parts.join(", ")
        ),
    )
}
