//! `kmproxy`: generate data, fit proxies, score with rejection, measure
//! dataset overlap and run cross-dataset evaluations.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or
//! invariant error.

mod manifest;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use kmproxy_core::overlap::write_ratios_tsv;
use kmproxy_core::reject::{read_jsonl, write_jsonl};
use kmproxy_core::store::{load_any, save_any};
use kmproxy_core::{
    class_balanced_split, cross_matrix, decide, directional_overlap, gen_blobs, nearest_center_classify,
    scattered_centers, selective_metrics, BlobSpec, EmbeddingDataset, LoadOptions, Metric, Policy, PredictionRecord,
    ProxyModel,
};
use serde::Serialize;

const DEFAULT_SEED: u64 = 20_240_501;

#[derive(Parser)]
#[command(
    name = "kmproxy",
    version,
    about = "KMeans-Proxy reject option and dataset overlap toolkit"
)]
struct Cli {
    /// Worker threads (defaults to the number of hardware threads).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded Gaussian blob dataset.
    Gen(GenArgs),
    /// Convert a dataset between JSONL and binary.
    Convert(ConvertArgs),
    /// Class-balanced train/test split.
    Split(SplitArgs),
    /// Fit a proxy model on a training dataset.
    Fit(FitArgs),
    /// Nearest-centroid predictions for an evaluation dataset.
    Predict(PredictArgs),
    /// Apply the reject policy to predictions and report selective metrics.
    Score(ScoreArgs),
    /// O-metric overlap between two datasets.
    Overlap(OverlapArgs),
    /// Cross-dataset evaluation driven by a JSON manifest.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    classes: u32,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    per_class: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    dim: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Gaussian clusters per class; samples split evenly between them.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    clusters_per_class: u64,
    /// Per-cluster standard deviation.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    spread: f64,
    /// Standard deviation of the cluster center coordinates.
    #[arg(long, default_value_t = 10.0, value_parser = positive)]
    separation: f64,
    /// Constant added to every center coordinate.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    shift: f64,
    /// Seed for center placement (defaults to --seed).
    #[arg(long)]
    center_seed: Option<u64>,
    /// Dataset name used for record ids (defaults to the output file stem).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    classes: Option<u32>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    #[arg(long, default_value_t = 0.8, value_parser = open_unit)]
    train_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    classes: Option<u32>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Proxies per class.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    /// Number of classes (defaults to the dataset's).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    classes: Option<u32>,
    #[arg(long, default_value_t = Metric::L2)]
    metric: Metric,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = Metric::L2)]
    metric: Metric,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    /// Decisions JSONL output.
    #[arg(long)]
    decisions: PathBuf,
    /// Selective metrics JSON output.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = Policy::Either)]
    policy: Policy,
}

#[derive(Args)]
struct OverlapArgs {
    /// Dataset A (the training side of the directional form).
    a: PathBuf,
    /// Dataset B.
    b: PathBuf,
    #[arg(long, default_value_t = Metric::L2)]
    metric: Metric,
    /// Report JSON output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-point ratios of A as TSV.
    #[arg(long)]
    per_point: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Cross matrix JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Text table output; printed to stdout when absent.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value_t = Policy::Either)]
    policy: Policy,
    /// Metric for the overlap column.
    #[arg(long, default_value_t = Metric::L2)]
    metric: Metric,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a value in (0, 1), got {s:?}")),
    }
}

/// A failure carrying its exit code.
struct Fail {
    code: u8,
    err: anyhow::Error,
}

impl Fail {
    fn usage(err: anyhow::Error) -> Self {
        Fail { code: 2, err }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Fail {
    fn from(e: E) -> Self {
        Fail { code: 3, err: e.into() }
    }
}

type CliResult = Result<(), Fail>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(Fail::usage(anyhow!("cannot start {n} worker threads: {e}"))),
        },
        None => run(cli.command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Convert(a) => convert(a),
        Command::Split(a) => split(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Score(a) => score(a),
        Command::Overlap(a) => overlap(a),
        Command::Eval(a) => eval(a),
    }
}

fn load(path: &Path, num_classes: Option<u32>) -> anyhow::Result<EmbeddingDataset> {
    load_any(path, LoadOptions { dim: None, num_classes }).with_context(|| format!("loading {}", path.display()))
}

fn save(ds: &EmbeddingDataset, path: &Path) -> anyhow::Result<()> {
    save_any(ds, path).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn gen(a: GenArgs) -> CliResult {
    let name = a
        .name
        .or_else(|| a.out.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "blobs".into());
    let clusters = a.clusters_per_class as usize;
    let n_per_cluster = a.per_class as usize / clusters;
    if n_per_cluster == 0 {
        return Err(Fail::usage(anyhow!(
            "--per-class {} is smaller than --clusters-per-class {clusters}",
            a.per_class
        )));
    }
    let spec = BlobSpec {
        name,
        num_classes: a.classes,
        clusters_per_class: clusters,
        centers: scattered_centers(
            a.classes as usize * clusters,
            a.dim as usize,
            a.separation,
            a.shift,
            a.center_seed.unwrap_or(a.seed),
        ),
        spread: a.spread,
        n_per_cluster,
        dim: a.dim as usize,
        seed: a.seed,
    };
    let ds = gen_blobs(&spec).map_err(|e| Fail::usage(e.into()))?;
    save(&ds, &a.out)?;
    println!(
        "wrote {} records ({} classes, dim {}) to {}",
        ds.len(),
        a.classes,
        a.dim,
        a.out.display()
    );
    Ok(())
}

fn convert(a: ConvertArgs) -> CliResult {
    let ds = load(&a.input, a.classes)?;
    save(&ds, &a.out)?;
    println!("wrote {} records to {}", ds.len(), a.out.display());
    Ok(())
}

fn split(a: SplitArgs) -> CliResult {
    let ds = load(&a.input, a.classes)?;
    let (train, test) = class_balanced_split(&ds, a.train_fraction, a.seed)?;
    save(&train, &a.train_out)?;
    save(&test, &a.test_out)?;
    println!("train {} records, test {} records", train.len(), test.len());
    Ok(())
}

fn fit(a: FitArgs) -> CliResult {
    let train = load(&a.input, a.classes)?;
    let model = ProxyModel::fit(a.k, &train, a.metric).with_context(|| format!("fitting {}", a.input.display()))?;
    model
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;

    println!(
        "fitted k={} c={} dim={} metric={} on {} records",
        model.proxy_factor(),
        model.num_classes(),
        model.dim(),
        model.metric(),
        train.len()
    );
    for class in 0..model.num_classes() {
        println!(
            "class {class}: {}/{} active proxies",
            model.active_in_class(class),
            model.proxy_factor()
        );
    }
    let radii: Vec<f64> = (0..model.num_centers()).filter_map(|j| model.radius(j)).collect();
    let min = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let max = radii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    println!(
        "radius: min {min:.4} mean {mean:.4} max {max:.4} over {} proxies",
        radii.len()
    );
    Ok(())
}

fn predict(a: PredictArgs) -> CliResult {
    let train = load(&a.train, None)?;
    let eval = load(&a.eval, Some(train.num_classes()))?;
    let preds = nearest_center_classify(&train, &eval, a.metric)?;
    write_jsonl(&a.out, &preds).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

fn score(a: ScoreArgs) -> CliResult {
    let model = ProxyModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let eval = load(&a.eval, Some(model.num_classes()))?;
    let preds: Vec<PredictionRecord> =
        read_jsonl(&a.preds).with_context(|| format!("loading {}", a.preds.display()))?;
    if preds.is_empty() {
        return Err(anyhow!("no predictions in {}", a.preds.display()).into());
    }
    let decisions = decide(&model, &eval, &preds, a.policy)?;
    let report = selective_metrics(&eval, &preds, &decisions)?;
    write_jsonl(&a.decisions, &decisions).with_context(|| format!("writing {}", a.decisions.display()))?;
    write_json(&a.report, &report)?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    println!(
        "f1 {:.4} coverage {:.4} ({} of {} accepted, policy {})",
        report.f1, report.coverage, report.accepted, report.total, a.policy
    );
    Ok(())
}

fn overlap(a: OverlapArgs) -> CliResult {
    let da = load(&a.a, None)?;
    let db = load(&a.b, None)?;
    let report = directional_overlap(&da, &db, a.metric, a.per_point.is_some())?;
    if let (Some(path), Some(points)) = (&a.per_point, &report.per_point) {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        write_ratios_tsv(&mut w, points)?;
        w.flush()?;
    }
    let summary = OverlapSummary {
        p_a: report.p_a,
        p_b: report.p_b,
        o_bidirectional: report.o_bidirectional,
        o_directional: report.o_directional,
    };
    match &a.out {
        Some(path) => {
            write_json(path, &summary)?;
            println!(
                "p_a {:.4} p_b {:.4} O {:.4} O_dir {:.4}",
                summary.p_a, summary.p_b, summary.o_bidirectional, summary.o_directional
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    Ok(())
}

/// The report without per-point data, which goes to the TSV instead.
#[derive(Serialize)]
struct OverlapSummary {
    p_a: f64,
    p_b: f64,
    o_bidirectional: f64,
    o_directional: f64,
}

fn eval(a: EvalArgs) -> CliResult {
    let inputs = manifest::load(&a.manifest)?;
    let cm = cross_matrix(&inputs.models, &inputs.evals, &inputs.preds, a.policy, a.metric)?;
    write_json(&a.out, &cm)?;
    let table = cm.to_table();
    match &a.table {
        Some(path) => fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}
