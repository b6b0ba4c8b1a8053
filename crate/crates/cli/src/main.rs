//! Command-line interface: training, evaluation, ablations, sensitivity
//! sweeps, synthetic data generation, gradient checking, and metric scoring.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod resolve;
mod table;

use clap::{Args, Parser, Subcommand};
use revclust_core::checkpoint::{load_checkpoint, save_checkpoint};
use revclust_core::dense::DenseMatrix;
use revclust_core::error::Error;
use revclust_core::graph::{load_dataset, save_dataset, write_atomic};
use revclust_core::loss::SemanticVariant;
use revclust_core::metrics::compute_metrics;
use revclust_core::pipeline::{
    ablation_run, consensus_embeddings, evaluate, pipeline_grad_check, run_repeated, sweep,
    AblationVariant, SweepParameter, TrainConfig,
};
use revclust_core::synth::{generate_sbm, SbmConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use resolve::{resolve_dataset_dir, resolve_train_config, CommonTrainArgs};

#[derive(Parser)]
#[command(
    name = "revclust",
    version,
    about = "Contrastive graph clustering with a learnable reversible augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over repeated seeds and report mean/std clustering metrics.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Run the ablation table: learnable vs classical augmentations and
    /// module removals.
    Ablate(AblateArgs),
    /// Sweep one hyper-parameter over a list of values.
    Sweep(SweepArgs),
    /// Generate a synthetic block-model dataset in the standard format.
    GenSynthetic(GenSyntheticArgs),
    /// Compare analytic gradients against central finite differences.
    GradCheck(GradCheckArgs),
    /// Score a predicted clustering against ground-truth labels.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Number of repeated runs (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Write the machine-readable results file here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write final consensus embeddings (CSV, one row per node).
    #[arg(long = "dump-embeddings")]
    dump_embeddings: Option<PathBuf>,
    /// Save the first run's networks and optimizer state.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Checkpoint produced by `train --checkpoint`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Subset of variants to run (default: the full eight-row table).
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Which hyper-parameter to sweep: alpha, beta, or tau.
    #[arg(long)]
    parameter: String,
    /// Comma-separated values to sweep over.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long = "nodes-per-block", default_value_t = 50)]
    nodes_per_block: usize,
    #[arg(long = "p-in", default_value_t = 0.3)]
    p_in: f64,
    #[arg(long = "p-out", default_value_t = 0.02)]
    p_out: f64,
    #[arg(long = "feature-dim", default_value_t = 16)]
    feature_dim: usize,
    #[arg(long = "mean-separation", default_value_t = 1.0)]
    mean_separation: f64,
    #[arg(long = "noise-scale", default_value_t = 1.0)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Dataset directory; defaults to a 12-node, 3-block synthetic graph.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "fd-step", default_value_t = 1e-5)]
    fd_step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Coordinates sampled per parameter tensor.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Ground-truth labels, one integer per line.
    #[arg(long)]
    truth: PathBuf,
    /// Predicted cluster ids, one integer per line.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::GenSynthetic(args) => cmd_gen_synthetic(args),
        Command::GradCheck(args) => cmd_grad_check(args),
        Command::Metrics(args) => cmd_metrics(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::DimMismatch(_) | Error::MissingLabels => 2,
        _ => 1,
    }
}

fn echo_config(cfg: &TrainConfig, runs: usize) {
    println!(
        "resolved config ({} runs): {}",
        runs,
        serde_json::to_string(cfg).expect("config serializes")
    );
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let dir = resolve_dataset_dir(&args.common)?;
    let graph = load_dataset(&dir)?;
    let cfg = resolve_train_config(&args.common, &dir)?;
    echo_config(&cfg, args.runs);

    let outcome = run_repeated(&graph, &cfg, args.runs)?;
    let summary = &outcome.summary;
    println!("{}", table::summary_table(summary));
    println!(
        "total wall-clock: {:.2}s ({:.2}s per run)",
        summary.total_seconds,
        summary.total_seconds / args.runs as f64
    );

    if let Some(path) = &args.json {
        write_json(path, summary)?;
        println!("results written to {}", path.display());
    }
    if let Some(path) = &args.checkpoint {
        save_checkpoint(path, &outcome.first.bundle, &outcome.first.optimizer)?;
        println!("checkpoint written to {}", path.display());
    }
    if let Some(path) = &args.dump_embeddings {
        let embeddings = consensus_embeddings(&outcome.first.bundle, &graph, &cfg)?;
        write_atomic(path, matrix_to_csv(&embeddings).as_bytes())?;
        println!("embeddings written to {}", path.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let dir = resolve_dataset_dir(&args.common)?;
    let graph = load_dataset(&dir)?;
    let cfg = resolve_train_config(&args.common, &dir)?;
    echo_config(&cfg, 1);
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let report = evaluate(&checkpoint.bundle, &graph, &cfg)?;
    println!("{}", table::metrics_line(&report));
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(())
}

fn parse_variants(names: &[String]) -> Result<Vec<AblationVariant>, Error> {
    names
        .iter()
        .map(|name| match name.as_str() {
            "without-label-matching" => Ok(AblationVariant::WithoutLabelMatching),
            "without-semantic-loss" => Ok(AblationVariant::WithoutSemantic),
            "without-reversible-net" => Ok(AblationVariant::WithoutReversible),
            other => Ok(AblationVariant::Augmentation {
                spec: other.parse()?,
            }),
        })
        .collect()
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Error> {
    let dir = resolve_dataset_dir(&args.common)?;
    let graph = load_dataset(&dir)?;
    let cfg = resolve_train_config(&args.common, &dir)?;
    echo_config(&cfg, args.runs);

    let variants = match &args.variants {
        Some(names) => parse_variants(names)?,
        None => AblationVariant::default_set(),
    };
    let rows = ablation_run(&graph, &cfg, &variants, args.runs)?;
    println!("{}", table::ablation_table(&rows));
    if let Some(path) = &args.json {
        let json_rows: Vec<_> = rows
            .iter()
            .map(|(name, summary)| serde_json::json!({ "variant": name, "summary": summary }))
            .collect();
        write_json(path, &json_rows)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let dir = resolve_dataset_dir(&args.common)?;
    let graph = load_dataset(&dir)?;
    let cfg = resolve_train_config(&args.common, &dir)?;
    echo_config(&cfg, args.runs);

    let parameter: SweepParameter = args.parameter.parse()?;
    let rows = sweep(&graph, &cfg, parameter, &args.values, args.runs)?;
    println!("{}", table::sweep_table(&args.parameter, &rows));
    if let Some(path) = &args.json {
        let json_rows: Vec<_> = rows
            .iter()
            .map(|(value, summary)| serde_json::json!({ "value": value, "summary": summary }))
            .collect();
        write_json(path, &json_rows)?;
    }
    Ok(())
}

fn cmd_gen_synthetic(args: GenSyntheticArgs) -> Result<(), Error> {
    let cfg = SbmConfig {
        blocks: args.blocks,
        nodes_per_block: args.nodes_per_block,
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.feature_dim,
        mean_separation: args.mean_separation,
        noise_scale: args.noise_scale,
        seed: args.seed,
    };
    let graph = generate_sbm(&cfg)?;
    save_dataset(&graph, &args.out)?;
    println!(
        "wrote {} nodes / {} edges / {} classes to {}",
        graph.num_nodes(),
        graph.adjacency.upper_edges().len(),
        graph.num_classes.unwrap_or(0),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GradCheckRow {
    stage2: bool,
    semantic_variant: SemanticVariant,
    max_rel_error: f64,
    pass: bool,
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<(), Error> {
    let graph = match &args.dataset {
        Some(dir) => load_dataset(dir)?,
        None => generate_sbm(&SbmConfig {
            blocks: 3,
            nodes_per_block: 4,
            p_in: 0.8,
            p_out: 0.1,
            feature_dim: 6,
            mean_separation: 1.0,
            noise_scale: 0.4,
            seed: 77,
        })?,
    };
    let mut rows = Vec::new();
    let mut all_pass = true;
    for stage2 in [false, true] {
        for variant in [SemanticVariant::Aligned, SemanticVariant::Cross] {
            let cfg = TrainConfig {
                hidden_dims: vec![8],
                semantic_variant: variant,
                seed: args.seed,
                ..TrainConfig::default()
            };
            let report = pipeline_grad_check(&graph, &cfg, stage2, args.fd_step, args.samples)?;
            let max = report.max_rel_error();
            let pass = max < args.tolerance;
            all_pass &= pass;
            println!(
                "stage2={stage2} variant={variant:?}: max rel error {max:.3e} [{}]",
                if pass { "PASS" } else { "FAIL" }
            );
            rows.push(GradCheckRow {
                stage2,
                semantic_variant: variant,
                max_rel_error: max,
                pass,
            });
        }
    }
    if let Some(path) = &args.json {
        write_json(path, &rows)?;
    }
    if all_pass {
        println!("gradient check: PASS");
        Ok(())
    } else {
        Err(Error::Dataset("gradient check failed".to_string()))
    }
}

fn read_label_file(path: &Path) -> Result<Vec<usize>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse().map_err(|_| {
            Error::InvalidArgument(format!(
                "{} line {}: not a non-negative integer",
                path.display(),
                lineno + 1
            ))
        })?);
    }
    Ok(labels)
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), Error> {
    let truth = read_label_file(&args.truth)?;
    let pred = read_label_file(&args.pred)?;
    let report = compute_metrics(&truth, &pred)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(())
}
