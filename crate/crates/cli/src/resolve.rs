//! Configuration layering: built-in per-dataset defaults, then an optional
//! JSON config file, then command-line flags.

use clap::Args;
use revclust_core::error::Error;
use revclust_core::loss::{ContrastiveForm, SemanticVariant};
use revclust_core::pipeline::{ModuleSwitches, TrainConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Environment variable naming the directory bare dataset names resolve
/// against.
pub const DATA_ROOT_ENV: &str = "REVCLUST_DATA_ROOT";

fn parse_unit_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn parse_nonnegative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} is negative"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not positive"))
    }
}

#[derive(Args)]
pub struct CommonTrainArgs {
    /// Dataset directory, or a bare name resolved under REVCLUST_DATA_ROOT.
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON config file applied between built-in defaults and flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Semantic loss weight.
    #[arg(long, value_parser = parse_nonnegative)]
    pub alpha: Option<f64>,
    /// Label-matching loss weight.
    #[arg(long, value_parser = parse_nonnegative)]
    pub beta: Option<f64>,
    /// High-confidence selection fraction.
    #[arg(long, value_parser = parse_unit_fraction)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = parse_positive)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epoch after which label matching becomes active.
    #[arg(long = "high-conf-epoch")]
    pub high_conf_epoch: Option<usize>,
    #[arg(long = "filter-layers")]
    pub filter_layers: Option<usize>,
    /// Encoder hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// learnable | feature-mask[:rate] | edge-remove[:rate] |
    /// edge-add[:rate] | diffusion[:teleport]
    #[arg(long)]
    pub augmentation: Option<String>,
    /// aligned | cross
    #[arg(long = "semantic-variant")]
    pub semantic_variant: Option<String>,
    /// Keep the positive pair in the contrastive denominator.
    #[arg(long = "symmetric-infonce")]
    pub symmetric_infonce: bool,
    /// Row-normalize filtered attributes directly, with no encoder MLP.
    #[arg(long = "no-encoder")]
    pub no_encoder: bool,
    /// Cluster every this many epochs.
    #[arg(long = "cluster-every")]
    pub cluster_every: Option<usize>,
    #[arg(long = "kmeans-restarts")]
    pub kmeans_restarts: Option<usize>,
    /// Cluster count for unlabeled datasets.
    #[arg(long = "num-classes")]
    pub num_classes: Option<usize>,
    /// Drop the label-matching loss (beta is ignored).
    #[arg(long = "disable-label-matching")]
    pub disable_label_matching: bool,
    /// Drop the semantic loss (alpha is ignored).
    #[arg(long = "disable-semantic")]
    pub disable_semantic: bool,
    /// Replace the recovered/perturbed embeddings with the opposite view.
    #[arg(long = "disable-reversible")]
    pub disable_reversible: bool,
}

/// Optional fields loaded from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    alpha: Option<f64>,
    beta: Option<f64>,
    tau: Option<f64>,
    lr: Option<f64>,
    epochs: Option<usize>,
    high_conf_epoch: Option<usize>,
    filter_layers: Option<usize>,
    hidden: Option<Vec<usize>>,
    seed: Option<u64>,
    augmentation: Option<String>,
    semantic_variant: Option<String>,
    symmetric_infonce: Option<bool>,
    no_encoder: Option<bool>,
    cluster_every: Option<usize>,
    kmeans_restarts: Option<usize>,
    num_classes: Option<usize>,
}

pub fn resolve_dataset_dir(args: &CommonTrainArgs) -> Result<PathBuf, Error> {
    let direct = &args.dataset;
    if direct.is_dir() {
        return Ok(direct.clone());
    }
    if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
        let joined = Path::new(&root).join(direct);
        if joined.is_dir() {
            return Ok(joined);
        }
    }
    Err(Error::Dataset(format!(
        "dataset directory not found: {} (also tried under ${DATA_ROOT_ENV})",
        direct.display()
    )))
}

/// Learning-rate defaults for the named benchmark datasets.
fn default_lr_for(dataset_name: &str) -> f64 {
    match dataset_name {
        "cora" => 1e-5,
        "eat" => 1e-7,
        "corafull" => 1e-4,
        // citeseer, amap, bat, uat, and anything unknown
        _ => 1e-3,
    }
}

pub fn resolve_train_config(
    args: &CommonTrainArgs,
    dataset_dir: &Path,
) -> Result<TrainConfig, Error> {
    let name = dataset_dir
        .file_name()
        .map(|s| s.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    let mut cfg = TrainConfig {
        lr: default_lr_for(&name),
        ..TrainConfig::default()
    };

    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        let file: FileConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        apply_file_config(&mut cfg, file)?;
    }

    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
        // keep the two-stage split at the halfway point unless overridden
        if args.high_conf_epoch.is_none() {
            cfg.high_conf_epoch = v / 2;
        }
    }
    if let Some(v) = args.high_conf_epoch {
        cfg.high_conf_epoch = v;
    }
    if let Some(v) = args.filter_layers {
        cfg.filter_layers = v;
    }
    if let Some(v) = &args.hidden {
        cfg.hidden_dims = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.augmentation {
        cfg.augmentation = v.parse()?;
    }
    if let Some(v) = &args.semantic_variant {
        cfg.semantic_variant = v.parse()?;
    }
    if args.symmetric_infonce {
        cfg.contrastive_form = ContrastiveForm::IncludePositive;
    }
    if args.no_encoder {
        cfg.use_encoder = false;
    }
    if let Some(v) = args.cluster_every {
        cfg.cluster_every = v;
    }
    if let Some(v) = args.kmeans_restarts {
        cfg.kmeans_restarts = v;
    }
    if let Some(v) = args.num_classes {
        cfg.num_classes = Some(v);
    }
    cfg.switches = ModuleSwitches {
        label_matching: !args.disable_label_matching,
        semantic: !args.disable_semantic,
        reversible: !args.disable_reversible,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn apply_file_config(cfg: &mut TrainConfig, file: FileConfig) -> Result<(), Error> {
    if let Some(v) = file.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = file.beta {
        cfg.beta = v;
    }
    if let Some(v) = file.tau {
        cfg.tau = v;
    }
    if let Some(v) = file.lr {
        cfg.lr = v;
    }
    if let Some(v) = file.epochs {
        cfg.epochs = v;
        if file.high_conf_epoch.is_none() {
            cfg.high_conf_epoch = v / 2;
        }
    }
    if let Some(v) = file.high_conf_epoch {
        cfg.high_conf_epoch = v;
    }
    if let Some(v) = file.filter_layers {
        cfg.filter_layers = v;
    }
    if let Some(v) = file.hidden {
        cfg.hidden_dims = v;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.augmentation {
        cfg.augmentation = v.parse()?;
    }
    if let Some(v) = file.semantic_variant {
        cfg.semantic_variant = v.parse::<SemanticVariant>()?;
    }
    if let Some(true) = file.symmetric_infonce {
        cfg.contrastive_form = ContrastiveForm::IncludePositive;
    }
    if let Some(true) = file.no_encoder {
        cfg.use_encoder = false;
    }
    if let Some(v) = file.cluster_every {
        cfg.cluster_every = v;
    }
    if let Some(v) = file.kmeans_restarts {
        cfg.kmeans_restarts = v;
    }
    if let Some(v) = file.num_classes {
        cfg.num_classes = Some(v);
    }
    Ok(())
}
