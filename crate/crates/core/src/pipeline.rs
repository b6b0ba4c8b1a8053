//! The end-to-end training loop: two-stage optimization of the encoder,
//! perturb, and recover networks, per-epoch clustering with high-confidence
//! pseudo-label selection, repeated-seed evaluation, and the ablation and
//! sweep drivers.

use crate::augment::{self, AugmentationSpec};
use crate::cluster::{
    align_cluster_ids, fuse_embeddings, kmeans, select_high_confidence, HighConfidenceSet,
    KMeansConfig,
};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{dense_power_filter, laplacian_filter, AttributedGraph, FilterConfig};
use crate::loss::{
    contrastive_loss, label_matching_loss, semantic_loss, total_loss, ContrastiveForm,
    LossBreakdown, SemanticVariant, ViewEmbeddings,
};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::nn::{
    grad_check, init_bundle, row_l2_normalize_backward, BundleOptimizer, ForwardCache,
    GradCheckReport, NetworkBundle,
};
use crate::rng::RngState;
use serde::{Deserialize, Serialize};
use std::time::Instant;

const NORM_EPS: f64 = 1e-12;
/// Seed offset separating evaluation-time randomness from the training stream.
const EVAL_SEED_OFFSET: u64 = 0x5eed_0ff5;

/// Which loss terms and network paths participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleSwitches {
    /// Label-matching loss (weighted by beta in stage two).
    pub label_matching: bool,
    /// Semantic loss (weighted by alpha).
    pub semantic: bool,
    /// Reversible perturb/recover networks; when off, the recovered and
    /// perturbed embeddings are replaced by the opposite view.
    pub reversible: bool,
}

impl Default for ModuleSwitches {
    fn default() -> Self {
        ModuleSwitches {
            label_matching: true,
            semantic: true,
            reversible: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Label matching becomes active for epochs strictly greater than this.
    pub high_conf_epoch: usize,
    pub filter_layers: usize,
    pub hidden_dims: Vec<usize>,
    pub kmeans_restarts: usize,
    pub seed: u64,
    pub augmentation: AugmentationSpec,
    pub semantic_variant: SemanticVariant,
    pub contrastive_form: ContrastiveForm,
    /// When false, embeddings are the filtered attributes themselves,
    /// row-normalized, with no encoder MLP.
    pub use_encoder: bool,
    /// Run K-means every this many epochs, reusing the previous
    /// high-confidence set in between.
    pub cluster_every: usize,
    pub switches: ModuleSwitches,
    /// Cluster count when the dataset carries no labels.
    pub num_classes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            beta: 0.5,
            tau: 0.75,
            lr: 1e-3,
            epochs: 400,
            high_conf_epoch: 200,
            filter_layers: 2,
            hidden_dims: vec![500],
            kmeans_restarts: 10,
            seed: 0,
            augmentation: AugmentationSpec::Learnable,
            semantic_variant: SemanticVariant::Aligned,
            contrastive_form: ContrastiveForm::ExcludePositive,
            use_encoder: true,
            cluster_every: 1,
            switches: ModuleSwitches::default(),
            num_classes: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::arg(
                "alpha and beta must be non-negative".to_string(),
            ));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 || self.tau > 1.0 {
            return Err(Error::arg(format!("tau {} outside (0,1]", self.tau)));
        }
        if self.high_conf_epoch > self.epochs {
            return Err(Error::arg(format!(
                "high-confidence epoch {} exceeds {} epochs",
                self.high_conf_epoch, self.epochs
            )));
        }
        if self.cluster_every == 0 {
            return Err(Error::arg("cluster-every must be at least 1".to_string()));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::arg("kmeans restarts must be at least 1".to_string()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::arg(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        self.augmentation.validate()
    }

    fn effective_alpha(&self) -> f64 {
        if self.switches.semantic {
            self.alpha
        } else {
            0.0
        }
    }

    fn effective_beta(&self) -> f64 {
        if self.switches.label_matching {
            self.beta
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossBreakdown,
    /// Metrics of the per-epoch clustering against ground truth, on epochs
    /// where clustering ran and labels exist.
    pub metrics: Option<MetricsReport>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: NetworkBundle,
    pub optimizer: BundleOptimizer,
    pub logs: Vec<EpochLog>,
}

struct StepSettings<'a> {
    alpha: f64,
    beta: f64,
    stage2: bool,
    semantic_variant: SemanticVariant,
    contrastive_form: ContrastiveForm,
    use_encoder: bool,
    reversible: bool,
    /// Precomputed second-view features; `None` routes through the
    /// attribute perturb network.
    aug_view2: Option<&'a DenseMatrix>,
    /// Cluster count; label matching needs logits of exactly this width.
    num_classes: Option<usize>,
    hc: Option<&'a HighConfidenceSet>,
}

struct StepViews {
    e1_raw: DenseMatrix,
    e2_raw: DenseMatrix,
    norms1: Vec<f64>,
    norms2: Vec<f64>,
    norms_hr: Vec<f64>,
    norms_hp: Vec<f64>,
    views: ViewEmbeddings,
    cache_attr: Option<ForwardCache>,
    cache_enc1: Option<ForwardCache>,
    cache_enc2: Option<ForwardCache>,
    cache_recover: Option<ForwardCache>,
    cache_emb_perturb: Option<ForwardCache>,
}

struct StepGrads {
    d_view1: DenseMatrix,
    d_view2: DenseMatrix,
    d_recovered: DenseMatrix,
    d_perturbed: DenseMatrix,
    /// Label-matching gradients on the raw logits, already weighted.
    d_logits1: Option<DenseMatrix>,
    d_logits2: Option<DenseMatrix>,
}

fn compute_views(
    bundle: &NetworkBundle,
    x1: &DenseMatrix,
    settings: &StepSettings,
) -> Result<StepViews> {
    let (x2, cache_attr) = match settings.aug_view2 {
        Some(x2) => (x2.clone(), None),
        None => {
            let (x2, cache) = bundle.attr_perturb.forward(x1)?;
            (x2, Some(cache))
        }
    };
    let x2 = &x2;

    let (e1_raw, cache_enc1, e2_raw, cache_enc2) = if settings.use_encoder {
        let (e1, c1) = bundle.encoder.forward(x1)?;
        let (e2, c2) = bundle.encoder.forward(x2)?;
        (e1, Some(c1), e2, Some(c2))
    } else {
        (x1.clone(), None, x2.clone(), None)
    };

    let (e1, norms1) = e1_raw.row_l2_normalize_with_norms(NORM_EPS);
    let (e2, norms2) = e2_raw.row_l2_normalize_with_norms(NORM_EPS);

    let (hr, norms_hr, cache_recover, hp, norms_hp, cache_emb_perturb) = if settings.reversible {
        let (hr_raw, cr) = bundle.recover.forward(&e2)?;
        let (hr, norms_hr) = hr_raw.row_l2_normalize_with_norms(NORM_EPS);
        let (hp_raw, cp) = bundle.emb_perturb.forward(&e1)?;
        let (hp, norms_hp) = hp_raw.row_l2_normalize_with_norms(NORM_EPS);
        (hr, norms_hr, Some(cr), hp, norms_hp, Some(cp))
    } else {
        (e2.clone(), Vec::new(), None, e1.clone(), Vec::new(), None)
    };

    Ok(StepViews {
        e1_raw,
        e2_raw,
        norms1,
        norms2,
        norms_hr,
        norms_hp,
        views: ViewEmbeddings {
            view1: e1,
            view2: e2,
            recovered: hr,
            perturbed: hp,
        },
        cache_attr,
        cache_enc1,
        cache_enc2,
        cache_recover,
        cache_emb_perturb,
    })
}

fn compute_losses(step: &StepViews, settings: &StepSettings) -> Result<(LossBreakdown, StepGrads)> {
    let v = &step.views;
    let (lc1, mut d_view1, mut d_recovered) =
        contrastive_loss(&v.view1, &v.recovered, settings.contrastive_form)?;
    let (lc2, mut d_view2, mut d_perturbed) =
        contrastive_loss(&v.view2, &v.perturbed, settings.contrastive_form)?;
    let l_c = lc1 + lc2;

    let (l_s, sem_grads) = semantic_loss(v, settings.semantic_variant)?;
    if settings.alpha != 0.0 {
        d_view1.add_assign(&sem_grads.view1.scale(settings.alpha))?;
        d_view2.add_assign(&sem_grads.view2.scale(settings.alpha))?;
        d_recovered.add_assign(&sem_grads.recovered.scale(settings.alpha))?;
        d_perturbed.add_assign(&sem_grads.perturbed.scale(settings.alpha))?;
    }

    // label matching is reported whenever it can be computed; its gradient
    // only applies in stage two
    let mut l_m = 0.0;
    let mut d_logits1 = None;
    let mut d_logits2 = None;
    if let (Some(hc), Some(k)) = (settings.hc, settings.num_classes) {
        if !hc.is_empty() && step.e1_raw.cols() == k {
            let (lm, g1, g2) = label_matching_loss(&step.e1_raw, &step.e2_raw, hc)?;
            l_m = lm;
            if settings.stage2 && settings.beta != 0.0 {
                d_logits1 = Some(g1.scale(settings.beta));
                d_logits2 = Some(g2.scale(settings.beta));
            }
        }
    }

    let breakdown = total_loss(
        l_c,
        l_s,
        l_m,
        settings.alpha,
        settings.beta,
        settings.stage2,
    );
    Ok((
        breakdown,
        StepGrads {
            d_view1,
            d_view2,
            d_recovered,
            d_perturbed,
            d_logits1,
            d_logits2,
        },
    ))
}

fn backward_step(
    bundle: &mut NetworkBundle,
    step: StepViews,
    grads: StepGrads,
    settings: &StepSettings,
) -> Result<()> {
    let StepViews {
        norms1,
        norms2,
        norms_hr,
        norms_hp,
        views,
        cache_attr,
        cache_enc1,
        cache_enc2,
        cache_recover,
        cache_emb_perturb,
        ..
    } = step;

    let mut d_e1 = grads.d_view1;
    let mut d_e2 = grads.d_view2;

    if settings.reversible {
        // through the recover net: hr = normalize(recover(e2))
        let d_hr_raw =
            row_l2_normalize_backward(&views.recovered, &norms_hr, NORM_EPS, &grads.d_recovered);
        let d_from_recover = bundle
            .recover
            .backward(cache_recover.expect("recover cache"), &d_hr_raw)?;
        d_e2.add_assign(&d_from_recover)?;

        // through the embedding perturb net: hp = normalize(emb_perturb(e1))
        let d_hp_raw =
            row_l2_normalize_backward(&views.perturbed, &norms_hp, NORM_EPS, &grads.d_perturbed);
        let d_from_perturb = bundle
            .emb_perturb
            .backward(cache_emb_perturb.expect("perturb cache"), &d_hp_raw)?;
        d_e1.add_assign(&d_from_perturb)?;
    } else {
        // recovered/perturbed are aliases of the opposite views
        d_e2.add_assign(&grads.d_recovered)?;
        d_e1.add_assign(&grads.d_perturbed)?;
    }

    let mut d_e1_raw = row_l2_normalize_backward(&views.view1, &norms1, NORM_EPS, &d_e1);
    let mut d_e2_raw = row_l2_normalize_backward(&views.view2, &norms2, NORM_EPS, &d_e2);
    if let Some(g) = grads.d_logits1 {
        d_e1_raw.add_assign(&g)?;
    }
    if let Some(g) = grads.d_logits2 {
        d_e2_raw.add_assign(&g)?;
    }

    let d_x2 = if settings.use_encoder {
        bundle
            .encoder
            .backward(cache_enc1.expect("encoder cache 1"), &d_e1_raw)?;
        bundle
            .encoder
            .backward(cache_enc2.expect("encoder cache 2"), &d_e2_raw)?
    } else {
        d_e2_raw
    };

    if let Some(cache) = cache_attr {
        bundle.attr_perturb.backward(cache, &d_x2)?;
    }
    Ok(())
}

/// Per-epoch second-view features for classical augmentations; the learnable
/// path returns `None` and lets the perturb network build the view.
fn augmented_view2(
    graph: &AttributedGraph,
    x1: &DenseMatrix,
    diffusion_features: Option<&DenseMatrix>,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<Option<DenseMatrix>> {
    let filter = FilterConfig {
        layers: cfg.filter_layers,
    };
    match cfg.augmentation {
        AugmentationSpec::Learnable => Ok(None),
        AugmentationSpec::FeatureMask { rate } => Ok(Some(augment::feature_mask(x1, rate, rng)?)),
        AugmentationSpec::EdgeRemove { rate } => {
            let a2 = augment::edge_remove(&graph.adjacency, rate, rng)?;
            Ok(Some(laplacian_filter(&graph.features, &a2, filter)?))
        }
        AugmentationSpec::EdgeAdd { rate } => {
            let a2 = augment::edge_add(&graph.adjacency, rate, rng)?;
            Ok(Some(laplacian_filter(&graph.features, &a2, filter)?))
        }
        AugmentationSpec::Diffusion { .. } => Ok(Some(
            diffusion_features
                .expect("diffusion features precomputed")
                .clone(),
        )),
    }
}

fn resolve_num_classes(graph: &AttributedGraph, cfg: &TrainConfig) -> Option<usize> {
    graph.num_classes.or(cfg.num_classes)
}

/// Train the network bundle on one graph. The smoothed attributes are
/// computed once; each epoch builds the second view, encodes both views,
/// clusters the fused embeddings for pseudo labels, evaluates the three
/// losses, and takes one Adam step.
pub fn train(graph: &AttributedGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = resolve_num_classes(graph, cfg);
    let feature_dim = graph.feature_dim();
    let embed_dim = if cfg.use_encoder {
        k.ok_or_else(|| {
            Error::arg("cluster count required: provide labels or num_classes".to_string())
        })?
    } else {
        feature_dim
    };
    if let Some(k) = k {
        if graph.num_nodes() < k {
            return Err(Error::arg(format!(
                "{} nodes cannot form {k} clusters",
                graph.num_nodes()
            )));
        }
    }

    let mut rng = RngState::new(cfg.seed);
    let mut bundle = init_bundle(feature_dim, &cfg.hidden_dims, embed_dim, &mut rng);
    let mut optimizer = BundleOptimizer::new(&bundle, cfg.lr);

    // smoothed attributes: computed exactly once per run
    let x1 = laplacian_filter(
        &graph.features,
        &graph.adjacency,
        FilterConfig {
            layers: cfg.filter_layers,
        },
    )?;
    let diffusion_features = match cfg.augmentation {
        AugmentationSpec::Diffusion { teleport } => {
            let operator = augment::ppr_diffusion(&graph.adjacency, teleport)?;
            Some(dense_power_filter(
                &graph.features,
                &operator,
                cfg.filter_layers,
            )?)
        }
        _ => None,
    };

    let kmeans_cfg = k.map(|k| KMeansConfig {
        k,
        restarts: cfg.kmeans_restarts,
        ..KMeansConfig::new(k)
    });

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut current_hc: Option<HighConfidenceSet> = None;
    let mut previous_assignments: Option<Vec<usize>> = None;

    for epoch in 1..=cfg.epochs {
        let epoch_start = Instant::now();
        let aug_x2 = augmented_view2(graph, &x1, diffusion_features.as_ref(), cfg, &mut rng)?;
        let stage2 = epoch > cfg.high_conf_epoch;

        // views first: the epoch's clustering runs on this epoch's embeddings
        let probe_settings = StepSettings {
            alpha: cfg.effective_alpha(),
            beta: cfg.effective_beta(),
            stage2,
            semantic_variant: cfg.semantic_variant,
            contrastive_form: cfg.contrastive_form,
            use_encoder: cfg.use_encoder,
            reversible: cfg.switches.reversible,
            aug_view2: aug_x2.as_ref(),
            num_classes: k,
            hc: None,
        };
        let step = compute_views(&bundle, &x1, &probe_settings)?;

        let mut epoch_metrics = None;
        if let Some(km_cfg) = &kmeans_cfg {
            if (epoch - 1) % cfg.cluster_every == 0 {
                let fused = fuse_embeddings(&step.views.view1, &step.views.view2)?;
                let mut clustering = kmeans(&fused, km_cfg, &mut rng)?;
                // keep cluster ids stable across epochs so the pseudo labels
                // the matching loss fits are not a permuting target
                if let Some(prev) = &previous_assignments {
                    align_cluster_ids(&mut clustering, prev)?;
                }
                current_hc = Some(select_high_confidence(&clustering, &fused, cfg.tau)?);
                if let Some(labels) = &graph.labels {
                    epoch_metrics = Some(compute_metrics(labels, &clustering.assignments)?);
                }
                previous_assignments = Some(clustering.assignments);
            }
        }

        let settings = StepSettings {
            hc: current_hc.as_ref(),
            ..probe_settings
        };
        let (breakdown, grads) = compute_losses(&step, &settings)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("{breakdown:?}"),
            });
        }

        bundle.zero_grad();
        backward_step(&mut bundle, step, grads, &settings)?;
        optimizer.step(&mut bundle);

        logs.push(EpochLog {
            epoch,
            losses: breakdown,
            metrics: epoch_metrics,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutcome {
        bundle,
        optimizer,
        logs,
    })
}

/// Recompute the fused consensus embedding with a fixed evaluation stream
/// for any rng-dependent augmentation.
fn inference_consensus(
    bundle: &NetworkBundle,
    graph: &AttributedGraph,
    cfg: &TrainConfig,
    eval_rng: &mut RngState,
) -> Result<DenseMatrix> {
    let x1 = laplacian_filter(
        &graph.features,
        &graph.adjacency,
        FilterConfig {
            layers: cfg.filter_layers,
        },
    )?;
    let diffusion_features = match cfg.augmentation {
        AugmentationSpec::Diffusion { teleport } => {
            let operator = augment::ppr_diffusion(&graph.adjacency, teleport)?;
            Some(dense_power_filter(
                &graph.features,
                &operator,
                cfg.filter_layers,
            )?)
        }
        _ => None,
    };
    let aug_x2 = augmented_view2(graph, &x1, diffusion_features.as_ref(), cfg, eval_rng)?;
    let settings = StepSettings {
        alpha: cfg.effective_alpha(),
        beta: cfg.effective_beta(),
        stage2: false,
        semantic_variant: cfg.semantic_variant,
        contrastive_form: cfg.contrastive_form,
        use_encoder: cfg.use_encoder,
        reversible: cfg.switches.reversible,
        aug_view2: aug_x2.as_ref(),
        num_classes: resolve_num_classes(graph, cfg),
        hc: None,
    };
    let step = compute_views(bundle, &x1, &settings)?;
    fuse_embeddings(&step.views.view1, &step.views.view2)
}

/// Recompute both views with the trained bundle, fuse, cluster, and score
/// against ground-truth labels.
pub fn evaluate(
    bundle: &NetworkBundle,
    graph: &AttributedGraph,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    let labels = graph.labels.as_ref().ok_or(Error::MissingLabels)?;
    let k = resolve_num_classes(graph, cfg)
        .ok_or_else(|| Error::arg("cluster count required".to_string()))?;
    let mut eval_rng = RngState::new(cfg.seed.wrapping_add(EVAL_SEED_OFFSET));
    let fused = inference_consensus(bundle, graph, cfg, &mut eval_rng)?;
    let km_cfg = KMeansConfig {
        k,
        restarts: cfg.kmeans_restarts,
        ..KMeansConfig::new(k)
    };
    let clustering = kmeans(&fused, &km_cfg, &mut eval_rng)?;
    compute_metrics(labels, &clustering.assignments)
}

/// Final consensus embedding of a trained bundle, for external inspection.
pub fn consensus_embeddings(
    bundle: &NetworkBundle,
    graph: &AttributedGraph,
    cfg: &TrainConfig,
) -> Result<DenseMatrix> {
    let mut eval_rng = RngState::new(cfg.seed.wrapping_add(EVAL_SEED_OFFSET));
    inference_consensus(bundle, graph, cfg, &mut eval_rng)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

fn stats(values: &[f64]) -> MetricStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricStats {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub acc: MetricStats,
    pub nmi: MetricStats,
    pub ari: MetricStats,
    pub f1: MetricStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricsReport>,
    pub summary: SummaryStats,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_curves: Option<Vec<Vec<EpochLog>>>,
    #[serde(skip)]
    pub total_seconds: f64,
}

impl RunSummary {
    pub fn without_curves(mut self) -> Self {
        self.loss_curves = None;
        self
    }
}

/// A repeated-run summary plus the first seed's trained artifacts, which
/// checkpointing and embedding dumps reuse without retraining.
#[derive(Debug)]
pub struct RepeatedRuns {
    pub summary: RunSummary,
    pub first: TrainOutcome,
}

/// Train and evaluate with seeds `cfg.seed, cfg.seed + 1, ...`, reporting the
/// per-metric mean and (population) standard deviation.
pub fn run_repeated(
    graph: &AttributedGraph,
    cfg: &TrainConfig,
    n_runs: usize,
) -> Result<RepeatedRuns> {
    if n_runs == 0 {
        return Err(Error::arg("need at least one run".to_string()));
    }
    let started = Instant::now();
    let mut seeds = Vec::with_capacity(n_runs);
    let mut runs = Vec::with_capacity(n_runs);
    let mut curves = Vec::with_capacity(n_runs);
    let mut first = None;
    for i in 0..n_runs {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + i as u64;
        let outcome = train(graph, &run_cfg)?;
        let report = evaluate(&outcome.bundle, graph, &run_cfg)?;
        seeds.push(run_cfg.seed);
        runs.push(report);
        curves.push(outcome.logs.clone());
        if first.is_none() {
            first = Some(outcome);
        }
    }
    let collect = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { runs.iter().map(f).collect() };
    let summary = SummaryStats {
        acc: stats(&collect(|r| r.acc)),
        nmi: stats(&collect(|r| r.nmi)),
        ari: stats(&collect(|r| r.ari)),
        f1: stats(&collect(|r| r.f1)),
    };
    Ok(RepeatedRuns {
        summary: RunSummary {
            config: cfg.clone(),
            seeds,
            runs,
            summary,
            loss_curves: Some(curves),
            total_seconds: started.elapsed().as_secs_f64(),
        },
        first: first.unwrap(),
    })
}

/// One row of an ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum AblationVariant {
    Augmentation { spec: AugmentationSpec },
    WithoutLabelMatching,
    WithoutSemantic,
    WithoutReversible,
}

impl AblationVariant {
    pub fn name(&self) -> String {
        match self {
            AblationVariant::Augmentation { spec } => spec.to_string(),
            AblationVariant::WithoutLabelMatching => "without-label-matching".to_string(),
            AblationVariant::WithoutSemantic => "without-semantic-loss".to_string(),
            AblationVariant::WithoutReversible => "without-reversible-net".to_string(),
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            AblationVariant::Augmentation { spec } => cfg.augmentation = *spec,
            AblationVariant::WithoutLabelMatching => cfg.switches.label_matching = false,
            AblationVariant::WithoutSemantic => cfg.switches.semantic = false,
            AblationVariant::WithoutReversible => cfg.switches.reversible = false,
        }
        cfg
    }

    /// The table reported by the ablation command: the learnable path, the
    /// four classical augmentations, and the three module removals.
    pub fn default_set() -> Vec<AblationVariant> {
        vec![
            AblationVariant::Augmentation {
                spec: AugmentationSpec::Learnable,
            },
            AblationVariant::Augmentation {
                spec: AugmentationSpec::FeatureMask { rate: 0.1 },
            },
            AblationVariant::Augmentation {
                spec: AugmentationSpec::EdgeRemove { rate: 0.1 },
            },
            AblationVariant::Augmentation {
                spec: AugmentationSpec::EdgeAdd { rate: 0.1 },
            },
            AblationVariant::Augmentation {
                spec: AugmentationSpec::Diffusion { teleport: 0.1 },
            },
            AblationVariant::WithoutLabelMatching,
            AblationVariant::WithoutSemantic,
            AblationVariant::WithoutReversible,
        ]
    }
}

/// Run each variant with the same base seed so rows are comparable.
pub fn ablation_run(
    graph: &AttributedGraph,
    base: &TrainConfig,
    variants: &[AblationVariant],
    n_runs: usize,
) -> Result<Vec<(String, RunSummary)>> {
    let mut out = Vec::with_capacity(variants.len());
    for variant in variants {
        let cfg = variant.apply(base);
        let summary = run_repeated(graph, &cfg, n_runs)?.summary.without_curves();
        out.push((variant.name(), summary));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    Alpha,
    Beta,
    Tau,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParameter::Alpha),
            "beta" => Ok(SweepParameter::Beta),
            "tau" => Ok(SweepParameter::Tau),
            other => Err(Error::arg(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

/// One `run_repeated` per value, all from the same base seed.
pub fn sweep(
    graph: &AttributedGraph,
    cfg: &TrainConfig,
    parameter: SweepParameter,
    values: &[f64],
    n_runs: usize,
) -> Result<Vec<(f64, RunSummary)>> {
    let mut out = Vec::with_capacity(values.len());
    for &value in values {
        let mut swept = cfg.clone();
        match parameter {
            SweepParameter::Alpha => swept.alpha = value,
            SweepParameter::Beta => swept.beta = value,
            SweepParameter::Tau => swept.tau = value,
        }
        let summary = run_repeated(graph, &swept, n_runs)?
            .summary
            .without_curves();
        out.push((value, summary));
    }
    Ok(out)
}

/// Check the full training-step gradient against central finite differences
/// on a frozen high-confidence set.
pub fn pipeline_grad_check(
    graph: &AttributedGraph,
    cfg: &TrainConfig,
    stage2: bool,
    fd_step: f64,
    samples_per_tensor: usize,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let k = resolve_num_classes(graph, cfg)
        .ok_or_else(|| Error::arg("cluster count required".to_string()))?;
    let embed_dim = if cfg.use_encoder {
        k
    } else {
        graph.feature_dim()
    };

    let mut rng = RngState::new(cfg.seed);
    let mut bundle = init_bundle(graph.feature_dim(), &cfg.hidden_dims, embed_dim, &mut rng);

    let x1 = laplacian_filter(
        &graph.features,
        &graph.adjacency,
        FilterConfig {
            layers: cfg.filter_layers,
        },
    )?;

    // freeze the high-confidence set from the initial parameters
    let base_settings = StepSettings {
        alpha: cfg.effective_alpha(),
        beta: cfg.effective_beta(),
        stage2,
        semantic_variant: cfg.semantic_variant,
        contrastive_form: cfg.contrastive_form,
        use_encoder: cfg.use_encoder,
        reversible: cfg.switches.reversible,
        aug_view2: None,
        num_classes: Some(k),
        hc: None,
    };
    let probe = compute_views(&bundle, &x1, &base_settings)?;
    let fused = fuse_embeddings(&probe.views.view1, &probe.views.view2)?;
    let km_cfg = KMeansConfig {
        k,
        restarts: cfg.kmeans_restarts,
        ..KMeansConfig::new(k)
    };
    let clustering = kmeans(&fused, &km_cfg, &mut rng)?;
    let hc = select_high_confidence(&clustering, &fused, cfg.tau)?;

    let x1_ref = &x1;
    let hc_ref = &hc;
    let make_settings = || StepSettings {
        alpha: cfg.effective_alpha(),
        beta: cfg.effective_beta(),
        stage2,
        semantic_variant: cfg.semantic_variant,
        contrastive_form: cfg.contrastive_form,
        use_encoder: cfg.use_encoder,
        reversible: cfg.switches.reversible,
        aug_view2: None,
        num_classes: Some(k),
        hc: Some(hc_ref),
    };

    let backward = |bundle: &mut NetworkBundle| -> Result<f64> {
        bundle.zero_grad();
        let settings = make_settings();
        let step = compute_views(bundle, x1_ref, &settings)?;
        let (breakdown, grads) = compute_losses(&step, &settings)?;
        backward_step(bundle, step, grads, &settings)?;
        Ok(breakdown.total)
    };
    let loss_only = |bundle: &NetworkBundle| -> Result<f64> {
        let settings = make_settings();
        let step = compute_views(bundle, x1_ref, &settings)?;
        let (breakdown, _) = compute_losses(&step, &settings)?;
        Ok(breakdown.total)
    };

    let mut check_rng = RngState::new(cfg.seed.wrapping_add(1));
    grad_check(
        &mut bundle,
        backward,
        loss_only,
        fd_step,
        samples_per_tensor,
        &mut check_rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sbm, SbmConfig};

    fn small_sbm(seed: u64) -> AttributedGraph {
        generate_sbm(&SbmConfig {
            blocks: 4,
            nodes_per_block: 10,
            p_in: 0.6,
            p_out: 0.05,
            feature_dim: 8,
            mean_separation: 1.0,
            noise_scale: 0.6,
            seed,
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            high_conf_epoch: 15,
            hidden_dims: vec![16],
            kmeans_restarts: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_bundle_and_no_logs() {
        let graph = small_sbm(1);
        let cfg = TrainConfig {
            epochs: 0,
            high_conf_epoch: 0,
            ..small_cfg()
        };
        let outcome = train(&graph, &cfg).unwrap();
        assert!(outcome.logs.is_empty());
        let mut rng = RngState::new(cfg.seed);
        let fresh = init_bundle(graph.feature_dim(), &cfg.hidden_dims, 4, &mut rng);
        for (a, b) in outcome.bundle.nets().iter().zip(fresh.nets().iter()) {
            for (la, lb) in a.layers.iter().zip(&b.layers) {
                assert_eq!(la.weight.values(), lb.weight.values());
            }
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let graph = small_sbm(2);
        let cfg = TrainConfig {
            epochs: 8,
            high_conf_epoch: 4,
            ..small_cfg()
        };
        let a = train(&graph, &cfg).unwrap();
        let b = train(&graph, &cfg).unwrap();
        for (x, y) in a.bundle.nets().iter().zip(b.bundle.nets().iter()) {
            for (lx, ly) in x.layers.iter().zip(&y.layers) {
                assert_eq!(lx.weight.values(), ly.weight.values());
                assert_eq!(lx.bias, ly.bias);
            }
        }
        for (lx, ly) in a.logs.iter().zip(&b.logs) {
            assert_eq!(lx.losses, ly.losses);
            assert_eq!(lx.metrics, ly.metrics);
        }
    }

    #[test]
    fn stage_gating_matches_recorded_totals() {
        let graph = small_sbm(3);
        let cfg = TrainConfig {
            epochs: 10,
            high_conf_epoch: 5,
            ..small_cfg()
        };
        let outcome = train(&graph, &cfg).unwrap();
        for log in &outcome.logs {
            let l = &log.losses;
            if log.epoch <= cfg.high_conf_epoch {
                assert!(!l.stage2);
                assert_eq!(l.total, l.contrastive + l.alpha * l.semantic);
            } else {
                assert!(l.stage2);
                assert_eq!(
                    l.total,
                    l.contrastive + l.alpha * l.semantic + l.beta * l.label_matching
                );
            }
        }
    }

    #[test]
    fn pure_contrastive_loss_trends_down() {
        let graph = small_sbm(4);
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            epochs: 120,
            high_conf_epoch: 60,
            lr: 1e-3,
            switches: ModuleSwitches {
                label_matching: false,
                semantic: false,
                reversible: true,
            },
            ..small_cfg()
        };
        let outcome = train(&graph, &cfg).unwrap();
        let first: f64 = outcome.logs[..30]
            .iter()
            .map(|l| l.losses.contrastive)
            .sum::<f64>()
            / 30.0;
        let last: f64 = outcome.logs[90..]
            .iter()
            .map(|l| l.losses.contrastive)
            .sum::<f64>()
            / 30.0;
        assert!(
            last < first,
            "contrastive loss did not trend down: {first} -> {last}"
        );
        // the disabled losses are still reported as diagnostics
        for log in &outcome.logs {
            assert!(log.losses.semantic > 0.0);
            assert!(log.losses.label_matching > 0.0);
            assert_eq!(log.losses.total, log.losses.contrastive);
        }
    }

    #[test]
    fn untrained_evaluation_separates_noise_free_cliques() {
        // disjoint cliques with exact block means: the filter makes each block
        // constant, so even an untrained encoder separates them
        let graph = generate_sbm(&SbmConfig {
            blocks: 3,
            nodes_per_block: 5,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 6,
            mean_separation: 1.0,
            noise_scale: 0.0,
            seed: 9,
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            high_conf_epoch: 0,
            ..small_cfg()
        };
        let outcome = train(&graph, &cfg).unwrap();
        let report = evaluate(&outcome.bundle, &graph, &cfg).unwrap();
        assert_eq!(report.acc, 1.0);
    }

    #[test]
    fn evaluate_requires_labels_and_is_deterministic() {
        let mut graph = small_sbm(5);
        let cfg = TrainConfig {
            epochs: 3,
            high_conf_epoch: 1,
            ..small_cfg()
        };
        let outcome = train(&graph, &cfg).unwrap();
        let a = evaluate(&outcome.bundle, &graph, &cfg).unwrap();
        let b = evaluate(&outcome.bundle, &graph, &cfg).unwrap();
        assert_eq!(a, b);
        graph.labels = None;
        graph.num_classes = None;
        assert!(matches!(
            evaluate(&outcome.bundle, &graph, &cfg),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn run_repeated_statistics() {
        let graph = small_sbm(6);
        let cfg = TrainConfig {
            epochs: 4,
            high_conf_epoch: 2,
            ..small_cfg()
        };
        let single = run_repeated(&graph, &cfg, 1).unwrap().summary;
        assert_eq!(single.summary.acc.std, 0.0);
        assert_eq!(single.seeds, vec![cfg.seed]);

        let multi = run_repeated(&graph, &cfg, 3).unwrap().summary;
        assert_eq!(multi.runs.len(), 3);
        let accs: Vec<f64> = multi.runs.iter().map(|r| r.acc).collect();
        let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(multi.summary.acc.mean >= min && multi.summary.acc.mean <= max);

        let again = run_repeated(&graph, &cfg, 3).unwrap().summary;
        assert_eq!(multi.runs, again.runs);
    }

    #[test]
    fn ablation_without_label_matching_equals_beta_zero() {
        let graph = small_sbm(7);
        let cfg = TrainConfig {
            epochs: 6,
            high_conf_epoch: 3,
            ..small_cfg()
        };
        let variant = AblationVariant::WithoutLabelMatching.apply(&cfg);
        let via_switch = train(&graph, &variant).unwrap();
        let mut beta_zero = cfg.clone();
        beta_zero.beta = 0.0;
        let via_beta = train(&graph, &beta_zero).unwrap();
        for (a, b) in via_switch.logs.iter().zip(&via_beta.logs) {
            assert_eq!(a.losses.total, b.losses.total);
            assert_eq!(a.losses.contrastive, b.losses.contrastive);
        }
        for (x, y) in via_switch
            .bundle
            .nets()
            .iter()
            .zip(via_beta.bundle.nets().iter())
        {
            for (lx, ly) in x.layers.iter().zip(&y.layers) {
                assert_eq!(lx.weight.values(), ly.weight.values());
            }
        }
    }

    #[test]
    fn ablation_empty_variant_list_gives_empty_table() {
        let graph = small_sbm(8);
        let cfg = TrainConfig {
            epochs: 1,
            high_conf_epoch: 0,
            ..small_cfg()
        };
        let table = ablation_run(&graph, &cfg, &[], 1).unwrap();
        assert!(table.is_empty());
    }

    #[test]
    fn ablation_rows_share_seeds() {
        let graph = small_sbm(8);
        let cfg = TrainConfig {
            epochs: 2,
            high_conf_epoch: 1,
            ..small_cfg()
        };
        let variants = [
            AblationVariant::WithoutSemantic,
            AblationVariant::WithoutReversible,
        ];
        let table = ablation_run(&graph, &cfg, &variants, 2).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].1.seeds, table[1].1.seeds);
    }

    #[test]
    fn sweep_single_value_equals_run_repeated() {
        let graph = small_sbm(10);
        let cfg = TrainConfig {
            epochs: 3,
            high_conf_epoch: 1,
            ..small_cfg()
        };
        let swept = sweep(&graph, &cfg, SweepParameter::Alpha, &[cfg.alpha], 2).unwrap();
        assert_eq!(swept.len(), 1);
        let direct = run_repeated(&graph, &cfg, 2).unwrap().summary;
        assert_eq!(swept[0].1.runs, direct.runs);
    }

    #[test]
    fn classical_augmentations_train_without_learnable_path() {
        let graph = small_sbm(11);
        for aug in [
            AugmentationSpec::FeatureMask { rate: 0.1 },
            AugmentationSpec::EdgeRemove { rate: 0.1 },
            AugmentationSpec::EdgeAdd { rate: 0.1 },
            AugmentationSpec::Diffusion { teleport: 0.1 },
        ] {
            let cfg = TrainConfig {
                epochs: 3,
                high_conf_epoch: 1,
                augmentation: aug,
                ..small_cfg()
            };
            let outcome = train(&graph, &cfg).unwrap();
            assert_eq!(outcome.logs.len(), 3);
            // the attribute perturb net must stay untouched
            let mut rng = RngState::new(cfg.seed);
            let fresh = init_bundle(graph.feature_dim(), &cfg.hidden_dims, 4, &mut rng);
            for (la, lb) in outcome
                .bundle
                .attr_perturb
                .layers
                .iter()
                .zip(&fresh.attr_perturb.layers)
            {
                assert_eq!(la.weight.values(), lb.weight.values());
            }
        }
    }

    #[test]
    fn no_encoder_mode_trains() {
        let graph = small_sbm(12);
        let cfg = TrainConfig {
            epochs: 3,
            high_conf_epoch: 1,
            use_encoder: false,
            ..small_cfg()
        };
        let outcome = train(&graph, &cfg).unwrap();
        assert_eq!(outcome.logs.len(), 3);
        // label matching cannot run when embeddings have feature width
        assert!(outcome.logs.iter().all(|l| l.losses.label_matching == 0.0));
        let report = evaluate(&outcome.bundle, &graph, &cfg).unwrap();
        assert!(report.acc > 0.0);
    }

    #[test]
    fn cluster_every_stride_reuses_pseudo_labels() {
        let graph = small_sbm(13);
        let cfg = TrainConfig {
            epochs: 6,
            high_conf_epoch: 0,
            cluster_every: 3,
            ..small_cfg()
        };
        let outcome = train(&graph, &cfg).unwrap();
        let with_metrics: Vec<usize> = outcome
            .logs
            .iter()
            .filter(|l| l.metrics.is_some())
            .map(|l| l.epoch)
            .collect();
        assert_eq!(with_metrics, vec![1, 4]);
        // label matching still reported on strided epochs
        assert!(outcome.logs.iter().all(|l| l.losses.label_matching > 0.0));
    }

    #[test]
    fn pipeline_gradients_match_finite_differences() {
        let graph = generate_sbm(&SbmConfig {
            blocks: 3,
            nodes_per_block: 4,
            p_in: 0.8,
            p_out: 0.1,
            feature_dim: 6,
            mean_separation: 1.0,
            noise_scale: 0.4,
            seed: 77,
        })
        .unwrap();
        for stage2 in [false, true] {
            for variant in [SemanticVariant::Aligned, SemanticVariant::Cross] {
                let cfg = TrainConfig {
                    hidden_dims: vec![8],
                    semantic_variant: variant,
                    ..TrainConfig::default()
                };
                let report = pipeline_grad_check(&graph, &cfg, stage2, 1e-5, 50).unwrap();
                assert!(
                    report.max_rel_error() < 1e-4,
                    "stage2={stage2} {variant:?}: max rel err {}",
                    report.max_rel_error()
                );
            }
        }
    }

    #[test]
    fn unlabeled_graph_needs_an_explicit_cluster_count() {
        let mut graph = small_sbm(15);
        graph.labels = None;
        graph.num_classes = None;
        let cfg = TrainConfig {
            epochs: 2,
            high_conf_epoch: 1,
            ..small_cfg()
        };
        assert!(train(&graph, &cfg).is_err());
        let with_k = TrainConfig {
            num_classes: Some(4),
            ..cfg
        };
        let outcome = train(&graph, &with_k).unwrap();
        assert_eq!(outcome.logs.len(), 2);
        // pseudo labels exist, so label matching is still reported
        assert!(outcome.logs.iter().all(|l| l.losses.label_matching > 0.0));
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let graph = small_sbm(14);
        let cfg = TrainConfig {
            lr: 1e200, // overflows the forward pass immediately
            epochs: 5,
            high_conf_epoch: 0,
            ..small_cfg()
        };
        match train(&graph, &cfg) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected non-finite loss abort, got {other:?}"),
        }
    }
}
