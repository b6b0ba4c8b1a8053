//! Training objectives: the pairwise contrastive loss, the semantic loss that
//! compares perturb/recover similarity structure, the label-matching
//! cross-entropy against high-confidence pseudo labels, and their weighted
//! total. Every loss returns analytic gradients with respect to its matrix
//! inputs; the pipeline chains them through the networks.

use crate::cluster::HighConfidenceSet;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The four row-normalized embedding matrices of one training step.
#[derive(Debug, Clone)]
pub struct ViewEmbeddings {
    /// Embeddings of the smoothed attributes.
    pub view1: DenseMatrix,
    /// Embeddings of the perturbed attributes.
    pub view2: DenseMatrix,
    /// Recover network applied to `view2`.
    pub recovered: DenseMatrix,
    /// Embedding perturb network applied to `view1`.
    pub perturbed: DenseMatrix,
}

impl ViewEmbeddings {
    pub fn check_shapes(&self) -> Result<()> {
        if !(self.view1.same_shape(&self.view2)
            && self.view1.same_shape(&self.recovered)
            && self.view1.same_shape(&self.perturbed))
        {
            return Err(Error::dim("view embedding shapes differ".to_string()));
        }
        Ok(())
    }
}

/// Whether the denominator of the contrastive loss keeps the positive pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastiveForm {
    /// Denominator over k != i only.
    ExcludePositive,
    /// Standard InfoNCE denominator over all k.
    IncludePositive,
}

/// Which similarity structure the semantic loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticVariant {
    /// Row-aligned Hadamard similarities, mean-squared difference.
    Aligned,
    /// Full pairwise dot-product similarity matrices anchored on `view1`.
    Cross,
}

impl std::str::FromStr for SemanticVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(SemanticVariant::Aligned),
            "cross" => Ok(SemanticVariant::Cross),
            other => Err(Error::arg(format!("unknown semantic variant {other:?}"))),
        }
    }
}

/// Mean over rows of `-log( exp(sim(a_i, b_i)) / sum_k exp(sim(a_i, b_k)) )`
/// where similarities are row dot products (cosine for normalized rows) and
/// the denominator index set depends on `form`. Returns the loss and the
/// gradients with respect to both matrices.
pub fn contrastive_loss(
    anchor: &DenseMatrix,
    other: &DenseMatrix,
    form: ContrastiveForm,
) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    if !anchor.same_shape(other) {
        return Err(Error::dim(
            "contrastive inputs must share a shape".to_string(),
        ));
    }
    let n = anchor.rows();
    if n < 2 {
        return Err(Error::arg(
            "contrastive loss needs at least two samples".to_string(),
        ));
    }
    let sims = anchor.matmul_nt(other)?; // n x n
    let mut grad_sims = DenseMatrix::zeros(n, n);
    let mut loss = 0.0;
    for i in 0..n {
        let row = sims.row(i);
        let mut max = f64::NEG_INFINITY;
        for (k, &s) in row.iter().enumerate() {
            if form == ContrastiveForm::ExcludePositive && k == i {
                continue;
            }
            max = max.max(s);
        }
        let mut denom = 0.0;
        for (k, &s) in row.iter().enumerate() {
            if form == ContrastiveForm::ExcludePositive && k == i {
                continue;
            }
            denom += (s - max).exp();
        }
        let lse = max + denom.ln();
        loss += lse - row[i];

        let g = grad_sims.row_mut(i);
        for (k, &s) in row.iter().enumerate() {
            if form == ContrastiveForm::ExcludePositive && k == i {
                continue;
            }
            g[k] = (s - lse).exp();
        }
        g[i] -= 1.0;
    }
    loss /= n as f64;
    let grad_sims = grad_sims.scale(1.0 / n as f64);
    let grad_anchor = grad_sims.matmul(other)?;
    let grad_other = grad_sims.matmul_tn(anchor)?;
    Ok((loss, grad_anchor, grad_other))
}

/// Gradients of the semantic loss with respect to the four view matrices.
#[derive(Debug, Clone)]
pub struct SemanticGrads {
    pub view1: DenseMatrix,
    pub view2: DenseMatrix,
    pub recovered: DenseMatrix,
    pub perturbed: DenseMatrix,
}

pub fn semantic_loss(
    views: &ViewEmbeddings,
    variant: SemanticVariant,
) -> Result<(f64, SemanticGrads)> {
    views.check_shapes()?;
    let (n, d) = views.view1.shape();
    match variant {
        SemanticVariant::Aligned => {
            let sim_recovered = views.view1.hadamard(&views.recovered)?;
            let sim_perturbed = views.view2.hadamard(&views.perturbed)?;
            let diff = sim_recovered.sub(&sim_perturbed)?;
            let count = (n * d) as f64;
            let loss = diff.frobenius_sq_diff(&DenseMatrix::zeros(n, d))? / count;
            let scaled = diff.scale(2.0 / count);
            Ok((
                loss,
                SemanticGrads {
                    view1: scaled.hadamard(&views.recovered)?,
                    recovered: scaled.hadamard(&views.view1)?,
                    view2: scaled.hadamard(&views.perturbed)?.scale(-1.0),
                    perturbed: scaled.hadamard(&views.view2)?.scale(-1.0),
                },
            ))
        }
        SemanticVariant::Cross => {
            let sim_recovered = views.view1.matmul_nt(&views.recovered)?;
            let sim_perturbed = views.view1.matmul_nt(&views.perturbed)?;
            let diff = sim_recovered.sub(&sim_perturbed)?;
            let count = (n * n) as f64;
            let loss = diff.frobenius_sq_diff(&DenseMatrix::zeros(n, n))? / count;
            let scaled = diff.scale(2.0 / count);
            Ok((
                loss,
                SemanticGrads {
                    view1: scaled.matmul(&views.recovered.sub(&views.perturbed)?)?,
                    view2: DenseMatrix::zeros(n, d),
                    recovered: scaled.matmul_tn(&views.view1)?,
                    perturbed: scaled.matmul_tn(&views.view1)?.scale(-1.0),
                },
            ))
        }
    }
}

/// Cross-entropy of both views' logit rows against the high-confidence pseudo
/// labels, mean over the selected samples and summed over the two views.
/// Computed from logits with log-sum-exp; gradients flow only to selected rows.
pub fn label_matching_loss(
    logits1: &DenseMatrix,
    logits2: &DenseMatrix,
    hc: &HighConfidenceSet,
) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    if !logits1.same_shape(logits2) {
        return Err(Error::dim("logit shapes differ".to_string()));
    }
    if hc.is_empty() {
        return Err(Error::arg("empty high-confidence set".to_string()));
    }
    let k = logits1.cols();
    for (&i, &label) in hc.indices.iter().zip(&hc.labels) {
        if i >= logits1.rows() || label >= k {
            return Err(Error::arg(format!(
                "high-confidence entry ({i}, {label}) out of range"
            )));
        }
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(2);
    for logits in [logits1, logits2] {
        let mut grad = DenseMatrix::zeros(logits.rows(), k);
        let count = hc.len() as f64;
        for (&i, &label) in hc.indices.iter().zip(&hc.labels) {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + denom.ln();
            loss += (lse - row[label]) / count;
            let g = grad.row_mut(i);
            for (j, &z) in row.iter().enumerate() {
                g[j] = (z - lse).exp() / count;
            }
            g[label] -= 1.0 / count;
        }
        grads.push(grad);
    }
    let grad2 = grads.pop().unwrap();
    let grad1 = grads.pop().unwrap();
    Ok((loss, grad1, grad2))
}

/// One training step's loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub semantic: f64,
    pub label_matching: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Whether the label-matching term contributed to `total`.
    pub stage2: bool,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.contrastive.is_finite()
            && self.semantic.is_finite()
            && self.label_matching.is_finite()
            && self.total.is_finite()
    }
}

/// `total = contrastive + alpha * semantic`, plus `beta * label_matching`
/// once the second training stage is active.
pub fn total_loss(
    contrastive: f64,
    semantic: f64,
    label_matching: f64,
    alpha: f64,
    beta: f64,
    stage2: bool,
) -> LossBreakdown {
    let total = if stage2 {
        contrastive + alpha * semantic + beta * label_matching
    } else {
        contrastive + alpha * semantic
    };
    LossBreakdown {
        contrastive,
        semantic,
        label_matching,
        alpha,
        beta,
        stage2,
        total,
    }
}
