//! Hand-written multilayer perceptrons: forward passes that cache what the
//! backward pass needs, gradient accumulation, Adam updates, and a central
//! finite-difference gradient checker.
//!
//! Hidden layers use a rectifier (subgradient 0 at 0); the output layer is
//! linear so embeddings can take any sign before row normalization.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::rng::RngState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearLayer {
    /// out x in
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub grad_weight: DenseMatrix,
    pub grad_bias: Vec<f64>,
}

impl LinearLayer {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut RngState) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let values = (0..out_dim * in_dim)
            .map(|_| rng.next_range(-bound, bound))
            .collect();
        LinearLayer {
            weight: DenseMatrix::from_vec(out_dim, in_dim, values).unwrap(),
            bias: vec![0.0; out_dim],
            grad_weight: DenseMatrix::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// x (n x in) -> x W^T + b (n x out)
    fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = x.matmul_nt(&self.weight)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    fn zero_grad(&mut self) {
        for v in self.grad_weight.values_mut() {
            *v = 0.0;
        }
        for v in self.grad_bias.iter_mut() {
            *v = 0.0;
        }
    }
}

/// Per-layer inputs and pre-activations retained for the backward pass.
/// Consumed by value, so a cache cannot be reused.
#[derive(Debug)]
pub struct ForwardCache {
    inputs: Vec<DenseMatrix>,
    pre_activations: Vec<DenseMatrix>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

impl Mlp {
    /// `dims` chains input through hidden widths to the output width.
    pub fn new(dims: &[usize], rng: &mut RngState) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::glorot(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().unwrap().in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, input: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
        if input.cols() != self.in_dim() {
            return Err(Error::dim(format!(
                "mlp expects {} input columns, got {}",
                self.in_dim(),
                input.cols()
            )));
        }
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre_activations = Vec::with_capacity(depth);
        let mut current = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&current)?;
            inputs.push(current);
            let next = if l + 1 < depth { relu(&z) } else { z.clone() };
            pre_activations.push(z);
            current = next;
        }
        Ok((
            current,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Accumulate parameter gradients and return the gradient with respect to
    /// the forward input.
    pub fn backward(&mut self, cache: ForwardCache, upstream: &DenseMatrix) -> Result<DenseMatrix> {
        let depth = self.layers.len();
        let last = &cache.pre_activations[depth - 1];
        if !upstream.same_shape(last) {
            return Err(Error::dim(format!(
                "upstream {}x{} vs output {}x{}",
                upstream.rows(),
                upstream.cols(),
                last.rows(),
                last.cols()
            )));
        }
        let mut grad = upstream.clone();
        for l in (0..depth).rev() {
            if l + 1 < depth {
                grad = mask_by_positive(&grad, &cache.pre_activations[l]);
            }
            let layer = &mut self.layers[l];
            layer
                .grad_weight
                .add_assign(&grad.matmul_tn(&cache.inputs[l])?)?;
            for i in 0..grad.rows() {
                for (gb, g) in layer.grad_bias.iter_mut().zip(grad.row(i)) {
                    *gb += g;
                }
            }
            grad = grad.matmul(&layer.weight)?;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grad();
        }
    }

    pub fn has_zero_grads(&self) -> bool {
        self.layers.iter().all(|l| {
            l.grad_weight.values().iter().all(|&v| v == 0.0)
                && l.grad_bias.iter().all(|&v| v == 0.0)
        })
    }
}

fn relu(z: &DenseMatrix) -> DenseMatrix {
    let mut out = z.clone();
    for v in out.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Zero `grad` wherever the pre-activation was <= 0.
fn mask_by_positive(grad: &DenseMatrix, pre: &DenseMatrix) -> DenseMatrix {
    let mut out = grad.clone();
    for (g, z) in out.values_mut().iter_mut().zip(pre.values()) {
        if *z <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// Backward pass of `row_l2_normalize`: `normalized` and `norms` come from
/// [`DenseMatrix::row_l2_normalize_with_norms`].
pub fn row_l2_normalize_backward(
    normalized: &DenseMatrix,
    norms: &[f64],
    eps: f64,
    upstream: &DenseMatrix,
) -> DenseMatrix {
    let mut out = upstream.clone();
    for i in 0..out.rows() {
        let y = normalized.row(i);
        let n = norms[i];
        let row = out.row_mut(i);
        if n > eps {
            let dot: f64 = row.iter().zip(y).map(|(g, yi)| g * yi).sum();
            for (g, yi) in row.iter_mut().zip(y) {
                *g = (*g - dot * yi) / n;
            }
        } else {
            for g in row.iter_mut() {
                *g /= eps;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerMoments {
    m_weight: DenseMatrix,
    v_weight: DenseMatrix,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: Vec<LayerMoments>,
}

impl AdamState {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        let moments = mlp
            .layers
            .iter()
            .map(|l| LayerMoments {
                m_weight: DenseMatrix::zeros(l.out_dim(), l.in_dim()),
                v_weight: DenseMatrix::zeros(l.out_dim(), l.in_dim()),
                m_bias: vec![0.0; l.out_dim()],
                v_bias: vec![0.0; l.out_dim()],
            })
            .collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        }
    }

    /// One Adam update with bias correction; gradients are zeroed afterwards.
    pub fn step(&mut self, mlp: &mut Mlp) {
        self.step += 1;
        let t = self.step as i32;
        let corr1 = 1.0 - self.beta1.powi(t);
        let corr2 = 1.0 - self.beta2.powi(t);
        for (layer, mom) in mlp.layers.iter_mut().zip(&mut self.moments) {
            update_tensor(
                layer.weight.values_mut(),
                layer.grad_weight.values_mut(),
                mom.m_weight.values_mut(),
                mom.v_weight.values_mut(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                corr1,
                corr2,
            );
            update_tensor(
                &mut layer.bias,
                &mut layer.grad_bias,
                &mut mom.m_bias,
                &mut mom.v_bias,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                corr1,
                corr2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(
    params: &mut [f64],
    grads: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    corr1: f64,
    corr2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        grads[i] = 0.0;
    }
}

// ---------------------------------------------------------------------------
// Network bundle
// ---------------------------------------------------------------------------

/// The four networks a training run owns: the shared encoder, the attribute
/// perturbation net, the embedding perturbation net, and the recover net.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkBundle {
    pub encoder: Mlp,
    pub attr_perturb: Mlp,
    pub emb_perturb: Mlp,
    pub recover: Mlp,
}

const NET_NAMES: [&str; 4] = ["encoder", "attr_perturb", "emb_perturb", "recover"];

impl NetworkBundle {
    pub fn nets(&self) -> [&Mlp; 4] {
        [
            &self.encoder,
            &self.attr_perturb,
            &self.emb_perturb,
            &self.recover,
        ]
    }

    fn net_mut(&mut self, idx: usize) -> &mut Mlp {
        match idx {
            0 => &mut self.encoder,
            1 => &mut self.attr_perturb,
            2 => &mut self.emb_perturb,
            _ => &mut self.recover,
        }
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.attr_perturb.zero_grad();
        self.emb_perturb.zero_grad();
        self.recover.zero_grad();
    }

    /// Addresses of every parameter tensor as (net, layer, is_bias) triples.
    pub fn tensor_addresses(&self) -> Vec<(usize, usize, bool)> {
        let mut out = Vec::new();
        for (ni, net) in self.nets().iter().enumerate() {
            for li in 0..net.layers.len() {
                out.push((ni, li, false));
                out.push((ni, li, true));
            }
        }
        out
    }

    pub fn tensor_name(&self, addr: (usize, usize, bool)) -> String {
        format!(
            "{}.layer{}.{}",
            NET_NAMES[addr.0],
            addr.1,
            if addr.2 { "bias" } else { "weight" }
        )
    }

    pub fn tensor_len(&self, addr: (usize, usize, bool)) -> usize {
        let layer = &self.nets()[addr.0].layers[addr.1];
        if addr.2 {
            layer.bias.len()
        } else {
            layer.weight.values().len()
        }
    }

    pub fn tensor_param(&self, addr: (usize, usize, bool), i: usize) -> f64 {
        let layer = &self.nets()[addr.0].layers[addr.1];
        if addr.2 {
            layer.bias[i]
        } else {
            layer.weight.values()[i]
        }
    }

    pub fn tensor_param_set(&mut self, addr: (usize, usize, bool), i: usize, v: f64) {
        let layer = &mut self.net_mut(addr.0).layers[addr.1];
        if addr.2 {
            layer.bias[i] = v;
        } else {
            layer.weight.values_mut()[i] = v;
        }
    }

    pub fn tensor_grad(&self, addr: (usize, usize, bool), i: usize) -> f64 {
        let layer = &self.nets()[addr.0].layers[addr.1];
        if addr.2 {
            layer.grad_bias[i]
        } else {
            layer.grad_weight.values()[i]
        }
    }
}

/// Encoder `feature_dim -> hidden... -> embed_dim`; perturb nets and the
/// recover net are two-layer with hidden width equal to their endpoint width.
pub fn init_bundle(
    feature_dim: usize,
    hidden_dims: &[usize],
    embed_dim: usize,
    rng: &mut RngState,
) -> NetworkBundle {
    let mut encoder_dims = vec![feature_dim];
    encoder_dims.extend_from_slice(hidden_dims);
    encoder_dims.push(embed_dim);
    NetworkBundle {
        encoder: Mlp::new(&encoder_dims, rng),
        attr_perturb: Mlp::new(&[feature_dim, feature_dim, feature_dim], rng),
        emb_perturb: Mlp::new(&[embed_dim, embed_dim, embed_dim], rng),
        recover: Mlp::new(&[embed_dim, embed_dim, embed_dim], rng),
    }
}

/// Optimizer state for all four networks, stepped together.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleOptimizer {
    pub encoder: AdamState,
    pub attr_perturb: AdamState,
    pub emb_perturb: AdamState,
    pub recover: AdamState,
}

impl BundleOptimizer {
    pub fn new(bundle: &NetworkBundle, lr: f64) -> Self {
        BundleOptimizer {
            encoder: AdamState::new(&bundle.encoder, lr),
            attr_perturb: AdamState::new(&bundle.attr_perturb, lr),
            emb_perturb: AdamState::new(&bundle.emb_perturb, lr),
            recover: AdamState::new(&bundle.recover, lr),
        }
    }

    pub fn step(&mut self, bundle: &mut NetworkBundle) {
        self.encoder.step(&mut bundle.encoder);
        self.attr_perturb.step(&mut bundle.attr_perturb);
        self.emb_perturb.step(&mut bundle.emb_perturb);
        self.recover.step(&mut bundle.recover);
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

/// Compare analytic gradients to central finite differences on a random
/// subsample of coordinates per tensor.
///
/// `backward` must zero, then populate, the bundle's gradients and return the
/// loss; `loss_only` must evaluate the same deterministic loss without
/// touching gradients.
pub fn grad_check(
    bundle: &mut NetworkBundle,
    mut backward: impl FnMut(&mut NetworkBundle) -> Result<f64>,
    mut loss_only: impl FnMut(&NetworkBundle) -> Result<f64>,
    step: f64,
    samples_per_tensor: usize,
    rng: &mut RngState,
) -> Result<GradCheckReport> {
    let base = backward(bundle)?;
    if !base.is_finite() {
        return Err(Error::arg(format!("non-finite loss {base} in grad check")));
    }
    let mut entries = Vec::new();
    for addr in bundle.tensor_addresses() {
        let len = bundle.tensor_len(addr);
        let coords = sample_coords(len, samples_per_tensor, rng);
        let mut max_rel: f64 = 0.0;
        for &i in &coords {
            let orig = bundle.tensor_param(addr, i);
            bundle.tensor_param_set(addr, i, orig + step);
            let plus = loss_only(bundle)?;
            bundle.tensor_param_set(addr, i, orig - step);
            let minus = loss_only(bundle)?;
            bundle.tensor_param_set(addr, i, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::arg("non-finite loss in grad check".to_string()));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = bundle.tensor_grad(addr, i);
            let denom = analytic.abs().max(numeric.abs());
            let rel = if denom < 1e-8 {
                0.0
            } else {
                (analytic - numeric).abs() / denom
            };
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry {
            tensor: bundle.tensor_name(addr),
            max_rel_error: max_rel,
            coords_checked: coords.len(),
        });
    }
    Ok(GradCheckReport { entries })
}

fn sample_coords(len: usize, wanted: usize, rng: &mut RngState) -> Vec<usize> {
    if len <= wanted {
        return (0..len).collect();
    }
    // partial Fisher-Yates
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..wanted {
        let j = i + rng.next_usize(len - i);
        idx.swap(i, j);
    }
    idx.truncate(wanted);
    idx
}

#[cfg(test)]
impl NetworkBundle {
    fn net_mut_for_test(&mut self, idx: usize) -> &mut Mlp {
        self.net_mut(idx)
    }
}
