//! Classical graph augmentations used as ablation baselines: feature masking,
//! edge dropping/adding, and personalized-PageRank diffusion.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::normalized_adjacency;
use crate::rng::RngState;
use crate::sparse::SparseMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

/// Which second-view construction a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AugmentationSpec {
    /// The learnable perturb network (the default training path).
    Learnable,
    FeatureMask {
        rate: f64,
    },
    EdgeRemove {
        rate: f64,
    },
    EdgeAdd {
        rate: f64,
    },
    Diffusion {
        teleport: f64,
    },
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentationSpec::Learnable => Ok(()),
            AugmentationSpec::FeatureMask { rate }
            | AugmentationSpec::EdgeRemove { rate }
            | AugmentationSpec::EdgeAdd { rate } => {
                if (0.0..=1.0).contains(&rate) {
                    Ok(())
                } else {
                    Err(Error::arg(format!(
                        "augmentation rate {rate} outside [0,1]"
                    )))
                }
            }
            AugmentationSpec::Diffusion { teleport } => {
                if teleport > 0.0 && teleport < 1.0 {
                    Ok(())
                } else {
                    Err(Error::arg(format!("teleport {teleport} outside (0,1)")))
                }
            }
        }
    }
}

impl fmt::Display for AugmentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentationSpec::Learnable => write!(f, "learnable"),
            AugmentationSpec::FeatureMask { rate } => write!(f, "feature-mask:{rate}"),
            AugmentationSpec::EdgeRemove { rate } => write!(f, "edge-remove:{rate}"),
            AugmentationSpec::EdgeAdd { rate } => write!(f, "edge-add:{rate}"),
            AugmentationSpec::Diffusion { teleport } => write!(f, "diffusion:{teleport}"),
        }
    }
}

impl FromStr for AugmentationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let parse_rate = |a: Option<&str>, default: f64| -> Result<f64> {
            match a {
                Some(a) => a
                    .parse()
                    .map_err(|_| Error::arg(format!("bad augmentation rate {a:?}"))),
                None => Ok(default),
            }
        };
        let spec = match name {
            "learnable" => AugmentationSpec::Learnable,
            "feature-mask" => AugmentationSpec::FeatureMask {
                rate: parse_rate(arg, 0.1)?,
            },
            "edge-remove" => AugmentationSpec::EdgeRemove {
                rate: parse_rate(arg, 0.1)?,
            },
            "edge-add" => AugmentationSpec::EdgeAdd {
                rate: parse_rate(arg, 0.1)?,
            },
            "diffusion" => AugmentationSpec::Diffusion {
                teleport: parse_rate(arg, 0.1)?,
            },
            other => return Err(Error::arg(format!("unknown augmentation {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Zero each entry independently with probability `rate`.
pub fn feature_mask(x: &DenseMatrix, rate: f64, rng: &mut RngState) -> Result<DenseMatrix> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::arg(format!("mask rate {rate} outside [0,1]")));
    }
    let mut out = x.clone();
    for v in out.values_mut() {
        if rng.next_f64() < rate {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Drop each undirected edge independently with probability `rate`.
pub fn edge_remove(a: &SparseMatrix, rate: f64, rng: &mut RngState) -> Result<SparseMatrix> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::arg(format!("remove rate {rate} outside [0,1]")));
    }
    let kept: Vec<(usize, usize)> = a
        .upper_edges()
        .into_iter()
        .filter(|_| rng.next_f64() >= rate)
        .collect();
    SparseMatrix::from_undirected_edges(a.rows(), &kept)
}

/// Add `floor(rate * |E|)` new undirected edges sampled uniformly from the
/// non-edges. Errors when the graph has no room for them.
pub fn edge_add(a: &SparseMatrix, rate: f64, rng: &mut RngState) -> Result<SparseMatrix> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::arg(format!("add rate {rate} outside [0,1]")));
    }
    let n = a.rows();
    let mut edges = a.upper_edges();
    let existing: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let possible = n * (n - 1) / 2;
    let non_edges = possible - existing.len();
    let wanted = (rate * existing.len() as f64).floor() as usize;
    if rate > 0.0 && non_edges == 0 {
        return Err(Error::arg("no non-edges available".to_string()));
    }
    if wanted > non_edges {
        return Err(Error::arg(format!(
            "cannot add {wanted} edges, only {non_edges} non-edges available"
        )));
    }
    let mut chosen = HashSet::new();
    while chosen.len() < wanted {
        let u = rng.next_usize(n);
        let v = rng.next_usize(n);
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if existing.contains(&e) || chosen.contains(&e) {
            continue;
        }
        chosen.insert(e);
        edges.push(e);
    }
    SparseMatrix::from_undirected_edges(n, &edges)
}

/// Personalized-PageRank diffusion operator: `teleport * inv(I - (1-teleport) * S)`
/// where `S` is the normalized adjacency with self-loops. Computed by a dense
/// LU solve, so it is meant for desk-scale graphs.
pub fn ppr_diffusion(a: &SparseMatrix, teleport: f64) -> Result<DenseMatrix> {
    if !(teleport > 0.0 && teleport < 1.0) {
        return Err(Error::arg(format!("teleport {teleport} outside (0,1)")));
    }
    let n = a.rows();
    let s = normalized_adjacency(a)?.to_dense();
    // system matrix I - (1-a)S
    let mut m = s.scale(-(1.0 - teleport));
    for i in 0..n {
        m.set(i, i, m.get(i, i) + 1.0);
    }
    let rhs = DenseMatrix::identity(n).scale(teleport);
    lu_solve(&m, &rhs)
}

/// Solve `a * x = b` by LU with partial pivoting. `a` must be square.
fn lu_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::dim(
            "lu_solve expects square a and matching b".to_string(),
        ));
    }
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for col in 0..n {
        let mut pivot = col;
        let mut best = lu.get(col, col).abs();
        for r in col + 1..n {
            let v = lu.get(r, col).abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if best == 0.0 {
            return Err(Error::arg("singular system in diffusion solve".to_string()));
        }
        if pivot != col {
            perm.swap(col, pivot);
            for j in 0..n {
                let tmp = lu.get(col, j);
                lu.set(col, j, lu.get(pivot, j));
                lu.set(pivot, j, tmp);
            }
        }
        let d = lu.get(col, col);
        for r in col + 1..n {
            let f = lu.get(r, col) / d;
            lu.set(r, col, f);
            for j in col + 1..n {
                lu.set(r, j, lu.get(r, j) - f * lu.get(col, j));
            }
        }
    }

    let k = b.cols();
    let mut x = DenseMatrix::zeros(n, k);
    for c in 0..k {
        // forward substitution on the permuted rhs
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b.get(perm[i], c);
            for j in 0..i {
                s -= lu.get(i, j) * y[j];
            }
            y[i] = s;
        }
        // back substitution
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= lu.get(i, j) * x.get(j, c);
            }
            x.set(i, c, s / lu.get(i, i));
        }
    }
    Ok(x)
}
