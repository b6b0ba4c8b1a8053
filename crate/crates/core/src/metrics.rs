//! Clustering evaluation: accuracy under optimal cluster-to-class matching,
//! normalized mutual information, adjusted Rand index, and macro F1.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub f1: f64,
}

/// Minimum-cost row-to-column assignment via shortest augmenting paths with
/// potentials. Returns `perm` with `perm[row] = col`.
fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    const INF: f64 = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // augment along the found path
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            perm[matched_row[j] - 1] = j - 1;
        }
    }
    perm
}

/// Optimal row-to-column assignment of a square non-negative count matrix,
/// maximizing the total matched count. Returns `perm` with `perm[row] = col`.
///
/// Ties on total mass are broken toward the assignment with the largest
/// per-class F1 mass `sum 2c / (row_total + col_total)`. The tie-break
/// depends only on the table contents, so relabeling rows or columns cannot
/// change any metric derived from the matching.
pub fn hungarian_match(counts: &[Vec<u64>]) -> Vec<usize> {
    let n = counts.len();
    if n == 0 {
        return Vec::new();
    }
    let max = counts
        .iter()
        .flat_map(|r| r.iter())
        .copied()
        .max()
        .unwrap_or(0) as f64;
    let row_totals: Vec<f64> = counts
        .iter()
        .map(|r| r.iter().map(|&c| c as f64).sum())
        .collect();
    let col_totals: Vec<f64> = (0..n)
        .map(|t| counts.iter().map(|r| r[t] as f64).sum())
        .collect();
    // primary term: integer count deficits scaled past the f1 term's range
    let scale = (n + 1) as f64;
    let cost: Vec<Vec<f64>> = counts
        .iter()
        .enumerate()
        .map(|(p, r)| {
            r.iter()
                .enumerate()
                .map(|(t, &c)| {
                    let c = c as f64;
                    let denom = row_totals[p] + col_totals[t];
                    let f1 = if denom > 0.0 { 2.0 * c / denom } else { 0.0 };
                    (max - c) * scale + (1.0 - f1)
                })
                .collect()
        })
        .collect();
    solve_assignment(&cost)
}

fn contingency(truth: &[usize], pred: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        table[p][t] += 1;
    }
    table
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn choose2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// ACC with Hungarian matching, NMI with arithmetic-mean normalization, the
/// adjusted Rand index, and macro F1 after relabeling predictions through the
/// same optimal matching.
pub fn compute_metrics(truth: &[usize], pred: &[usize]) -> Result<MetricsReport> {
    if truth.is_empty() {
        return Err(Error::arg("empty label arrays".to_string()));
    }
    if truth.len() != pred.len() {
        return Err(Error::dim(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let n = truth.len();
    let nf = n as f64;
    let k = truth
        .iter()
        .chain(pred.iter())
        .max()
        .map(|&m| m + 1)
        .unwrap();

    let table = contingency(truth, pred, k);
    let perm = hungarian_match(&table);
    let matched: u64 = (0..k).map(|p| table[p][perm[p]]).sum();
    let acc = matched as f64 / nf;

    // marginals
    let mut true_counts = vec![0u64; k];
    let mut pred_counts = vec![0u64; k];
    for &t in truth {
        true_counts[t] += 1;
    }
    for &p in pred {
        pred_counts[p] += 1;
    }

    // mutual information
    let mut mi = 0.0;
    for p in 0..k {
        for t in 0..k {
            let c = table[p][t];
            if c == 0 {
                continue;
            }
            let joint = c as f64 / nf;
            mi += joint
                * (joint / ((pred_counts[p] as f64 / nf) * (true_counts[t] as f64 / nf))).ln();
        }
    }
    let h_true = entropy(&true_counts, nf);
    let h_pred = entropy(&pred_counts, nf);
    let nmi = if h_true + h_pred == 0.0 {
        1.0
    } else {
        (2.0 * mi / (h_true + h_pred)).clamp(0.0, 1.0)
    };

    // adjusted Rand index
    let index: f64 = table
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| choose2(c))
        .sum();
    let sum_true: f64 = true_counts.iter().map(|&c| choose2(c)).sum();
    let sum_pred: f64 = pred_counts.iter().map(|&c| choose2(c)).sum();
    let expected = sum_true * sum_pred / choose2(n as u64);
    let max_index = 0.5 * (sum_true + sum_pred);
    let ari = if (max_index - expected).abs() < 1e-12 {
        1.0
    } else {
        (index - expected) / (max_index - expected)
    };

    // macro F1 over the classes observed in the truth, with predictions
    // relabeled through the optimal matching; per class,
    // f1 = 2 tp / (matched cluster size + class size)
    let mut inverse = vec![0usize; k];
    for (p, &t) in perm.iter().enumerate() {
        inverse[t] = p;
    }
    let mut f1_sum = 0.0;
    let mut observed = 0usize;
    for (c, &count) in true_counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        observed += 1;
        let p = inverse[c];
        let tp = table[p][c] as f64;
        f1_sum += 2.0 * tp / (pred_counts[p] as f64 + count as f64);
    }
    let f1 = f1_sum / observed as f64;

    Ok(MetricsReport { acc, nmi, ari, f1 })
}
