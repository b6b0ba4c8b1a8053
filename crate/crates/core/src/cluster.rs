//! K-means with restarts, high-confidence pseudo-label selection, embedding
//! fusion, and semantic label distributions.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::rng::RngState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        KMeansConfig {
            k,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// k x d
    pub centroids: DenseMatrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid with ties broken by the lowest cluster id.
fn nearest(point: &[f64], centroids: &DenseMatrix) -> (usize, f64) {
    let mut best = (0, sq_dist(point, centroids.row(0)));
    for c in 1..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(data: &DenseMatrix, k: usize, rng: &mut RngState) -> DenseMatrix {
    let n = data.rows();
    let d = data.cols();
    let mut centroids = DenseMatrix::zeros(k, d);
    let first = rng.next_usize(n);
    centroids.row_mut(0).copy_from_slice(data.row(first));

    let mut dist2: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let pick = if total <= 0.0 {
            rng.next_usize(n)
        } else {
            let r = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                acc += w;
                if r < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.row_mut(c).copy_from_slice(data.row(pick));
        for i in 0..n {
            let d2 = sq_dist(data.row(i), centroids.row(c));
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
        }
    }
    centroids
}

fn lloyd(
    data: &DenseMatrix,
    mut centroids: DenseMatrix,
    cfg: &KMeansConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> KMeansResult {
    let n = data.rows();
    let d = data.cols();
    let k = cfg.k;
    let mut assignments = vec![0usize; n];
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, dist) = nearest(data.row(i), &centroids);
            assignments[i] = c;
            inertia += dist;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(inertia);
        }

        let mut sums = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }

        // reseed empty clusters to the point farthest from its centroid
        let mut point_dist: Vec<f64> = (0..n)
            .map(|i| sq_dist(data.row(i), centroids.row(assignments[i])))
            .collect();
        let mut new_centroids = DenseMatrix::zeros(k, d);
        for c in 0..k {
            if counts[c] > 0 {
                for (j, s) in sums.row(c).iter().enumerate() {
                    new_centroids.set(c, j, s / counts[c] as f64);
                }
            } else {
                let far = point_dist
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                new_centroids.row_mut(c).copy_from_slice(data.row(far));
                point_dist[far] = f64::NEG_INFINITY;
            }
        }

        let shift = (0..k)
            .map(|c| sq_dist(new_centroids.row(c), centroids.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = new_centroids;
        iterations += 1;
        if shift < cfg.tol {
            break;
        }
    }

    // final assignment against the final centroids
    let mut inertia = 0.0;
    for i in 0..n {
        let (c, dist) = nearest(data.row(i), &centroids);
        assignments[i] = c;
        inertia += dist;
    }
    KMeansResult {
        centroids,
        assignments,
        inertia,
        iterations,
    }
}

/// Best-inertia result over `cfg.restarts` k-means++ initializations. Equal
/// inertias keep the earlier restart, so the outcome is deterministic.
pub fn kmeans(data: &DenseMatrix, cfg: &KMeansConfig, rng: &mut RngState) -> Result<KMeansResult> {
    let n = data.rows();
    if cfg.k == 0 || n < cfg.k {
        return Err(Error::arg(format!(
            "kmeans needs 1 <= k <= n, got k={} n={n}",
            cfg.k
        )));
    }
    let restarts = cfg.restarts.max(1);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let init = plus_plus_init(data, cfg.k, rng);
        let run = lloyd(data, init, cfg, None);
        let better = match &best {
            Some(b) => run.inertia < b.inertia,
            None => true,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
pub(crate) fn lloyd_inertia_trace(
    data: &DenseMatrix,
    cfg: &KMeansConfig,
    rng: &mut RngState,
) -> Vec<f64> {
    let init = plus_plus_init(data, cfg.k, rng);
    let mut trace = Vec::new();
    lloyd(data, init, cfg, Some(&mut trace));
    trace
}

/// Entrywise mean of two equally shaped embedding matrices.
pub fn fuse_embeddings(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(a.add(b)?.scale(0.5))
}

/// Relabel a clustering so its ids agree with a previous assignment as much
/// as possible. Cold-started K-means hands out arbitrary ids each epoch;
/// without this, losses that treat ids as persistent classes chase a
/// permuting target.
pub fn align_cluster_ids(result: &mut KMeansResult, previous: &[usize]) -> Result<()> {
    let k = result.centroids.rows();
    if previous.len() != result.assignments.len() {
        return Err(Error::dim(format!(
            "{} previous labels vs {} assignments",
            previous.len(),
            result.assignments.len()
        )));
    }
    if previous.iter().any(|&p| p >= k) {
        return Err(Error::arg("previous label out of range".to_string()));
    }
    let mut table = vec![vec![0u64; k]; k];
    for (&cur, &prev) in result.assignments.iter().zip(previous) {
        table[cur][prev] += 1;
    }
    let perm = crate::metrics::hungarian_match(&table);
    for a in result.assignments.iter_mut() {
        *a = perm[*a];
    }
    let mut centroids = DenseMatrix::zeros(k, result.centroids.cols());
    for c in 0..k {
        centroids
            .row_mut(perm[c])
            .copy_from_slice(result.centroids.row(c));
    }
    result.centroids = centroids;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HighConfidenceSet {
    /// Selected sample ids, ascending.
    pub indices: Vec<usize>,
    /// Cluster pseudo-labels aligned with `indices`.
    pub labels: Vec<usize>,
    /// Margin-ratio confidence aligned with `indices`.
    pub confidences: Vec<f64>,
    pub tau: f64,
}

impl HighConfidenceSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Keep the `ceil(tau * n)` samples whose margin ratio `1 - d1/d2` between the
/// nearest and second-nearest centroid is largest. A sample exactly midway
/// between two centroids has confidence 0; with a single cluster every sample
/// has confidence 1.
pub fn select_high_confidence(
    result: &KMeansResult,
    data: &DenseMatrix,
    tau: f64,
) -> Result<HighConfidenceSet> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::arg(format!("tau {tau} outside (0,1]")));
    }
    let n = data.rows();
    let k = result.centroids.rows();
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        let conf = if k == 1 {
            1.0
        } else {
            let mut d1 = f64::INFINITY;
            let mut d2 = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(data.row(i), result.centroids.row(c)).sqrt();
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                } else if d < d2 {
                    d2 = d;
                }
            }
            if d2 == 0.0 {
                0.0
            } else {
                1.0 - d1 / d2
            }
        };
        scored.push((i, conf));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let count = ((tau * n as f64).ceil() as usize).min(n).max(1);
    let mut selected: Vec<(usize, f64)> = scored.into_iter().take(count).collect();
    selected.sort_by_key(|&(i, _)| i);

    Ok(HighConfidenceSet {
        indices: selected.iter().map(|&(i, _)| i).collect(),
        labels: selected
            .iter()
            .map(|&(i, _)| result.assignments[i])
            .collect(),
        confidences: selected.iter().map(|&(_, c)| c).collect(),
        tau,
    })
}

/// Row-softmax of embedding logits, one distribution over `k` classes per row.
pub fn semantic_labels(logits: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    if logits.cols() != k {
        return Err(Error::dim(format!(
            "semantic labels need {k} columns, got {}",
            logits.cols()
        )));
    }
    Ok(logits.row_softmax())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn separated_duplicate_pairs_get_their_own_cluster() {
        let data = matrix(&[&[0.0, 0.0], &[0.0, 0.0], &[10.0, 10.0], &[10.0, 10.0]]);
        let mut rng = RngState::new(1);
        let res = kmeans(&data, &KMeansConfig::new(2), &mut rng).unwrap();
        assert_eq!(res.assignments[0], res.assignments[1]);
        assert_eq!(res.assignments[2], res.assignments[3]);
        assert_ne!(res.assignments[0], res.assignments[2]);
        assert!(res.inertia < 1e-12);
    }

    #[test]
    fn identical_points_deterministic_under_tie_rule() {
        let data = matrix(&[&[1.0], &[1.0], &[1.0]]);
        let mut rng = RngState::new(2);
        let res = kmeans(&data, &KMeansConfig::new(2), &mut rng).unwrap();
        assert!(res.inertia < 1e-12);
        // ties go to the lowest cluster id
        assert!(res.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn kmeans_rejects_k_larger_than_n() {
        let data = matrix(&[&[1.0], &[2.0]]);
        let mut rng = RngState::new(3);
        assert!(kmeans(&data, &KMeansConfig::new(3), &mut rng).is_err());
    }

    /// Exhaustive search over all assignments of 12 points to 3 clusters.
    fn brute_force_best_inertia(data: &DenseMatrix, k: usize) -> (f64, Vec<usize>) {
        let n = data.rows();
        let d = data.cols();
        let total = k.pow(n as u32);
        let mut best = (f64::INFINITY, vec![0; n]);
        for code in 0..total {
            let mut assign = vec![0usize; n];
            let mut c = code;
            for a in assign.iter_mut() {
                *a = c % k;
                c /= k;
            }
            let mut counts = vec![0usize; k];
            for &a in &assign {
                counts[a] += 1;
            }
            if counts.contains(&0) {
                continue;
            }
            let mut means = vec![vec![0.0; d]; k];
            for (i, &a) in assign.iter().enumerate() {
                for (m, x) in means[a].iter_mut().zip(data.row(i)) {
                    *m += x;
                }
            }
            for (m, &c) in means.iter_mut().zip(&counts) {
                for v in m.iter_mut() {
                    *v /= c as f64;
                }
            }
            let inertia: f64 = assign
                .iter()
                .enumerate()
                .map(|(i, &a)| sq_dist(data.row(i), &means[a]))
                .sum();
            if inertia < best.0 {
                best = (inertia, assign);
            }
        }
        best
    }

    #[test]
    fn kmeans_matches_brute_force_on_separated_gaussians() {
        let mut rng = RngState::new(7);
        let centers = [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]];
        let mut rows = Vec::new();
        for c in &centers {
            for _ in 0..4 {
                rows.push(vec![
                    c[0] + 0.5 * rng.next_normal(),
                    c[1] + 0.5 * rng.next_normal(),
                ]);
            }
        }
        let data = DenseMatrix::from_rows(&rows).unwrap();
        let (best_inertia, best_assign) = brute_force_best_inertia(&data, 3);
        let res = kmeans(&data, &KMeansConfig::new(3), &mut rng).unwrap();
        assert!(
            (res.inertia - best_inertia).abs() < 1e-9,
            "kmeans {} vs brute force {}",
            res.inertia,
            best_inertia
        );
        // same partition up to relabeling
        for i in 0..data.rows() {
            for j in 0..data.rows() {
                assert_eq!(
                    res.assignments[i] == res.assignments[j],
                    best_assign[i] == best_assign[j]
                );
            }
        }
    }

    #[test]
    fn lloyd_inertia_is_non_increasing() {
        let mut rng = RngState::new(11);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.next_range(-1.0, 1.0), rng.next_range(-1.0, 1.0)])
            .collect();
        let data = DenseMatrix::from_rows(&rows).unwrap();
        let trace = lloyd_inertia_trace(&data, &KMeansConfig::new(4), &mut rng);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "inertia increased: {w:?}");
        }
    }

    #[test]
    fn align_cluster_ids_recovers_a_permutation() {
        let data = matrix(&[&[0.0], &[0.1], &[5.0], &[5.1], &[9.0]]);
        let mut rng = RngState::new(21);
        let mut res = kmeans(&data, &KMeansConfig::new(3), &mut rng).unwrap();
        // previous epoch used a different id order for the same partition
        let relabel = [2usize, 0, 1];
        let previous: Vec<usize> = res.assignments.iter().map(|&a| relabel[a]).collect();
        let inertia = res.inertia;
        align_cluster_ids(&mut res, &previous).unwrap();
        assert_eq!(res.assignments, previous);
        assert_eq!(res.inertia, inertia);
        // assignments still point at the nearest centroid
        for i in 0..data.rows() {
            let (c, _) = nearest(data.row(i), &res.centroids);
            assert_eq!(c, res.assignments[i]);
        }
    }

    #[test]
    fn fuse_embeddings_cases() {
        let a = matrix(&[&[2.0, 0.0]]);
        let b = matrix(&[&[0.0, 2.0]]);
        let fused = fuse_embeddings(&a, &b).unwrap();
        assert_eq!(fused.row(0), &[1.0, 1.0]);
        assert_eq!(fuse_embeddings(&a, &a).unwrap(), a);
        let neg = a.scale(-1.0);
        assert!(fuse_embeddings(&a, &neg)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn select_all_when_tau_is_one() {
        let data = matrix(&[&[0.0], &[1.0], &[10.0], &[11.0]]);
        let mut rng = RngState::new(4);
        let res = kmeans(&data, &KMeansConfig::new(2), &mut rng).unwrap();
        let hc = select_high_confidence(&res, &data, 1.0).unwrap();
        assert_eq!(hc.indices, vec![0, 1, 2, 3]);
        for (&i, &l) in hc.indices.iter().zip(&hc.labels) {
            assert_eq!(l, res.assignments[i]);
        }
    }

    #[test]
    fn select_count_uses_inclusive_ceiling() {
        let data = matrix(&[&[0.0], &[1.0], &[10.0], &[11.0]]);
        let mut rng = RngState::new(5);
        let res = kmeans(&data, &KMeansConfig::new(2), &mut rng).unwrap();
        let hc = select_high_confidence(&res, &data, 0.75).unwrap();
        assert_eq!(hc.len(), 3);
    }

    #[test]
    fn midway_sample_has_zero_confidence_and_ranks_last() {
        // fixed centroids at 0 and 10; 5.0 is exactly midway
        let data = matrix(&[&[0.0], &[0.0], &[10.0], &[10.0], &[5.0]]);
        let res = KMeansResult {
            centroids: matrix(&[&[0.0], &[10.0]]),
            assignments: vec![0, 0, 1, 1, 0],
            inertia: 25.0,
            iterations: 1,
        };
        let hc = select_high_confidence(&res, &data, 1.0).unwrap();
        let pos = hc.indices.iter().position(|&i| i == 4).unwrap();
        assert!(hc.confidences[pos].abs() < 1e-12);
        let hc4 = select_high_confidence(&res, &data, 0.8).unwrap();
        assert!(!hc4.indices.contains(&4));
    }

    #[test]
    fn selection_threshold_separates_confidences() {
        let mut rng = RngState::new(8);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.next_range(-1.0, 1.0), rng.next_range(-1.0, 1.0)])
            .collect();
        let data = DenseMatrix::from_rows(&rows).unwrap();
        let res = kmeans(&data, &KMeansConfig::new(3), &mut rng).unwrap();
        let hc = select_high_confidence(&res, &data, 0.5).unwrap();
        assert_eq!(hc.len(), 15);
        let selected_min = hc.confidences.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        for i in 0..30 {
            if !hc.indices.contains(&i) {
                let mut d1 = f64::INFINITY;
                let mut d2 = f64::INFINITY;
                for c in 0..3 {
                    let d = sq_dist(data.row(i), res.centroids.row(c)).sqrt();
                    if d < d1 {
                        d2 = d1;
                        d1 = d;
                    } else if d < d2 {
                        d2 = d;
                    }
                }
                let conf = 1.0 - d1 / d2;
                assert!(selected_min >= conf - 1e-12);
            }
        }
    }

    #[test]
    fn semantic_labels_rows_are_distributions() {
        let logits = matrix(&[&[0.0, 0.0, 0.0, 0.0], &[20.0, 0.0, 0.0, 0.0]]);
        let p = semantic_labels(&logits, 4).unwrap();
        for j in 0..4 {
            assert!((p.get(0, j) - 0.25).abs() < 1e-12);
        }
        assert!(p.get(1, 0) > 0.999);
        for i in 0..2 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(semantic_labels(&logits, 3).is_err());
    }
}
