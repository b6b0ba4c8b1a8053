//! Attributed graphs: representation, the smoothing filter, and dataset IO.
//!
//! The on-disk dataset format is plain text: `edges.tsv` (one undirected edge
//! per line, two 0-based node indices), `features.csv` (one comma-separated
//! row of reals per node), and an optional `labels.txt` (one class index per
//! line). Node count is the number of feature rows.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct AttributedGraph {
    pub features: DenseMatrix,
    pub adjacency: SparseMatrix,
    pub labels: Option<Vec<usize>>,
    pub num_classes: Option<usize>,
}

impl AttributedGraph {
    pub fn new(
        features: DenseMatrix,
        adjacency: SparseMatrix,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 || features.cols() == 0 {
            return Err(Error::arg("graph must have nodes and features".to_string()));
        }
        if adjacency.rows() != n || adjacency.cols() != n {
            return Err(Error::dim(format!(
                "adjacency {}x{} does not match {n} nodes",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        adjacency.check_invariants()?;
        if !adjacency.is_structurally_symmetric() {
            return Err(Error::arg("adjacency must be symmetric".to_string()));
        }
        for r in 0..n {
            let (cols, vals) = adjacency.row(r);
            if cols.binary_search(&r).is_ok() {
                return Err(Error::arg(format!("adjacency has a self-loop at {r}")));
            }
            if vals.iter().any(|&v| v != 1.0) {
                return Err(Error::arg("adjacency must be binary".to_string()));
            }
        }
        let num_classes = match &labels {
            Some(l) => {
                if l.len() != n {
                    return Err(Error::dim(format!("{} labels for {n} nodes", l.len())));
                }
                Some(l.iter().max().copied().unwrap_or(0) + 1)
            }
            None => None,
        };
        Ok(AttributedGraph {
            features,
            adjacency,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Number of smoothing applications of the normalized graph operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FilterConfig {
    pub layers: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { layers: 2 }
    }
}

/// Symmetrically normalized adjacency with self-loops added:
/// each entry of A + I is divided by the square roots of both endpoint
/// degrees. The result is the smoothing operator applied by
/// [`laplacian_filter`]; subtracting it from I gives the normalized
/// graph Laplacian.
pub fn normalized_adjacency(adjacency: &SparseMatrix) -> Result<SparseMatrix> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(Error::dim("adjacency must be square".to_string()));
    }
    // degrees after adding the self-loop
    let degrees: Vec<f64> = adjacency.row_sums().iter().map(|d| d + 1.0).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();

    let mut entries = Vec::with_capacity(adjacency.nnz() + n);
    for r in 0..n {
        entries.push((r, r, inv_sqrt[r] * inv_sqrt[r]));
        let (cols, vals) = adjacency.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            entries.push((r, c, v * inv_sqrt[r] * inv_sqrt[c]));
        }
    }
    SparseMatrix::from_coo(n, n, &entries)
}

/// Smooth attributes by applying the normalized adjacency `layers` times.
pub fn laplacian_filter(
    features: &DenseMatrix,
    adjacency: &SparseMatrix,
    cfg: FilterConfig,
) -> Result<DenseMatrix> {
    if features.rows() != adjacency.rows() {
        return Err(Error::dim(format!(
            "{} feature rows vs {} adjacency rows",
            features.rows(),
            adjacency.rows()
        )));
    }
    if cfg.layers == 0 {
        return Ok(features.clone());
    }
    let operator = normalized_adjacency(adjacency)?;
    let mut out = operator.spmm(features)?;
    for _ in 1..cfg.layers {
        out = operator.spmm(&out)?;
    }
    Ok(out)
}

/// Apply a dense propagation operator `layers` times; the diffusion
/// augmentation substitutes its dense operator for the sparse one here.
pub fn dense_power_filter(
    features: &DenseMatrix,
    operator: &DenseMatrix,
    layers: usize,
) -> Result<DenseMatrix> {
    let mut out = features.clone();
    for _ in 0..layers {
        out = operator.matmul(&out)?;
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<AttributedGraph> {
    let features = load_features(&dir.join("features.csv"))?;
    let n = features.rows();

    let edges_path = dir.join("edges.tsv");
    let edges_text = fs::read_to_string(&edges_path)
        .map_err(|e| Error::dataset(format!("{}: {e}", edges_path.display())))?;
    let mut edges = Vec::new();
    let mut max_index = None::<usize>;
    for (lineno, line) in edges_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(v), None) => (
                parse_index(u, lineno, "edges.tsv")?,
                parse_index(v, lineno, "edges.tsv")?,
            ),
            _ => {
                return Err(Error::dataset(format!(
                    "edges.tsv line {}: expected two node indices",
                    lineno + 1
                )))
            }
        };
        if u == v {
            return Err(Error::dataset(format!(
                "edges.tsv line {}: self-loop on node {u}",
                lineno + 1
            )));
        }
        if u >= n || v >= n {
            return Err(Error::dataset(format!(
                "edges.tsv line {}: node index out of range ({} nodes)",
                lineno + 1,
                n
            )));
        }
        max_index = Some(max_index.map_or(u.max(v), |m| m.max(u).max(v)));
        edges.push((u, v));
    }
    if let Some(m) = max_index {
        if m + 1 != n {
            return Err(Error::dataset(format!(
                "feature row count {n} does not match max node index + 1 = {}",
                m + 1
            )));
        }
    }
    let adjacency = SparseMatrix::from_undirected_edges(n, &edges)?;

    let labels_path = dir.join("labels.txt");
    let labels = if labels_path.exists() {
        let text = fs::read_to_string(&labels_path)?;
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let l: usize = line.parse().map_err(|_| {
                Error::dataset(format!(
                    "labels.txt line {}: not a non-negative integer: {line:?}",
                    lineno + 1
                ))
            })?;
            labels.push(l);
        }
        if labels.len() != n {
            return Err(Error::dataset(format!(
                "labels.txt has {} entries for {n} nodes",
                labels.len()
            )));
        }
        Some(labels)
    } else {
        None
    };

    AttributedGraph::new(features, adjacency, labels)
}

fn parse_index(tok: &str, lineno: usize, file: &str) -> Result<usize> {
    tok.parse().map_err(|_| {
        Error::dataset(format!(
            "{file} line {}: not a node index: {tok:?}",
            lineno + 1
        ))
    })
}

fn load_features(path: &Path) -> Result<DenseMatrix> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::dataset(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| {
            Error::dataset(format!("features.csv line {}: bad real value", lineno + 1))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::dataset(format!(
                    "features.csv line {}: ragged row ({} vs {})",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::dataset("features.csv is empty".to_string()));
    }
    DenseMatrix::from_rows(&rows)
}

/// Write a graph in the standard dataset layout. Floats use the shortest
/// representation that parses back to the identical bits.
pub fn save_dataset(graph: &AttributedGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut edges = String::new();
    for (u, v) in graph.adjacency.upper_edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write_atomic(&dir.join("edges.tsv"), edges.as_bytes())?;

    let mut feats = String::new();
    for i in 0..graph.features.rows() {
        let row: Vec<String> = graph
            .features
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write_atomic(&dir.join("features.csv"), feats.as_bytes())?;

    if let Some(labels) = &graph.labels {
        let mut text = String::new();
        for l in labels {
            text.push_str(&format!("{l}\n"));
        }
        write_atomic(&dir.join("labels.txt"), text.as_bytes())?;
    }
    Ok(())
}

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|s| s.to_string_lossy())
            .unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, content: &str) {
        fs::write(dir.join(name), content).unwrap();
    }

    #[test]
    fn normalized_adjacency_isolated_node() {
        let a = SparseMatrix::empty(1, 1);
        let norm = normalized_adjacency(&a).unwrap();
        assert_eq!(norm.to_dense().get(0, 0), 1.0);
    }

    #[test]
    fn normalized_adjacency_single_edge() {
        let a = SparseMatrix::from_undirected_edges(2, &[(0, 1)]).unwrap();
        let norm = normalized_adjacency(&a).unwrap().to_dense();
        for i in 0..2 {
            for j in 0..2 {
                assert!((norm.get(i, j) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalized_adjacency_exactly_symmetric() {
        let edges = [(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)];
        let a = SparseMatrix::from_undirected_edges(4, &edges).unwrap();
        let norm = normalized_adjacency(&a).unwrap();
        let d = norm.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        assert!(norm.is_symmetric_flagged());
    }

    #[test]
    fn filter_zero_layers_is_identity() {
        let a = SparseMatrix::from_undirected_edges(2, &[(0, 1)]).unwrap();
        let x = DenseMatrix::identity(2);
        let out = laplacian_filter(&x, &a, FilterConfig { layers: 0 }).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn filter_two_node_path_hand_case() {
        let a = SparseMatrix::from_undirected_edges(2, &[(0, 1)]).unwrap();
        let x = DenseMatrix::identity(2);
        let out = laplacian_filter(&x, &a, FilterConfig { layers: 1 }).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((out.get(i, j) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn filter_composes_additively() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)];
        let a = SparseMatrix::from_undirected_edges(5, &edges).unwrap();
        let mut rng = crate::rng::RngState::new(33);
        let x = DenseMatrix::from_vec(5, 3, (0..15).map(|_| rng.next_range(-1.0, 1.0)).collect())
            .unwrap();
        let both = laplacian_filter(&x, &a, FilterConfig { layers: 5 }).unwrap();
        let first = laplacian_filter(&x, &a, FilterConfig { layers: 2 }).unwrap();
        let chained = laplacian_filter(&first, &a, FilterConfig { layers: 3 }).unwrap();
        for (p, q) in both.values().iter().zip(chained.values()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn deep_filter_converges_to_sqrt_degree_direction() {
        // connected 6-node graph; the dominant eigenvector of the smoothing
        // operator is the square-root-degree vector
        let edges = [
            (0, 1),
            (0, 2),
            (1, 2),
            (2, 3),
            (3, 4),
            (4, 5),
            (3, 5),
            (1, 4),
        ];
        let a = SparseMatrix::from_undirected_edges(6, &edges).unwrap();
        let mut rng = crate::rng::RngState::new(5);
        let x = DenseMatrix::from_vec(6, 2, (0..12).map(|_| rng.next_range(0.5, 1.5)).collect())
            .unwrap();
        let out = laplacian_filter(&x, &a, FilterConfig { layers: 50 }).unwrap();

        let degrees: Vec<f64> = a.row_sums().iter().map(|d| (d + 1.0).sqrt()).collect();
        let dnorm = degrees.iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..out.cols() {
            let col: Vec<f64> = (0..out.rows()).map(|r| out.get(r, c)).collect();
            let cnorm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(cnorm > 0.0);
            for (ci, di) in col.iter().zip(&degrees) {
                assert!(
                    (ci / cnorm - di / dnorm).abs() < 1e-3,
                    "column {c} not aligned with sqrt-degree vector"
                );
            }
        }
    }

    #[test]
    fn load_minimal_dataset() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 1\n");
        write(dir.path(), "features.csv", "1.0,2.0\n3.0,4.0\n");
        write(dir.path(), "labels.txt", "0\n1\n");
        let g = load_dataset(dir.path()).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.adjacency.upper_edges(), vec![(0, 1)]);
        assert_eq!(g.num_classes, Some(2));
    }

    #[test]
    fn load_dedups_reversed_edges() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 1\n1 0\n0 1\n");
        write(dir.path(), "features.csv", "1.0\n2.0\n");
        let g = load_dataset(dir.path()).unwrap();
        assert_eq!(g.adjacency.upper_edges(), vec![(0, 1)]);
    }

    #[test]
    fn load_rejects_self_loops() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 0\n");
        write(dir.path(), "features.csv", "1.0\n");
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn load_rejects_feature_count_mismatch() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 1\n");
        write(dir.path(), "features.csv", "1.0\n2.0\n3.0\n");
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn load_rejects_ragged_features_and_bad_labels() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 1\n");
        write(dir.path(), "features.csv", "1.0,2.0\n3.0\n");
        assert!(load_dataset(dir.path()).is_err());

        write(dir.path(), "features.csv", "1.0\n2.0\n");
        write(dir.path(), "labels.txt", "0\nx\n");
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn load_rejects_missing_files() {
        let dir = tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 1\n1 2\n");
        write(
            dir.path(),
            "features.csv",
            "0.1,0.30000000000000004\n-1.5e-7,2.0\n3.25,0.0\n",
        );
        write(dir.path(), "labels.txt", "0\n1\n0\n");
        let g = load_dataset(dir.path()).unwrap();

        let out = tempdir().unwrap();
        save_dataset(&g, out.path()).unwrap();
        let g2 = load_dataset(out.path()).unwrap();
        assert_eq!(g.features, g2.features);
        assert_eq!(g.adjacency, g2.adjacency);
        assert_eq!(g.labels, g2.labels);
    }
}
