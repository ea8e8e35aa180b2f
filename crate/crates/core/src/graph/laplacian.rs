use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GraphError;

pub const LAPLACIAN_FORMAT_VERSION: u32 = 1;

/// Graph Laplacian `L = diag(W 1) - W` of a non-negatively weighted,
/// undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianSystem {
    matrix: Array2<f64>,
    labels: Option<Vec<String>>,
}

impl LaplacianSystem {
    pub fn from_weights(weights: &Array2<f64>) -> Result<Self, GraphError> {
        let (n, m) = weights.dim();
        if n != m || n == 0 {
            return Err(GraphError::Validation(format!("weight matrix must be square and non-empty, got {n}×{m}")));
        }
        for i in 0..n {
            if weights[[i, i]] != 0.0 {
                return Err(GraphError::Validation(format!("weight diagonal entry {i} is non-zero")));
            }
            for j in 0..n {
                let w = weights[[i, j]];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::Validation(format!("weight ({i}, {j}) = {w} is negative or non-finite")));
                }
                if (w - weights[[j, i]]).abs() > 1e-12 {
                    return Err(GraphError::Validation(format!("weights are not symmetric at ({i}, {j})")));
                }
            }
        }
        let mut matrix = -weights.clone();
        for i in 0..n {
            matrix[[i, i]] = weights.row(i).sum();
        }
        Ok(Self { matrix, labels: None })
    }

    /// Wraps an existing Laplacian after checking symmetry, zero row sums
    /// and the sign pattern.
    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self, GraphError> {
        let (n, m) = matrix.dim();
        if n != m || n == 0 {
            return Err(GraphError::Validation(format!("Laplacian must be square and non-empty, got {n}×{m}")));
        }
        for i in 0..n {
            let row_sum: f64 = matrix.row(i).sum();
            let scale = matrix[[i, i]].abs().max(1.0);
            if row_sum.abs() > 1e-10 * scale {
                return Err(GraphError::Validation(format!("row {i} sums to {row_sum}, expected 0")));
            }
            if matrix[[i, i]] < 0.0 {
                return Err(GraphError::Validation(format!("diagonal entry {i} is negative")));
            }
            for j in 0..n {
                if !matrix[[i, j]].is_finite() {
                    return Err(GraphError::Validation(format!("entry ({i}, {j}) is not finite")));
                }
                if i != j && matrix[[i, j]] > 0.0 {
                    return Err(GraphError::Validation(format!("off-diagonal entry ({i}, {j}) is positive")));
                }
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-12 {
                    return Err(GraphError::Validation(format!("Laplacian is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { matrix, labels: None })
    }

    /// Erdős–Rényi graph with independent edge probability `p` and edge
    /// weights uniform on `weight_range`.
    pub fn random(n: usize, p: f64, weight_range: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(p) {
                    let v = rng.random_range(weight_range.0..weight_range.1);
                    w[[i, j]] = v;
                    w[[j, i]] = v;
                }
            }
        }
        Self::from_weights(&w).expect("generated weights are valid")
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, GraphError> {
        if labels.len() != self.n() {
            return Err(GraphError::Validation(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Label of node `i`, falling back to its index.
    pub fn label(&self, i: usize) -> String {
        self.labels
            .as_ref()
            .and_then(|l| l.get(i).cloned())
            .unwrap_or_else(|| i.to_string())
    }

    pub fn node_index(&self, label: &str) -> Option<usize> {
        match &self.labels {
            Some(l) => l.iter().position(|x| x == label),
            None => label.parse().ok().filter(|i| *i < self.n()),
        }
    }

    /// `out = L c`.
    pub fn apply(&self, c: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let row = self.matrix.row(i);
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * c[j];
            }
            out[i] = acc;
        }
    }

    /// Reads either a dense `N×N` Laplacian or an edge list.
    ///
    /// Lines starting with `#` are comments; `# format_version: 1` is
    /// accepted. An edge list starts with the header `i,j,weight` and
    /// describes the weight matrix (each undirected edge once). A dense file
    /// holds the Laplacian itself, optionally preceded by a header row of
    /// node labels.
    pub fn read_csv(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self, GraphError> {
        let mut lines = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("format_version:") {
                    let v: u32 = v.trim().parse().map_err(|_| GraphError::Parse("bad format_version".into()))?;
                    if v != LAPLACIAN_FORMAT_VERSION {
                        return Err(GraphError::Parse(format!("unsupported format_version {v}")));
                    }
                }
                continue;
            }
            lines.push(line);
        }
        let Some(first) = lines.first() else {
            return Err(GraphError::Parse("empty Laplacian file".into()));
        };
        let header: Vec<&str> = first.split(',').map(str::trim).collect();
        if header == ["i", "j", "weight"] {
            return Self::parse_edge_list(&lines[1..]);
        }
        let parse_row = |line: &str, lineno: usize| -> Result<Vec<f64>, GraphError> {
            line.split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| GraphError::Parse(format!("row {lineno}: '{}' is not a number", f.trim())))
                })
                .collect()
        };
        let (labels, body) = if header.iter().any(|f| f.parse::<f64>().is_err()) {
            (Some(header.iter().map(|s| s.to_string()).collect::<Vec<_>>()), &lines[1..])
        } else {
            (None, &lines[..])
        };
        let rows: Vec<Vec<f64>> = body
            .iter()
            .enumerate()
            .map(|(i, l)| parse_row(l, i))
            .collect::<Result<_, _>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(GraphError::Parse(format!("dense Laplacian must be {n}×{n}")));
        }
        let matrix = Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect())
            .expect("checked shape");
        let sys = Self::from_matrix(matrix)?;
        match labels {
            Some(l) => sys.with_labels(l),
            None => Ok(sys),
        }
    }

    fn parse_edge_list(lines: &[&str]) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for (k, line) in lines.iter().enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(GraphError::Parse(format!("edge line {k}: expected i,j,weight")));
            }
            let i: usize = f[0].parse().map_err(|_| GraphError::Parse(format!("edge line {k}: bad node index")))?;
            let j: usize = f[1].parse().map_err(|_| GraphError::Parse(format!("edge line {k}: bad node index")))?;
            let w: f64 = f[2].parse().map_err(|_| GraphError::Parse(format!("edge line {k}: bad weight")))?;
            edges.push((i, j, w));
        }
        let n = edges.iter().map(|(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
        let mut w = Array2::zeros((n, n));
        for (i, j, v) in edges {
            if i == j {
                return Err(GraphError::Validation(format!("self-loop at node {i}")));
            }
            w[[i, j]] += v;
            w[[j, i]] += v;
        }
        Self::from_weights(&w)
    }

    /// Dense CSV, with a label header when labels are set.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# format_version: {LAPLACIAN_FORMAT_VERSION}\n");
        if let Some(l) = &self.labels {
            out.push_str(&l.join(","));
            out.push('\n');
        }
        for row in self.matrix.rows() {
            let fields: Vec<String> = row.iter().map(|v| format!("{}", v + 0.0)).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_node_graph() {
        let sys = LaplacianSystem::from_weights(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(sys.matrix(), &array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn isolated_node_has_zero_row() {
        let w = array![[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let sys = LaplacianSystem::from_weights(&w).unwrap();
        assert!(sys.matrix().row(2).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(LaplacianSystem::from_weights(&array![[0.0, 1.0], [2.0, 0.0]]).is_err());
        assert!(LaplacianSystem::from_weights(&array![[0.0, -1.0], [-1.0, 0.0]]).is_err());
        assert!(LaplacianSystem::from_weights(&array![[1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(LaplacianSystem::from_matrix(array![[1.0, -0.5], [-0.5, 1.0]]).is_err());
    }

    #[test]
    fn random_graph_satisfies_invariants() {
        let sys = LaplacianSystem::random(12, 0.3, (0.5, 1.5), 4);
        let l = sys.matrix();
        for i in 0..12 {
            assert!(l.row(i).sum().abs() <= 1e-10);
            assert!(l[[i, i]] >= 0.0);
            for j in 0..12 {
                assert!((l[[i, j]] - l[[j, i]]).abs() <= 1e-12);
                if i != j {
                    assert!(l[[i, j]] <= 0.0);
                }
            }
        }
        assert_eq!(sys, LaplacianSystem::random(12, 0.3, (0.5, 1.5), 4));
    }

    #[test]
    fn csv_roundtrip_and_edge_list() {
        let sys = LaplacianSystem::random(5, 0.5, (0.5, 1.5), 2)
            .with_labels(vec!["EC".into(), "MTG".into(), "STG".into(), "A".into(), "B".into()])
            .unwrap();
        let back = LaplacianSystem::parse_csv(&sys.to_csv()).unwrap();
        assert_eq!(back, sys);
        assert_eq!(back.node_index("STG"), Some(2));

        let edges = "i,j,weight\n0,1,1.0\n1,2,0.5\n";
        let sys = LaplacianSystem::parse_csv(edges).unwrap();
        assert_eq!(sys.matrix(), &array![[1.0, -1.0, 0.0], [-1.0, 1.5, -0.5], [0.0, -0.5, 0.5]]);
    }

    #[test]
    fn csv_errors() {
        assert!(LaplacianSystem::parse_csv("").is_err());
        assert!(LaplacianSystem::parse_csv("1,-1\n-1\n").is_err());
        assert!(LaplacianSystem::parse_csv("# format_version: 9\n1,-1\n-1,1\n").is_err());
        assert!(LaplacianSystem::parse_csv("i,j,weight\n0,x,1\n").is_err());
    }
}
