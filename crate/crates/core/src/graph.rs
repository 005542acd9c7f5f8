//! Undirected simple communication graphs and their Laplacian spectra.
//!
//! Node ids are 1-based at the public boundary ([`Graph::new`], [`Graph::edges`])
//! and 0-based everywhere else (neighbor lists, matrix indices).

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Threshold on `λ₂` used when cross-checking connectivity against the spectrum.
pub const TOL_SPECTRAL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("node id {node} out of range 1..={node_count}")]
    NodeOutOfRange { node: usize, node_count: usize },
    #[error("symmetric eigensolver did not converge")]
    EigenSolver,
}

/// An undirected simple graph on nodes `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    // 0-based, each pair stored once with i < j, sorted
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from 1-based edge pairs. Duplicates (in either orientation)
    /// collapse to a single edge.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            for node in [a, b] {
                if node == 0 || node > node_count {
                    return Err(GraphError::NodeOutOfRange { node, node_count });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let (i, j) = if a < b { (a - 1, b - 1) } else { (b - 1, a - 1) };
            set.insert((i, j));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_count];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges,
            neighbors,
        })
    }

    pub fn path(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..n).map(|i| (i, i + 1)).collect();
        Self::new(n, &edges)
    }

    /// Cycle `1-2-…-N-1`. For `N ≤ 2` this is the path graph.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        if n <= 2 {
            return Self::path(n);
        }
        let edges: Vec<_> = (1..=n).map(|i| (i, i % n + 1)).collect();
        Self::new(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for i in 1..=n {
            for j in i + 1..=n {
                edges.push((i, j));
            }
        }
        Self::new(n, &edges)
    }

    /// Star with hub node 1.
    pub fn star(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (2..=n).map(|j| (1, j)).collect();
        Self::new(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as 1-based pairs `(n, ℓ)` with `n < ℓ`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().map(|&(i, j)| (i + 1, j + 1))
    }

    /// 0-based neighbor set `Ω_n` of the 0-based node `n`.
    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.neighbors[n]
    }

    /// Degree of the 0-based node `n`.
    pub fn degree(&self, n: usize) -> usize {
        self.neighbors[n].len()
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.node_count, self.node_count);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// `L = D − A`.
    pub fn laplacian_matrix(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency();
        for n in 0..self.node_count {
            l[(n, n)] = self.degree(n) as f64;
        }
        l
    }

    /// Laplacian together with its full symmetric eigendecomposition.
    pub fn laplacian(&self) -> Result<SpectralData, GraphError> {
        SpectralData::from_laplacian(self.laplacian_matrix())
    }

    /// Breadth-first connectivity test.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(n) = queue.pop_front() {
            for &m in &self.neighbors[n] {
                if !seen[m] {
                    seen[m] = true;
                    reached += 1;
                    queue.push_back(m);
                }
            }
        }
        reached == self.node_count
    }

    /// `L ⊗ I_d`, acting on stacked states `x = (x_1, …, x_N)` with `x_n ∈ R^d`.
    pub fn kron_laplacian(&self, d: usize) -> DMatrix<f64> {
        kron_identity(&self.laplacian_matrix(), d)
    }
}

/// `A ⊗ I_d` for a square `A`.
pub fn kron_identity(a: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            if v != 0.0 {
                for k in 0..d {
                    out[(i * d + k, j * d + k)] = v;
                }
            }
        }
    }
    out
}

/// Laplacian matrix with eigenvalues sorted ascending and matching eigenvectors
/// (columns).
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub laplacian: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralData {
    pub fn from_laplacian(laplacian: DMatrix<f64>) -> Result<Self, GraphError> {
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&laplacian)?;
        Ok(Self {
            laplacian,
            eigenvalues,
            eigenvectors,
        })
    }

    /// Algebraic connectivity. `None` for a single-node graph.
    pub fn lambda2(&self) -> Option<f64> {
        self.eigenvalues.get(1).copied()
    }

    /// `λ₂ > TOL_SPECTRAL`; a single node counts as connected.
    pub fn is_connected(&self) -> bool {
        self.lambda2().is_none_or(|l| l > TOL_SPECTRAL)
    }
}

/// Symmetric eigendecomposition with eigenvalues ascending; eigenvector `i` is
/// column `i` of the returned matrix.
pub(crate) fn sorted_symmetric_eigen(
    m: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>), GraphError> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or(GraphError::EigenSolver)?;
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), m.nrows());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// `1_N ⊗ a`.
pub fn consensus_vector(a: &[f64], n: usize) -> DVector<f64> {
    DVector::from_iterator(a.len() * n, (0..n).flat_map(|_| a.iter().copied()))
}
