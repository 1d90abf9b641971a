//! Spatial abundance prior on the 4-connected pixel lattice.
//!
//! The energy is `(beta1 / 2) Tr(A^T L A) - (beta2 / 2) Tr(A^T A)`: a
//! weighted-Laplacian smoothness term and a negative quadratic that pushes
//! abundances toward simplex vertices.

use nalgebra::{DMatrix, DVector};

use crate::cube::SpectralCube;
use crate::error::{Error, Result};

/// Sparse weighted graph Laplacian `L = diag(W 1) - W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    neighbors: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
}

impl Laplacian {
    /// Builds `L` from undirected weighted edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        let mut degree = vec![0.0; n];
        for &(a, b, w) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidArgument(format!("bad edge ({a}, {b})")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidArgument(format!("edge weight {w} must be finite and >= 0")));
            }
            neighbors[a].push((b, w));
            neighbors[b].push((a, w));
            degree[a] += w;
            degree[b] += w;
        }
        Ok(Laplacian { neighbors, degree })
    }

    pub fn n_nodes(&self) -> usize {
        self.degree.len()
    }

    pub fn neighbors(&self, n: usize) -> &[(usize, f64)] {
        &self.neighbors[n]
    }

    pub fn degree(&self, n: usize) -> f64 {
        self.degree[n]
    }

    /// `L X` for an `N x M` matrix.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for n in 0..self.n_nodes() {
            for c in 0..x.ncols() {
                let mut v = self.degree[n] * x[(n, c)];
                for &(m, w) in &self.neighbors[n] {
                    v -= w * x[(m, c)];
                }
                out[(n, c)] = v;
            }
        }
        out
    }

    /// `Tr(X^T L X) = sum over edges of w ||x_n - x_m||^2`.
    pub fn quadratic_form(&self, x: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for n in 0..self.n_nodes() {
            for &(m, w) in &self.neighbors[n] {
                if m > n {
                    total += w * (x.row(n) - x.row(m)).norm_squared();
                }
            }
        }
        total
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut l = DMatrix::zeros(n, n);
        for a in 0..n {
            l[(a, a)] = self.degree[a];
            for &(b, w) in &self.neighbors[a] {
                l[(a, b)] -= w;
            }
        }
        l
    }
}

/// Lattice edges between horizontally and vertically adjacent pixels of a
/// row-major `rows x cols` image.
pub fn lattice_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let n = r * cols + c;
            if c + 1 < cols {
                edges.push((n, n + 1));
            }
            if r + 1 < rows {
                edges.push((n, n + cols));
            }
        }
    }
    edges
}

/// Laplacian with weights `w_nm = exp(-||y_n - y_m||^2 / (2 B eta^2))`.
pub fn build_laplacian(cube: &SpectralCube, eta: f64) -> Result<Laplacian> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth eta = {eta} must be positive")));
    }
    let b = cube.n_bands() as f64;
    let data = cube.data();
    let edges: Vec<(usize, usize, f64)> = lattice_edges(cube.rows(), cube.cols())
        .into_iter()
        .map(|(n, m)| {
            let d2 = (data.row(n) - data.row(m)).norm_squared();
            (n, m, (-d2 / (2.0 * b * eta * eta)).exp())
        })
        .collect();
    Laplacian::from_edges(cube.n_pixels(), &edges)
}

/// Median of `||y_n - y_m|| / sqrt(2 B)` over lattice neighbours; `1.0` when
/// that is zero (constant images or a single pixel).
pub fn default_eta(cube: &SpectralCube) -> f64 {
    let data = cube.data();
    let scale = (2.0 * cube.n_bands() as f64).sqrt();
    let mut d: Vec<f64> = lattice_edges(cube.rows(), cube.cols())
        .into_iter()
        .map(|(n, m)| (data.row(n) - data.row(m)).norm() / scale)
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len().is_multiple_of(2) { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// The abundance prior: Laplacian plus smoothness (`beta1`) and sparsity
/// (`beta2`) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGraph {
    pub laplacian: Laplacian,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl PixelGraph {
    /// Builds the lattice prior for `cube`; `eta = None` uses [`default_eta`].
    pub fn new(cube: &SpectralCube, eta: Option<f64>, beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 >= 0.0 && beta2 >= 0.0) {
            return Err(Error::InvalidArgument("beta1 and beta2 must be >= 0".into()));
        }
        let eta = eta.unwrap_or_else(|| default_eta(cube));
        Ok(PixelGraph {
            laplacian: build_laplacian(cube, eta)?,
            eta,
            beta1,
            beta2,
        })
    }

    /// A prior with no edges, used when only the data term matters.
    pub fn unweighted(n: usize, beta2: f64) -> Self {
        PixelGraph {
            laplacian: Laplacian {
                neighbors: vec![Vec::new(); n],
                degree: vec![0.0; n],
            },
            eta: 1.0,
            beta1: 0.0,
            beta2,
        }
    }

    pub fn with_betas(&self, beta1: f64, beta2: f64) -> Self {
        PixelGraph {
            beta1,
            beta2,
            ..self.clone()
        }
    }

    /// Prior energy terms that depend on row `n`, with all other rows fixed.
    pub(crate) fn row_energy(&self, a: &DMatrix<f64>, n: usize, alpha: &[f64]) -> f64 {
        let alpha = DVector::from_column_slice(alpha);
        let mut smooth = 0.0;
        if self.beta1 != 0.0 {
            for &(m, w) in self.laplacian.neighbors(n) {
                smooth += w * (&alpha - a.row(m).transpose()).norm_squared();
            }
        }
        0.5 * self.beta1 * smooth - 0.5 * self.beta2 * alpha.norm_squared()
    }

    /// Gradient of [`Self::row_energy`] in `alpha`.
    pub(crate) fn row_gradient(&self, a: &DMatrix<f64>, n: usize, alpha: &[f64]) -> DVector<f64> {
        let alpha = DVector::from_column_slice(alpha);
        let mut g = -&alpha * self.beta2;
        if self.beta1 != 0.0 {
            for &(m, w) in self.laplacian.neighbors(n) {
                g += (&alpha - a.row(m).transpose()) * (self.beta1 * w);
            }
        }
        g
    }
}

/// `(beta1 / 2) Tr(A^T L A) - (beta2 / 2) Tr(A^T A)`.
pub fn prior_energy(a: &DMatrix<f64>, graph: &PixelGraph) -> f64 {
    let smooth = if graph.beta1 != 0.0 {
        graph.laplacian.quadratic_form(a)
    } else {
        0.0
    };
    0.5 * graph.beta1 * smooth - 0.5 * graph.beta2 * a.norm_squared()
}

/// `beta1 L A - beta2 A`.
pub fn prior_gradient(a: &DMatrix<f64>, graph: &PixelGraph) -> DMatrix<f64> {
    let mut g = a * (-graph.beta2);
    if graph.beta1 != 0.0 {
        g += graph.laplacian.apply(a) * graph.beta1;
    }
    g
}
