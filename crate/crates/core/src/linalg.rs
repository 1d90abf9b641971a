//! Dense linear-algebra primitives shared by every other module: Gaussian
//! log-densities through a Cholesky factor, log-sum-exp, and the two
//! constraint projections (probability simplex and PSD cone).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor applied when projecting covariances onto the PSD cone.
pub const EPS_PSD: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A symmetric covariance matrix.
///
/// Symmetry is enforced on construction. Positive definiteness is only
/// checked when the matrix is factorized, so degenerate (e.g. all-zero)
/// covariances are representable for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim("covariance (columns)", m.nrows(), m.ncols()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        Ok(CovarianceMatrix(symmetrize(&m)))
    }

    pub fn scaled_identity(dim: usize, variance: f64) -> Self {
        CovarianceMatrix(DMatrix::from_diagonal_element(dim, dim, variance))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        CovarianceMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn factor(&self) -> Result<GaussianFactor> {
        GaussianFactor::new(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Cholesky factor of a covariance matrix with its cached log-determinant.
#[derive(Debug, Clone)]
pub struct GaussianFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl GaussianFactor {
    /// Factorizes `sigma`. On failure a jitter of `1e-10 * trace / dim` is
    /// added to the diagonal once; a second failure is an error.
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::dim("covariance (columns)", sigma.nrows(), sigma.ncols()));
        }
        if let Some(f) = Self::try_factor(sigma.clone()) {
            return Ok(f);
        }
        let dim = sigma.nrows();
        let trace = sigma.trace();
        if !(trace.is_finite() && trace > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut jittered = sigma.clone();
        let jitter = 1e-10 * trace / dim as f64;
        for i in 0..dim {
            jittered[(i, i)] += jitter;
        }
        Self::try_factor(jittered).ok_or(Error::NotPositiveDefinite)
    }

    fn try_factor(m: DMatrix<f64>) -> Option<Self> {
        let chol = Cholesky::new(m)?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for i in 0..l.nrows() {
            let d = l[(i, i)];
            if !(d.is_finite() && d > 0.0) {
                return None;
            }
            log_det += d.ln();
        }
        Some(GaussianFactor {
            chol,
            log_det: 2.0 * log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `log |Sigma|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `Sigma^{-1} r`.
    pub fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    /// `r^T Sigma^{-1} r`.
    pub fn mahalanobis_sq(&self, r: &DVector<f64>) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(r)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    /// `log N(mu + r | mu, Sigma)` for a residual `r`.
    pub fn log_density_residual(&self, r: &DVector<f64>) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis_sq(r))
    }

    pub fn log_density(&self, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        self.log_density_residual(&(x - mu))
    }

    /// Lower-triangular factor `L` with `L L^T = Sigma` (possibly jittered).
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// `log N(x | mu, sigma)` evaluated through a Cholesky factorization.
pub fn log_gaussian(x: &DVector<f64>, mu: &DVector<f64>, sigma: &CovarianceMatrix) -> Result<f64> {
    let b = sigma.dim();
    if x.len() != b {
        return Err(Error::dim("log_gaussian x", b, x.len()));
    }
    if mu.len() != b {
        return Err(Error::dim("log_gaussian mean", b, mu.len()));
    }
    Ok(sigma.factor()?.log_density(x, mu))
}

/// Numerically stable `log(sum(exp(values)))`; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Euclidean projection onto the probability simplex (sort-based, O(M log M)).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        // Only reachable through cancellation; fall back to the largest entry.
        let best = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        w.iter_mut().for_each(|x| *x = 0.0);
        w[best] = 1.0;
    }
    w
}

/// Nearest symmetric matrix with every eigenvalue at least `eps_min`.
pub fn project_psd(s: &DMatrix<f64>, eps_min: f64) -> CovarianceMatrix {
    let eig = SymmetricEigen::new(symmetrize(s));
    let clamped = eig.eigenvalues.map(|l| l.max(eps_min));
    let v = &eig.eigenvectors;
    let recomposed = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    CovarianceMatrix(symmetrize(&recomposed))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
