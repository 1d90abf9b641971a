//! The combined pixel density: when every endmember follows a Gaussian
//! mixture, a linear mixture of them plus Gaussian noise is again a Gaussian
//! mixture, indexed by one component choice per endmember.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gmm::{EndmemberGmmSet, NoiseModel};
use crate::linalg::{logsumexp, symmetrize, CovarianceMatrix, GaussianFactor};

pub const DEFAULT_COMBINATION_CAP: usize = 4096;

/// Every combination `k = (k_1, ..., k_M)` of one component per endmember,
/// with its weight and the per-endmember moments it selects.
///
/// Combinations are ordered with the first endmember's index varying
/// fastest: for `K = (1, 2, 3, 1)` the order is (1,1,1,1), (1,2,1,1),
/// (1,1,2,1), (1,2,2,1), ...
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationTable {
    counts: Vec<usize>,
    indices: Vec<Vec<usize>>,
    weights: Vec<f64>,
    means: Vec<Vec<DVector<f64>>>,
    covariances: Vec<Vec<DMatrix<f64>>>,
}

/// Mean and covariance of one mixture component of a pixel's density.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMoments {
    pub mean: DVector<f64>,
    pub covariance: CovarianceMatrix,
}

pub fn enumerate_combinations(theta: &EndmemberGmmSet) -> Result<CombinationTable> {
    enumerate_combinations_capped(theta, DEFAULT_COMBINATION_CAP)
}

pub fn enumerate_combinations_capped(theta: &EndmemberGmmSet, cap: usize) -> Result<CombinationTable> {
    let counts = theta.component_counts();
    let count = counts
        .iter()
        .try_fold(1usize, |acc, &k| acc.checked_mul(k))
        .unwrap_or(usize::MAX);
    if count > cap {
        return Err(Error::CombinationExplosion { count, cap });
    }
    let mut indices = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for pos in 0..count {
        let idx = decode(pos, &counts);
        let w = idx
            .iter()
            .enumerate()
            .map(|(j, &l)| theta.endmembers()[j].components()[l].weight)
            .product();
        indices.push(idx);
        weights.push(w);
    }
    let means = theta
        .endmembers()
        .iter()
        .map(|g| g.components().iter().map(|c| c.mean.clone()).collect())
        .collect();
    let covariances = theta
        .endmembers()
        .iter()
        .map(|g| g.components().iter().map(|c| c.covariance.matrix().clone()).collect())
        .collect();
    Ok(CombinationTable {
        counts,
        indices,
        weights,
        means,
        covariances,
    })
}

fn decode(mut pos: usize, counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .map(|&k| {
            let l = pos % k;
            pos /= k;
            l
        })
        .collect()
}

impl CombinationTable {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_endmembers(&self) -> usize {
        self.counts.len()
    }

    pub fn bands(&self) -> usize {
        self.means[0][0].len()
    }

    pub fn component_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Zero-based component index per endmember for every combination.
    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces the combination weights, which after a free update need no
    /// longer factor into per-endmember products.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::dim("combination weights", self.len(), weights.len()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("combination weights must be a distribution".into()));
        }
        self.weights = weights;
        Ok(())
    }

    /// `mu_{jl}`.
    pub fn component_mean(&self, j: usize, l: usize) -> &DVector<f64> {
        &self.means[j][l]
    }

    /// `Sigma_{jl}`.
    pub fn component_covariance(&self, j: usize, l: usize) -> &DMatrix<f64> {
        &self.covariances[j][l]
    }

    pub(crate) fn set_component_mean(&mut self, j: usize, l: usize, mean: DVector<f64>) {
        self.means[j][l] = mean;
    }

    pub(crate) fn set_component_covariance(&mut self, j: usize, l: usize, cov: DMatrix<f64>) {
        self.covariances[j][l] = cov;
    }

    /// `R_k`: the `M x B` stack of selected component means.
    pub fn mean_stack(&self, k: usize) -> DMatrix<f64> {
        let idx = &self.indices[k];
        DMatrix::from_fn(self.n_endmembers(), self.bands(), |j, b| self.means[j][idx[j]][b])
    }

    /// `S_k`: the `M x B^2` stack of selected covariances, each row a
    /// row-major flattening.
    pub fn covariance_stack(&self, k: usize) -> DMatrix<f64> {
        let b = self.bands();
        let idx = &self.indices[k];
        DMatrix::from_fn(self.n_endmembers(), b * b, |j, e| self.covariances[j][idx[j]][(e / b, e % b)])
    }

    /// `mu_nk = R_k^T alpha`.
    pub fn combined_mean(&self, alpha: &[f64], k: usize) -> DVector<f64> {
        let idx = &self.indices[k];
        let mut mu = DVector::zeros(self.bands());
        for (j, &a) in alpha.iter().enumerate() {
            mu.axpy(a, &self.means[j][idx[j]], 1.0);
        }
        mu
    }

    /// `Sigma_nk = sum_j alpha_j^2 Sigma_{j k_j} + D`, as a raw matrix.
    pub fn combined_covariance(&self, alpha: &[f64], noise: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let idx = &self.indices[k];
        let mut s = noise.clone();
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                s += &self.covariances[j][idx[j]] * (a * a);
            }
        }
        s
    }

    /// Rebuilds the stored moments from `theta`, keeping the current weights.
    pub fn with_moments_from(&self, theta: &EndmemberGmmSet) -> Result<Self> {
        if theta.component_counts() != self.counts {
            return Err(Error::InvalidArgument("component counts differ from the table".into()));
        }
        let mut fresh = enumerate_combinations_capped(theta, usize::MAX)?;
        fresh.weights = self.weights.clone();
        Ok(fresh)
    }

    fn check(&self, alpha: &[f64], bands: usize) -> Result<()> {
        if alpha.len() != self.n_endmembers() {
            return Err(Error::dim("abundance vector", self.n_endmembers(), alpha.len()));
        }
        if bands != self.bands() {
            return Err(Error::dim("pixel bands", self.bands(), bands));
        }
        Ok(())
    }
}

pub fn combined_moments(
    alpha: &[f64],
    table: &CombinationTable,
    noise: &NoiseModel,
    k: usize,
) -> Result<PixelMoments> {
    table.check(alpha, noise.dim())?;
    if k >= table.len() {
        return Err(Error::InvalidArgument(format!("combination {k} out of range")));
    }
    Ok(PixelMoments {
        mean: table.combined_mean(alpha, k),
        covariance: CovarianceMatrix::new(symmetrize(&table.combined_covariance(alpha, noise.matrix(), k)))?,
    })
}

/// `log p(y | alpha, Theta, D) = log sum_k pi_k N(y | mu_nk, Sigma_nk)`.
pub fn pixel_log_density(y: &DVector<f64>, alpha: &[f64], theta: &EndmemberGmmSet, noise: &NoiseModel) -> Result<f64> {
    pixel_log_density_table(y, alpha, &enumerate_combinations(theta)?, noise)
}

/// [`pixel_log_density`] against a prebuilt (possibly re-weighted) table.
pub fn pixel_log_density_table(
    y: &DVector<f64>,
    alpha: &[f64],
    table: &CombinationTable,
    noise: &NoiseModel,
) -> Result<f64> {
    table.check(alpha, y.len())?;
    let mut terms = Vec::with_capacity(table.len());
    for k in 0..table.len() {
        if table.weights[k] == 0.0 {
            continue;
        }
        let factor = GaussianFactor::new(&table.combined_covariance(alpha, noise.matrix(), k))?;
        terms.push(table.weights[k].ln() + factor.log_density(y, &table.combined_mean(alpha, k)));
    }
    Ok(logsumexp(&terms))
}

/// Per-endmember weights `pi_jl = sum_k [k_j = l] pi_k`.
pub fn recover_component_weights(table: &CombinationTable) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = table.counts.iter().map(|&k| vec![0.0; k]).collect();
    for (idx, w) in table.indices.iter().zip(&table.weights) {
        for (j, &l) in idx.iter().enumerate() {
            out[j][l] += w;
        }
    }
    out
}

/// Composite Simpson grid used by [`marginalization_density_oracle`].
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    /// Number of subintervals per integration axis (rounded up to even).
    pub intervals: usize,
    /// Half-width of the integration range in component standard deviations.
    pub span: f64,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid {
            intervals: 2000,
            span: 10.0,
        }
    }
}

/// Evaluates `integral N(y | sum_j alpha_j m_j, D) prod_j p(m_j) dm` by
/// direct tensor-grid quadrature over the endmember values. Only the scalar
/// case (`B = 1`) with at most two endmembers is supported.
pub fn marginalization_density_oracle(
    y: f64,
    alpha: &[f64],
    theta: &EndmemberGmmSet,
    noise: &NoiseModel,
    grid: &QuadratureGrid,
) -> Result<f64> {
    if theta.bands() != 1 || noise.dim() != 1 {
        return Err(Error::Unsupported("marginalization oracle needs a single band".into()));
    }
    if theta.n_endmembers() > 2 {
        return Err(Error::Unsupported("marginalization oracle handles at most two endmembers".into()));
    }
    if alpha.len() != theta.n_endmembers() {
        return Err(Error::dim("abundance vector", theta.n_endmembers(), alpha.len()));
    }
    let d = noise.matrix()[(0, 0)];
    let n = grid.intervals + grid.intervals % 2;

    // One axis per endmember: nodes, Simpson weights and the endmember pdf.
    let axes: Vec<(Vec<f64>, Vec<f64>)> = theta
        .endmembers()
        .iter()
        .map(|g| {
            let lo = g
                .components()
                .iter()
                .map(|c| c.mean[0] - grid.span * c.covariance.matrix()[(0, 0)].sqrt())
                .fold(f64::INFINITY, f64::min);
            let hi = g
                .components()
                .iter()
                .map(|c| c.mean[0] + grid.span * c.covariance.matrix()[(0, 0)].sqrt())
                .fold(f64::NEG_INFINITY, f64::max);
            let h = (hi - lo) / n as f64;
            let nodes: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
            let weighted: Vec<f64> = nodes
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    let s = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    let pdf: f64 = g
                        .components()
                        .iter()
                        .map(|c| c.weight * normal_pdf(m, c.mean[0], c.covariance.matrix()[(0, 0)]))
                        .sum();
                    s * h / 3.0 * pdf
                })
                .collect();
            (nodes, weighted)
        })
        .collect();

    let total = match axes.as_slice() {
        [(m1, w1)] => m1
            .iter()
            .zip(w1)
            .map(|(m, w)| w * normal_pdf(y, alpha[0] * m, d))
            .sum::<f64>(),
        [(m1, w1), (m2, w2)] => m1
            .iter()
            .zip(w1)
            .map(|(a, wa)| {
                let inner: f64 = m2
                    .iter()
                    .zip(w2)
                    .map(|(b, wb)| wb * normal_pdf(y, alpha[0] * a + alpha[1] * b, d))
                    .sum();
                wa * inner
            })
            .sum::<f64>(),
        _ => unreachable!("endmember count checked above"),
    };
    Ok(total)
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}
