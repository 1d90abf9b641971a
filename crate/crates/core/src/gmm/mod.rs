//! Per-endmember Gaussian mixture models: representation, density
//! evaluation, sampling, EM fitting and the closed-form L2 distance.

mod em;

pub use em::{gmm_fit_em, EmFit, EmOptions};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{logsumexp, CovarianceMatrix, GaussianFactor};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: CovarianceMatrix,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, covariance: CovarianceMatrix) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidArgument(format!("component weight {weight} outside [0, 1]")));
        }
        if mean.len() != covariance.dim() {
            return Err(Error::dim("component mean", covariance.dim(), mean.len()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("component mean is not finite".into()));
        }
        Ok(GaussianComponent {
            weight,
            mean,
            covariance,
        })
    }
}

/// The mixture distribution of a single endmember.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberGmm {
    components: Vec<GaussianComponent>,
}

impl EndmemberGmm {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty component list".into()))?;
        let b = first.mean.len();
        if let Some(c) = components.iter().find(|c| c.mean.len() != b) {
            return Err(Error::dim("mixture component", b, c.mean.len()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(EndmemberGmm { components })
    }

    pub fn single(mean: DVector<f64>, covariance: CovarianceMatrix) -> Result<Self> {
        Self::new(vec![GaussianComponent::new(1.0, mean, covariance)?])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Caches the Cholesky factors for repeated density evaluation.
    pub fn evaluator(&self) -> Result<GmmEvaluator> {
        GmmEvaluator::new(self)
    }

    /// `log sum_k pi_k N(x | mu_k, Sigma_k)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dim("gmm_log_density", self.dim(), x.len()));
        }
        Ok(self.evaluator()?.log_density(x))
    }

    /// The single Gaussian with the mixture's mean and covariance.
    pub fn moment_matched(&self) -> Result<EndmemberGmm> {
        let b = self.dim();
        let mut mean = DVector::zeros(b);
        for c in &self.components {
            mean += &c.mean * c.weight;
        }
        let mut cov = DMatrix::zeros(b, b);
        for c in &self.components {
            let d = &c.mean - &mean;
            cov += (c.covariance.matrix() + &d * d.transpose()) * c.weight;
        }
        EndmemberGmm::single(mean, CovarianceMatrix::new(crate::linalg::symmetrize(&cov))?)
    }

    /// Draws `n` samples (one per row), choosing a component by weight and
    /// then a Gaussian draw through a square-root factor of its covariance.
    /// Degenerate covariances are allowed and yield draws on their support.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let roots: Vec<DMatrix<f64>> = self
            .components
            .iter()
            .map(|c| sampling_root(c.covariance.matrix()))
            .collect();
        let b = self.dim();
        let mut out = DMatrix::zeros(n, b);
        for i in 0..n {
            let k = self.draw_component(rng);
            let row = self.draw_from(k, &roots[k], rng);
            out.set_row(i, &row.transpose());
        }
        out
    }

    pub fn sample_seeded(&self, n: usize, seed: u64) -> DMatrix<f64> {
        self.sample(n, &mut seeded(seed))
    }

    pub(crate) fn draw_component(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return k;
            }
        }
        // Rounding left u beyond the cumulative sum: take the last positive weight.
        self.components.iter().rposition(|c| c.weight > 0.0).unwrap_or(0)
    }

    pub(crate) fn draw_from(&self, k: usize, root: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let b = self.dim();
        let z = DVector::from_fn(b, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.components[k].mean + root * z
    }
}

/// `R` with `R R^T = S` for a PSD `S`: Cholesky when it exists, otherwise a
/// clamped symmetric square root.
pub(crate) fn sampling_root(s: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = Cholesky::new(s.clone()) {
        return c.l();
    }
    let eig = SymmetricEigen::new(s.clone());
    let sq = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sq)
}

/// Cached per-component factors of an [`EndmemberGmm`].
#[derive(Debug, Clone)]
pub struct GmmEvaluator {
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    factors: Vec<GaussianFactor>,
}

impl GmmEvaluator {
    pub fn new(g: &EndmemberGmm) -> Result<Self> {
        Ok(GmmEvaluator {
            log_weights: g.components.iter().map(|c| c.weight.ln()).collect(),
            means: g.components.iter().map(|c| c.mean.clone()).collect(),
            factors: g
                .components
                .iter()
                .map(|c| c.covariance.factor())
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// `log pi_k + log N(x | mu_k, Sigma_k)` for every component.
    pub fn log_joint(&self, x: &DVector<f64>) -> Vec<f64> {
        self.factors
            .iter()
            .zip(&self.means)
            .zip(&self.log_weights)
            .map(|((f, mu), lw)| lw + f.log_density(x, mu))
            .collect()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        logsumexp(&self.log_joint(x))
    }

    /// Posterior component probabilities for `x`.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Vec<f64> {
        let lj = self.log_joint(x);
        let lse = logsumexp(&lj);
        lj.iter().map(|v| (v - lse).exp()).collect()
    }
}

/// The endmember distributions `Theta = {pi_jk, mu_jk, Sigma_jk}` for all `M` endmembers.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberGmmSet {
    endmembers: Vec<EndmemberGmm>,
}

impl EndmemberGmmSet {
    pub fn new(endmembers: Vec<EndmemberGmm>) -> Result<Self> {
        let first = endmembers
            .first()
            .ok_or_else(|| Error::InvalidArgument("model has no endmembers".into()))?;
        let b = first.dim();
        if let Some(g) = endmembers.iter().find(|g| g.dim() != b) {
            return Err(Error::dim("endmember band count", b, g.dim()));
        }
        Ok(EndmemberGmmSet { endmembers })
    }

    pub fn endmembers(&self) -> &[EndmemberGmm] {
        &self.endmembers
    }

    pub fn n_endmembers(&self) -> usize {
        self.endmembers.len()
    }

    pub fn bands(&self) -> usize {
        self.endmembers[0].dim()
    }

    /// `K_j` for every endmember.
    pub fn component_counts(&self) -> Vec<usize> {
        self.endmembers.iter().map(|g| g.n_components()).collect()
    }
}

/// Additive Gaussian noise `N(0, D)`.
///
/// `D` is diagonal in band space; after a subspace projection it becomes a
/// general symmetric matrix, which is also representable.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    covariance: DMatrix<f64>,
}

impl NoiseModel {
    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("noise variances must be finite and >= 0".into()));
        }
        Ok(NoiseModel {
            covariance: DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        })
    }

    /// `sigma^2 I`.
    pub fn isotropic(bands: usize, sigma: f64) -> Result<Self> {
        Self::diagonal(&vec![sigma * sigma; bands])
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let c = CovarianceMatrix::new(m)?;
        if c.matrix().diagonal().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("noise covariance has negative variances".into()));
        }
        Ok(NoiseModel {
            covariance: c.into_inner(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().copied().collect()
    }
}

/// Closed-form `(integral |f - g|^2 dx)^{1/2}` between two mixtures, using
/// `integral N(x|a,A) N(x|b,B) dx = N(a | b, A + B)`.
pub fn gmm_l2_distance(f: &EndmemberGmm, g: &EndmemberGmm) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::dim("gmm_l2_distance", f.dim(), g.dim()));
    }
    let ff = log_inner_product(f, f)?;
    let fg = log_inner_product(f, g)?;
    let gg = log_inner_product(g, g)?;
    let m = ff.max(fg).max(gg);
    // (ff + gg) first so that swapping f and g gives a bit-identical result.
    let sq = m.exp() * (((ff - m).exp() + (gg - m).exp()) - 2.0 * (fg - m).exp());
    Ok(sq.max(0.0).sqrt())
}

fn log_inner_product(f: &EndmemberGmm, g: &EndmemberGmm) -> Result<f64> {
    let mut terms = Vec::with_capacity(f.n_components() * g.n_components());
    for a in f.components() {
        for b in g.components() {
            if a.weight == 0.0 || b.weight == 0.0 {
                continue;
            }
            let s = a.covariance.matrix() + b.covariance.matrix();
            let factor = GaussianFactor::new(&s)?;
            terms.push(a.weight.ln() + b.weight.ln() + factor.log_density(&a.mean, &b.mean));
        }
    }
    terms.sort_by(f64::total_cmp);
    Ok(logsumexp(&terms))
}
