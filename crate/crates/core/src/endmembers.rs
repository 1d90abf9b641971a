//! Per-pixel endmember spectra given abundances and endmember distributions.
//!
//! For a pixel `y` with abundances `alpha` the spectra `M` (one row per
//! endmember) minimize
//!
//! ```text
//! 1/2 (y - M^T alpha)^T D^{-1} (y - M^T alpha) - sum_j log sum_k pi_jk N(m_j | mu_jk, Sigma_jk)
//! ```
//!
//! EM over the component memberships gives a closed-form M-step: a single
//! `MB x MB` symmetric positive definite solve.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::gmm::{EndmemberGmmSet, GmmEvaluator, NoiseModel};
use crate::linalg::{symmetrize, GaussianFactor};

#[derive(Debug, Clone, Copy)]
pub struct EndmemberEmOptions {
    /// Objective change (relative to `max(1, |E|)`) that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EndmemberEmOptions {
    fn default() -> Self {
        EndmemberEmOptions { tol: 1e-8, max_iter: 100 }
    }
}

/// Estimated spectra for every pixel.
#[derive(Debug, Clone)]
pub struct PixelEndmemberTensor {
    /// `spectra[n]` is `M x B`.
    pub spectra: Vec<DMatrix<f64>>,
    /// `responsibilities[n][j][k]`, memberships at the returned spectra.
    pub responsibilities: Vec<Vec<Vec<f64>>>,
    pub objectives: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Pixels whose solve failed; their spectra stay at the initial point.
    pub failed: Vec<bool>,
}

impl PixelEndmemberTensor {
    pub fn n_pixels(&self) -> usize {
        self.spectra.len()
    }

    pub fn n_endmembers(&self) -> usize {
        self.spectra.first().map_or(0, |m| m.nrows())
    }

    pub fn bands(&self) -> usize {
        self.spectra.first().map_or(0, |m| m.ncols())
    }

    /// Spectra of endmember `j` for all pixels as an `N x B` matrix.
    pub fn plane(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_pixels(), self.bands(), |n, b| self.spectra[n][(j, b)])
    }

    pub fn n_failed(&self) -> usize {
        self.failed.iter().filter(|&&f| f).count()
    }
}

/// Factorized noise and component precisions shared by all pixels.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    noise_inv: DMatrix<f64>,
    evaluators: Vec<GmmEvaluator>,
    /// `precisions[j][k] = Sigma_jk^{-1}`.
    precisions: Vec<Vec<DMatrix<f64>>>,
    /// `Sigma_jk^{-1} mu_jk`.
    weighted_means: Vec<Vec<DVector<f64>>>,
    weights: Vec<Vec<f64>>,
    means: Vec<Vec<DVector<f64>>>,
}

impl Prepared {
    pub(crate) fn new(theta: &EndmemberGmmSet, noise: &NoiseModel) -> Result<Self> {
        if noise.dim() != theta.bands() {
            return Err(Error::dim("noise bands", theta.bands(), noise.dim()));
        }
        let noise_inv = GaussianFactor::new(noise.matrix())?.inverse();
        let mut evaluators = Vec::new();
        let mut precisions = Vec::new();
        let mut weighted_means = Vec::new();
        let mut weights = Vec::new();
        let mut means = Vec::new();
        for g in theta.endmembers() {
            evaluators.push(g.evaluator()?);
            let mut p = Vec::new();
            let mut wm = Vec::new();
            for c in g.components() {
                let f = c.covariance.factor()?;
                wm.push(f.solve(&c.mean));
                p.push(f.inverse());
            }
            precisions.push(p);
            weighted_means.push(wm);
            weights.push(g.weights());
            means.push(g.components().iter().map(|c| c.mean.clone()).collect());
        }
        Ok(Prepared {
            noise_inv,
            evaluators,
            precisions,
            weighted_means,
            weights,
            means,
        })
    }

    fn m(&self) -> usize {
        self.evaluators.len()
    }

    fn b(&self) -> usize {
        self.noise_inv.nrows()
    }

    fn check(&self, m_n: Option<&DMatrix<f64>>, y: Option<&DVector<f64>>, alpha: Option<&[f64]>) -> Result<()> {
        if let Some(mn) = m_n {
            if mn.nrows() != self.m() {
                return Err(Error::dim("endmember rows", self.m(), mn.nrows()));
            }
            if mn.ncols() != self.b() {
                return Err(Error::dim("endmember bands", self.b(), mn.ncols()));
            }
        }
        if let Some(y) = y {
            if y.len() != self.b() {
                return Err(Error::dim("pixel bands", self.b(), y.len()));
            }
        }
        if let Some(a) = alpha {
            if a.len() != self.m() {
                return Err(Error::dim("abundances", self.m(), a.len()));
            }
        }
        Ok(())
    }

    fn residual(&self, m_n: &DMatrix<f64>, y: &DVector<f64>, alpha: &[f64]) -> DVector<f64> {
        y - m_n.tr_mul(&DVector::from_column_slice(alpha))
    }

    pub(crate) fn objective(&self, m_n: &DMatrix<f64>, y: &DVector<f64>, alpha: &[f64]) -> f64 {
        let r = self.residual(m_n, y, alpha);
        let data = 0.5 * r.dot(&(&self.noise_inv * &r));
        let prior: f64 = (0..self.m())
            .map(|j| self.evaluators[j].log_density(&m_n.row(j).transpose()))
            .sum();
        data - prior
    }

    pub(crate) fn e_step(&self, m_n: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..self.m())
            .map(|j| self.evaluators[j].responsibilities(&m_n.row(j).transpose()))
            .collect()
    }

    pub(crate) fn m_step(&self, y: &DVector<f64>, alpha: &[f64], gamma: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let (m, b) = (self.m(), self.b());
        let mut h = DMatrix::zeros(m * b, m * b);
        let mut rhs = DVector::zeros(m * b);
        let dy = &self.noise_inv * y;
        for i in 0..m {
            for j in 0..m {
                let block = &self.noise_inv * (alpha[i] * alpha[j]);
                h.view_mut((i * b, j * b), (b, b)).copy_from(&block);
            }
            let mut c = DMatrix::zeros(b, b);
            let mut d = &dy * alpha[i];
            for (k, &g) in gamma[i].iter().enumerate() {
                if g > 0.0 {
                    c += &self.precisions[i][k] * g;
                    d += &self.weighted_means[i][k] * g;
                }
            }
            let mut diag = h.view_mut((i * b, i * b), (b, b));
            diag += c;
            rhs.rows_mut(i * b, b).copy_from(&d);
        }
        let h = symmetrize(&h);
        let x = match h.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => return Err(Error::SingularSystem { condition: condition(&h) }),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem { condition: condition(&h) });
        }
        Ok(DMatrix::from_fn(m, b, |j, l| x[j * b + l]))
    }

    /// Gradient of the membership-weighted surrogate with respect to each row of `M`.
    pub(crate) fn gradient(&self, m_n: &DMatrix<f64>, y: &DVector<f64>, alpha: &[f64], gamma: &[Vec<f64>]) -> DMatrix<f64> {
        let (m, b) = (self.m(), self.b());
        let dr = &self.noise_inv * self.residual(m_n, y, alpha);
        let mut out = DMatrix::zeros(m, b);
        for j in 0..m {
            let mj = m_n.row(j).transpose();
            let mut g = &dr * -alpha[j];
            for (k, &w) in gamma[j].iter().enumerate() {
                g += (&self.precisions[j][k] * (&mj - &self.means[j][k])) * w;
            }
            out.row_mut(j).copy_from(&g.transpose());
        }
        out
    }

    /// Prior-weighted component means.
    pub(crate) fn initial(&self) -> DMatrix<f64> {
        let (m, b) = (self.m(), self.b());
        let mut out = DMatrix::zeros(m, b);
        for j in 0..m {
            let mut v = DVector::zeros(b);
            for (w, mu) in self.weights[j].iter().zip(&self.means[j]) {
                v += mu * *w;
            }
            out.row_mut(j).copy_from(&v.transpose());
        }
        out
    }

    /// Runs EM for one pixel. Returns the spectra, memberships and the
    /// objective after initialization and after every iteration.
    pub(crate) fn pixel_em(&self, y: &DVector<f64>, alpha: &[f64], opts: &EndmemberEmOptions) -> Result<PixelEm> {
        let mut m_n = self.initial();
        let mut objectives = vec![self.objective(&m_n, y, alpha)];
        for _ in 0..opts.max_iter {
            let gamma = self.e_step(&m_n);
            let next = self.m_step(y, alpha, &gamma)?;
            let obj = self.objective(&next, y, alpha);
            let prev = *objectives.last().unwrap();
            m_n = next;
            objectives.push(obj);
            if (prev - obj).abs() < opts.tol * prev.abs().max(1.0) {
                break;
            }
        }
        Ok(PixelEm {
            gamma: self.e_step(&m_n),
            spectra: m_n,
            objectives,
        })
    }
}

pub(crate) struct PixelEm {
    pub spectra: DMatrix<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub objectives: Vec<f64>,
}

fn condition(h: &DMatrix<f64>) -> f64 {
    let ev = h.clone().symmetric_eigenvalues();
    let (lo, hi) = ev
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// The per-pixel objective for spectra `m_n` (`M x B`).
pub fn endmember_objective(m_n: &DMatrix<f64>, y: &DVector<f64>, alpha: &[f64], theta: &EndmemberGmmSet, noise: &NoiseModel) -> Result<f64> {
    let p = Prepared::new(theta, noise)?;
    p.check(Some(m_n), Some(y), Some(alpha))?;
    Ok(p.objective(m_n, y, alpha))
}

/// Component memberships `gamma[j][k]` of every row of `m_n`.
pub fn endmember_e_step(m_n: &DMatrix<f64>, theta: &EndmemberGmmSet) -> Result<Vec<Vec<f64>>> {
    if m_n.nrows() != theta.n_endmembers() {
        return Err(Error::dim("endmember rows", theta.n_endmembers(), m_n.nrows()));
    }
    if m_n.ncols() != theta.bands() {
        return Err(Error::dim("endmember bands", theta.bands(), m_n.ncols()));
    }
    theta
        .endmembers()
        .iter()
        .enumerate()
        .map(|(j, g)| Ok(g.evaluator()?.responsibilities(&m_n.row(j).transpose())))
        .collect()
}

/// Exact minimizer of the membership-weighted surrogate.
pub fn endmember_m_step(
    y: &DVector<f64>,
    alpha: &[f64],
    gamma: &[Vec<f64>],
    theta: &EndmemberGmmSet,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let p = Prepared::new(theta, noise)?;
    p.check(None, Some(y), Some(alpha))?;
    check_gamma(gamma, theta)?;
    p.m_step(y, alpha, gamma)
}

/// Gradient of the surrogate at `m_n` for memberships `gamma`; zero at the
/// M-step output.
pub fn endmember_gradient(
    m_n: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: &[f64],
    gamma: &[Vec<f64>],
    theta: &EndmemberGmmSet,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let p = Prepared::new(theta, noise)?;
    p.check(Some(m_n), Some(y), Some(alpha))?;
    check_gamma(gamma, theta)?;
    Ok(p.gradient(m_n, y, alpha, gamma))
}

fn check_gamma(gamma: &[Vec<f64>], theta: &EndmemberGmmSet) -> Result<()> {
    if gamma.len() != theta.n_endmembers() {
        return Err(Error::dim("memberships", theta.n_endmembers(), gamma.len()));
    }
    for (g, e) in gamma.iter().zip(theta.endmembers()) {
        if g.len() != e.n_components() {
            return Err(Error::dim("memberships per endmember", e.n_components(), g.len()));
        }
    }
    Ok(())
}

/// Runs the per-pixel EM on every pixel of `cube` with abundances `a` (`N x M`).
/// Pixels whose system cannot be solved are flagged rather than aborting the run.
pub fn estimate_pixel_endmembers(
    cube: &SpectralCube,
    a: &DMatrix<f64>,
    theta: &EndmemberGmmSet,
    noise: &NoiseModel,
    opts: &EndmemberEmOptions,
) -> Result<PixelEndmemberTensor> {
    if theta.bands() != cube.n_bands() {
        return Err(Error::dim("library bands", cube.n_bands(), theta.bands()));
    }
    if a.nrows() != cube.n_pixels() {
        return Err(Error::dim("abundance rows", cube.n_pixels(), a.nrows()));
    }
    if a.ncols() != theta.n_endmembers() {
        return Err(Error::dim("abundance columns", theta.n_endmembers(), a.ncols()));
    }
    let p = Prepared::new(theta, noise)?;
    let results: Vec<(Result<PixelEm>, Vec<f64>)> = (0..cube.n_pixels())
        .into_par_iter()
        .map(|n| {
            let alpha: Vec<f64> = a.row(n).iter().copied().collect();
            (p.pixel_em(&cube.pixel(n), &alpha, opts), alpha)
        })
        .collect();
    let mut out = PixelEndmemberTensor {
        spectra: Vec::with_capacity(results.len()),
        responsibilities: Vec::with_capacity(results.len()),
        objectives: Vec::with_capacity(results.len()),
        iterations: Vec::with_capacity(results.len()),
        failed: Vec::with_capacity(results.len()),
    };
    for (n, (r, alpha)) in results.into_iter().enumerate() {
        match r {
            Ok(em) => {
                out.iterations.push(em.objectives.len() - 1);
                out.objectives.push(*em.objectives.last().unwrap());
                out.spectra.push(em.spectra);
                out.responsibilities.push(em.gamma);
                out.failed.push(false);
            }
            Err(e) => {
                log::warn!("pixel {n}: {e}");
                let init = p.initial();
                out.objectives.push(p.objective(&init, &cube.pixel(n), &alpha));
                out.responsibilities.push(p.e_step(&init));
                out.spectra.push(init);
                out.iterations.push(0);
                out.failed.push(true);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::tests::random_set;
    use crate::gmm::{EndmemberGmm, GaussianComponent};
    use crate::linalg::{log_gaussian, logsumexp, CovarianceMatrix};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise(b: usize, var: f64) -> NoiseModel {
        NoiseModel::isotropic(b, var.sqrt()).unwrap()
    }

    fn random_alpha(rng: &mut impl Rng, m: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    #[test]
    fn objective_matches_naive_evaluation() {
        let mut rng = seeded(3);
        let theta = random_set(&mut rng, &[2, 1, 3], 4);
        let d = NoiseModel::diagonal(&[0.01, 0.02, 0.015, 0.03]).unwrap();
        let m_n = DMatrix::from_fn(3, 4, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(4, |_, _| rng.random::<f64>());
        let alpha = random_alpha(&mut rng, 3);
        let got = endmember_objective(&m_n, &y, &alpha, &theta, &d).unwrap();

        let r = &y - m_n.transpose() * DVector::from_column_slice(&alpha);
        let dinv = d.matrix().clone().try_inverse().unwrap();
        let mut want = 0.5 * (r.transpose() * dinv * &r)[0];
        for (j, g) in theta.endmembers().iter().enumerate() {
            let x = m_n.row(j).transpose();
            let terms: Vec<f64> = g
                .components()
                .iter()
                .map(|c| c.weight.ln() + log_gaussian(&x, &c.mean, &c.covariance).unwrap())
                .collect();
            want -= logsumexp(&terms);
        }
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn objective_is_smallest_at_component_means_with_zero_residual() {
        let mu = [DVector::from_vec(vec![0.2, 0.5]), DVector::from_vec(vec![0.7, 0.1])];
        let theta = EndmemberGmmSet::new(
            mu.iter()
                .map(|m| EndmemberGmm::single(m.clone(), CovarianceMatrix::scaled_identity(2, 0.01)).unwrap())
                .collect(),
        )
        .unwrap();
        let alpha = [0.4, 0.6];
        let m_n = DMatrix::from_rows(&[mu[0].transpose(), mu[1].transpose()]);
        let y = m_n.tr_mul(&DVector::from_column_slice(&alpha));
        let d = noise(2, 1e-3);
        let best = endmember_objective(&m_n, &y, &alpha, &theta, &d).unwrap();
        assert!(best.is_finite());
        let mut rng = seeded(9);
        for _ in 0..50 {
            let probe = &m_n + DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 0.02 - 0.01);
            assert!(endmember_objective(&probe, &y, &alpha, &theta, &d).unwrap() > best);
        }
    }

    #[test]
    fn huge_noise_sends_spectra_to_prior_modes() {
        let mu = [DVector::from_vec(vec![0.2, 0.5]), DVector::from_vec(vec![0.7, 0.1])];
        let theta = EndmemberGmmSet::new(
            mu.iter()
                .map(|m| EndmemberGmm::single(m.clone(), CovarianceMatrix::scaled_identity(2, 0.01)).unwrap())
                .collect(),
        )
        .unwrap();
        let y = DVector::from_vec(vec![5.0, -3.0]);
        let gamma = vec![vec![1.0], vec![1.0]];
        let m_n = endmember_m_step(&y, &[0.5, 0.5], &gamma, &theta, &noise(2, 1e12)).unwrap();
        for j in 0..2 {
            assert!((m_n.row(j).transpose() - &mu[j]).amax() < 1e-9);
        }
    }

    #[test]
    fn e_step_single_and_symmetric() {
        let single = EndmemberGmm::single(DVector::from_vec(vec![0.1, 0.2]), CovarianceMatrix::scaled_identity(2, 0.01)).unwrap();
        let sym = EndmemberGmm::new(vec![
            GaussianComponent::new(0.5, DVector::from_vec(vec![-1.0, 0.0]), CovarianceMatrix::scaled_identity(2, 0.3)).unwrap(),
            GaussianComponent::new(0.5, DVector::from_vec(vec![1.0, 0.0]), CovarianceMatrix::scaled_identity(2, 0.3)).unwrap(),
        ])
        .unwrap();
        let theta = EndmemberGmmSet::new(vec![single, sym]).unwrap();
        let m_n = DMatrix::from_row_slice(2, 2, &[0.4, 0.9, 0.0, 0.7]);
        let g = endmember_e_step(&m_n, &theta).unwrap();
        assert_eq!(g[0], vec![1.0]);
        assert!((g[1][0] - 0.5).abs() < 1e-15 && (g[1][1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn e_step_matches_direct_ratio() {
        let mut rng = seeded(21);
        let theta = random_set(&mut rng, &[3, 2], 3);
        let m_n = DMatrix::from_fn(2, 3, |_, _| rng.random::<f64>());
        let g = endmember_e_step(&m_n, &theta).unwrap();
        for (j, e) in theta.endmembers().iter().enumerate() {
            let x = m_n.row(j).transpose();
            let dens: Vec<f64> = e
                .components()
                .iter()
                .map(|c| c.weight * log_gaussian(&x, &c.mean, &c.covariance).unwrap().exp())
                .collect();
            let total: f64 = dens.iter().sum();
            for k in 0..dens.len() {
                assert!((g[j][k] - dens[k] / total).abs() < 1e-12);
            }
            assert!((g[j].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_pixel_gives_gaussian_posterior_mean() {
        let mut rng = seeded(5);
        let theta = random_set(&mut rng, &[1, 1, 1], 3);
        let d = NoiseModel::diagonal(&[0.02, 0.01, 0.03]).unwrap();
        let y = DVector::from_vec(vec![0.3, 0.9, 0.1]);
        let gamma = vec![vec![1.0]; 3];
        let m_n = endmember_m_step(&y, &[0.0, 1.0, 0.0], &gamma, &theta, &d).unwrap();

        let c = &theta.endmembers()[1].components()[0];
        let dinv = d.matrix().clone().try_inverse().unwrap();
        let sinv = c.covariance.matrix().clone().try_inverse().unwrap();
        let want = (&dinv + &sinv).try_inverse().unwrap() * (&dinv * &y + &sinv * &c.mean);
        assert!((m_n.row(1).transpose() - want).amax() < 1e-10);
        for j in [0, 2] {
            assert!((m_n.row(j).transpose() - &theta.endmembers()[j].components()[0].mean).amax() < 1e-10);
        }
    }

    #[test]
    fn zero_residual_is_a_fixed_point() {
        let cov = CovarianceMatrix::scaled_identity(3, 0.01);
        let mu = [DVector::from_vec(vec![0.2, 0.5, 0.1]), DVector::from_vec(vec![0.7, 0.1, 0.4])];
        let theta = EndmemberGmmSet::new(mu.iter().map(|m| EndmemberGmm::single(m.clone(), cov.clone()).unwrap()).collect()).unwrap();
        let alpha = [0.3, 0.7];
        let y = &mu[0] * 0.3 + &mu[1] * 0.7;
        let m_n = endmember_m_step(&y, &alpha, &[vec![1.0], vec![1.0]], &theta, &noise(3, 1e-4)).unwrap();
        for j in 0..2 {
            assert!((m_n.row(j).transpose() - &mu[j]).amax() < 1e-12);
        }
    }

    #[test]
    fn m_step_matches_numerical_minimizer() {
        let mut rng = seeded(77);
        let theta = random_set(&mut rng, &[2, 2], 3);
        let d = NoiseModel::diagonal(&[0.05, 0.04, 0.06]).unwrap();
        let y = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let alpha = [0.35, 0.65];
        let gamma = vec![vec![0.3, 0.7], vec![0.8, 0.2]];
        let exact = endmember_m_step(&y, &alpha, &gamma, &theta, &d).unwrap();
        let p = Prepared::new(&theta, &d).unwrap();
        assert!(p.gradient(&exact, &y, &alpha, &gamma).amax() < 1e-8);

        // Plain gradient descent on the (quadratic) surrogate.
        let mut x = p.initial();
        let lipschitz = {
            let mut h = 0.0f64;
            for j in 0..2 {
                for k in 0..2 {
                    h = h.max(p.precisions[j][k].norm());
                }
            }
            h * 2.0 + p.noise_inv.norm() * 2.0
        };
        for _ in 0..200_000 {
            let g = p.gradient(&x, &y, &alpha, &gamma);
            if g.amax() < 1e-12 {
                break;
            }
            x -= g / lipschitz;
        }
        assert!((x - exact).amax() < 1e-4);
    }

    fn pure_scene(rng: &mut rand_chacha::ChaCha8Rng, theta: &EndmemberGmmSet, n: usize) -> (SpectralCube, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (m, b) = (theta.n_endmembers(), theta.bands());
        let mut a = DMatrix::zeros(n, m);
        let mut data = DMatrix::zeros(n, b);
        let mut truth = Vec::new();
        for i in 0..n {
            let j = i % m;
            a[(i, j)] = 1.0;
            let mut spectra = DMatrix::zeros(m, b);
            for (jj, e) in theta.endmembers().iter().enumerate() {
                let k = rng.random_range(0..e.n_components());
                spectra.row_mut(jj).copy_from(&e.components()[k].mean.transpose());
            }
            data.row_mut(i).copy_from(&spectra.row(j));
            truth.push(spectra);
        }
        (SpectralCube::new(data, 1, n).unwrap(), a, truth)
    }

    #[test]
    fn pure_pixels_at_component_means_are_recovered() {
        let mut rng = seeded(14);
        let comps = |c: &[(f64, f64)]| {
            EndmemberGmm::new(
                c.iter()
                    .map(|&(w, m)| {
                        GaussianComponent::new(w, DVector::from_element(4, m), CovarianceMatrix::scaled_identity(4, 1e-4)).unwrap()
                    })
                    .collect(),
            )
            .unwrap()
        };
        let theta = EndmemberGmmSet::new(vec![comps(&[(0.5, 0.2), (0.5, 0.6)]), comps(&[(1.0, 0.9)])]).unwrap();
        let (cube, a, truth) = pure_scene(&mut rng, &theta, 20);
        let est = estimate_pixel_endmembers(&cube, &a, &theta, &noise(4, 1e-8), &EndmemberEmOptions::default()).unwrap();
        assert_eq!(est.n_failed(), 0);
        for n in 0..20 {
            let j = n % 2;
            assert!((est.spectra[n].row(j) - truth[n].row(j)).amax() < 1e-3, "pixel {n}");
        }
    }

    #[test]
    fn single_component_models_converge_in_two_steps() {
        let mut rng = seeded(8);
        let theta = random_set(&mut rng, &[1, 1, 1], 5);
        let n = 12;
        let a = DMatrix::from_fn(n, 3, |i, j| [0.2, 0.3, 0.5][(i + j) % 3]);
        let cube = SpectralCube::new(DMatrix::from_fn(n, 5, |_, _| rng.random::<f64>()), 3, 4).unwrap();
        let est = estimate_pixel_endmembers(&cube, &a, &theta, &noise(5, 1e-3), &EndmemberEmOptions::default()).unwrap();
        assert!(est.iterations.iter().all(|&it| it <= 2), "{:?}", est.iterations);
    }

    #[test]
    fn reconstruction_beats_mean_stack() {
        let mut rng = seeded(31);
        let theta = random_set(&mut rng, &[2, 3], 6);
        let n = 200;
        let mut a = DMatrix::zeros(n, 2);
        let mut data = DMatrix::zeros(n, 6);
        for i in 0..n {
            let alpha = random_alpha(&mut rng, 2);
            let mut y = DVector::zeros(6);
            for (j, e) in theta.endmembers().iter().enumerate() {
                a[(i, j)] = alpha[j];
                y += e.sample(1, &mut rng).row(0).transpose() * alpha[j];
            }
            data.row_mut(i).copy_from(&y.transpose());
        }
        let cube = SpectralCube::new(data, 10, 20).unwrap();
        let d = noise(6, 1e-4);
        let est = estimate_pixel_endmembers(&cube, &a, &theta, &d, &EndmemberEmOptions::default()).unwrap();
        let init = Prepared::new(&theta, &d).unwrap().initial();
        let better = (0..n)
            .filter(|&i| {
                let alpha = DVector::from_iterator(2, a.row(i).iter().copied());
                let y = cube.pixel(i);
                (&y - est.spectra[i].tr_mul(&alpha)).norm() <= (&y - init.tr_mul(&alpha)).norm()
            })
            .count();
        assert!(better as f64 >= 0.95 * n as f64, "{better}/{n}");
    }

    #[test]
    fn singular_system_reports_condition() {
        let theta = EndmemberGmmSet::new(vec![
            EndmemberGmm::single(DVector::from_vec(vec![0.1, 0.2]), CovarianceMatrix::scaled_identity(2, 1e-2)).unwrap(),
            EndmemberGmm::single(DVector::from_vec(vec![0.5, 0.2]), CovarianceMatrix::scaled_identity(2, 1e-2)).unwrap(),
        ])
        .unwrap();
        let p = Prepared::new(&theta, &noise(2, 1e-2)).unwrap();
        // Zero memberships remove the prior curvature; the data term alone has rank B.
        let err = p.m_step(&DVector::from_vec(vec![0.3, 0.2]), &[0.5, 0.5], &[vec![0.0], vec![0.0]]).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { .. }), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn em_objective_never_increases(seed in 0u64..10_000) {
            let mut rng = seeded(seed);
            let theta = random_set(&mut rng, &[3, 2], 4);
            let p = Prepared::new(&theta, &noise(4, 1e-3)).unwrap();
            let y = DVector::from_fn(4, |_, _| rng.random::<f64>());
            let alpha = random_alpha(&mut rng, 2);
            let em = p.pixel_em(&y, &alpha, &EndmemberEmOptions::default()).unwrap();
            for w in em.objectives.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "{:?}", em.objectives);
            }
            for g in &em.gamma {
                prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            // The default tolerance can stop early in flat directions; run to
            // convergence before checking stationarity.
            let tight = EndmemberEmOptions { tol: 1e-15, max_iter: 5000 };
            let em = p.pixel_em(&y, &alpha, &tight).unwrap();
            let grad = p.gradient(&em.spectra, &y, &alpha, &em.gamma);
            prop_assert!(grad.amax() < 1e-6 * (1.0 + p.noise_inv.amax()), "{} after {} iterations", grad.amax(), em.objectives.len() - 1);
        }
    }
}
