use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{EndmemberGmm, GaussianComponent, GmmEvaluator};
use crate::error::{Error, Result};
use crate::kmeans::{nearest, plus_plus_init};
use crate::linalg::{logsumexp, project_psd, CovarianceMatrix, EPS_PSD};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone)]
pub struct EmOptions {
    /// Relative log-likelihood change below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Independent k-means++ initializations; the best final likelihood wins.
    pub restarts: usize,
    pub covariance_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-6,
            max_iter: 500,
            restarts: 3,
            covariance_floor: EPS_PSD,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: EndmemberGmm,
    pub log_likelihood: f64,
    /// Log-likelihood of the initialization followed by one entry per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Number of collapsed components that were re-spawned (iterations with a
    /// re-spawn are exempt from monotonicity).
    pub respawns: usize,
}

struct Params {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

impl Params {
    fn to_model(&self) -> Result<EndmemberGmm> {
        let total: f64 = self.weights.iter().sum();
        let comps = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.covs)
            .map(|((w, m), c)| GaussianComponent::new(w / total, m.clone(), CovarianceMatrix::new(c.clone())?))
            .collect::<Result<Vec<_>>>()?;
        EndmemberGmm::new(comps)
    }
}

/// Standard EM for a single `K`-component mixture on the rows of `x`.
pub fn gmm_fit_em(x: &DMatrix<f64>, k: usize, seed: u64, opts: &EmOptions) -> Result<EmFit> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("EM needs at least one component".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} samples for {k} components")));
    }
    let points: Vec<DVector<f64>> = x.row_iter().map(|r| r.transpose()).collect();
    let global = sample_covariance(&points, &vec![1.0; n], &mean_of(&points), opts.covariance_floor);

    let mut best: Option<EmFit> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = seeded(derive_seed(seed, r as u64));
        let fit = run_once(&points, k, &global, opts, &mut rng)?;
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_once(
    points: &[DVector<f64>],
    k: usize,
    global: &DMatrix<f64>,
    opts: &EmOptions,
    rng: &mut ChaCha8Rng,
) -> Result<EmFit> {
    let n = points.len();
    let mut params = initialize(points, k, global, opts.covariance_floor, rng);
    let mut respawns = 0;
    let (mut ll, mut resp) = loop {
        match e_step(points, &params) {
            Ok(v) => break v,
            Err(_) => {
                respawn_degenerate(points, &mut params, global, rng);
                respawns += 1;
            }
        }
    };
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        respawns += m_step(points, &resp, &mut params, global, opts.covariance_floor, rng);
        let (new_ll, new_resp) = match e_step(points, &params) {
            Ok(v) => v,
            Err(_) => {
                respawn_degenerate(points, &mut params, global, rng);
                respawns += 1;
                e_step(points, &params)?
            }
        };
        trace.push(new_ll);
        let rel = (new_ll - ll) / ll.abs().max(f64::MIN_POSITIVE);
        ll = new_ll;
        resp = new_resp;
        if !(rel >= opts.tol) {
            break;
        }
    }
    debug_assert_eq!(resp.len(), n);
    Ok(EmFit {
        model: params.to_model()?,
        log_likelihood: ll,
        trace,
        iterations,
        respawns,
    })
}

fn initialize(
    points: &[DVector<f64>],
    k: usize,
    global: &DMatrix<f64>,
    floor: f64,
    rng: &mut ChaCha8Rng,
) -> Params {
    let seeds = plus_plus_init(points, k, rng);
    let labels: Vec<usize> = points.iter().map(|p| nearest(p, &seeds).0).collect();
    let n = points.len() as f64;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for (c, seed) in seeds.iter().enumerate() {
        let members: Vec<DVector<f64>> = points
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p.clone())
            .collect();
        let count = members.len();
        weights.push((count.max(1)) as f64 / n);
        if count >= 2 {
            let m = mean_of(&members);
            covs.push(sample_covariance(&members, &vec![1.0; count], &m, floor));
            means.push(m);
        } else {
            means.push(seed.clone());
            covs.push(global.clone());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Params { weights, means, covs }
}

fn e_step(points: &[DVector<f64>], params: &Params) -> Result<(f64, Vec<Vec<f64>>)> {
    let eval = GmmEvaluator::new(&params.to_model()?)?;
    let mut ll = 0.0;
    let mut resp = Vec::with_capacity(points.len());
    for p in points {
        let lj = eval.log_joint(p);
        let lse = logsumexp(&lj);
        ll += lse;
        resp.push(lj.iter().map(|v| (v - lse).exp()).collect());
    }
    Ok((ll, resp))
}

fn m_step(
    points: &[DVector<f64>],
    resp: &[Vec<f64>],
    params: &mut Params,
    global: &DMatrix<f64>,
    floor: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let n = points.len() as f64;
    let k = params.weights.len();
    let mut respawned = 0;
    for c in 0..k {
        let w: Vec<f64> = resp.iter().map(|r| r[c]).collect();
        let nk: f64 = w.iter().sum();
        if nk / n < 1e-8 {
            respawn(points, params, c, global, rng);
            respawned += 1;
            continue;
        }
        let mut mean = DVector::zeros(points[0].len());
        for (p, wi) in points.iter().zip(&w) {
            mean.axpy(*wi, p, 1.0);
        }
        mean /= nk;
        params.covs[c] = sample_covariance(points, &w, &mean, floor);
        params.means[c] = mean;
        params.weights[c] = nk / n;
    }
    let total: f64 = params.weights.iter().sum();
    params.weights.iter_mut().for_each(|w| *w /= total);
    respawned
}

fn respawn_degenerate(points: &[DVector<f64>], params: &mut Params, global: &DMatrix<f64>, rng: &mut ChaCha8Rng) {
    for c in 0..params.weights.len() {
        if CovarianceMatrix::new(params.covs[c].clone())
            .and_then(|s| s.factor())
            .is_err()
        {
            respawn(points, params, c, global, rng);
        }
    }
}

/// Moves component `c` to a random datum plus jitter with the global covariance.
fn respawn(points: &[DVector<f64>], params: &mut Params, c: usize, global: &DMatrix<f64>, rng: &mut ChaCha8Rng) {
    let i = rng.random_range(0..points.len());
    let jitter = DVector::from_fn(points[0].len(), |b, _| {
        0.1 * global[(b, b)].sqrt() * rng.sample::<f64, _>(StandardNormal)
    });
    params.means[c] = &points[i] + jitter;
    params.covs[c] = global.clone();
    params.weights[c] = params.weights[c].max(1.0 / points.len() as f64);
}

fn mean_of(points: &[DVector<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(points[0].len());
    for p in points {
        m += p;
    }
    m / points.len() as f64
}

/// Weighted covariance `sum_i w_i (x_i - m)(x_i - m)^T / sum_i w_i`, floored.
fn sample_covariance(points: &[DVector<f64>], w: &[f64], mean: &DVector<f64>, floor: f64) -> DMatrix<f64> {
    let b = mean.len();
    let mut s = DMatrix::zeros(b, b);
    let mut total = 0.0;
    for (p, wi) in points.iter().zip(w) {
        let r = p - mean;
        s.ger(*wi, &r, &r, 1.0);
        total += wi;
    }
    s /= total.max(f64::MIN_POSITIVE);
    project_psd(&s, floor).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clusters(n: usize, seed: u64) -> DMatrix<f64> {
        let g = EndmemberGmm::new(vec![
            GaussianComponent::new(0.5, DVector::from_element(1, -5.0), CovarianceMatrix::scaled_identity(1, 0.1)).unwrap(),
            GaussianComponent::new(0.5, DVector::from_element(1, 5.0), CovarianceMatrix::scaled_identity(1, 0.1)).unwrap(),
        ])
        .unwrap();
        g.sample_seeded(n, seed)
    }

    #[test]
    fn recovers_single_gaussian_mean() {
        let mu = DVector::from_vec(vec![0.5, -1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        let g = EndmemberGmm::single(mu.clone(), CovarianceMatrix::new(cov.clone()).unwrap()).unwrap();
        let n = 2000;
        let x = g.sample_seeded(n, 3);
        let fit = gmm_fit_em(&x, 1, 1, &EmOptions::default()).unwrap();
        let m = &fit.model.components()[0].mean;
        for b in 0..2 {
            let se = (cov[(b, b)] / n as f64).sqrt();
            assert!((m[b] - mu[b]).abs() < 5.0 * se);
        }
    }

    #[test]
    fn recovers_balanced_weights() {
        let x = two_clusters(1000, 8);
        let fit = gmm_fit_em(&x, 2, 4, &EmOptions::default()).unwrap();
        for w in fit.model.weights() {
            assert!((w - 0.5).abs() < 0.05, "{w}");
        }
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let g = crate::gmm::tests::random_set(&mut seeded(12), &[3], 2);
        let x = g.endmembers()[0].sample_seeded(600, 5);
        for seed in 0..5 {
            let fit = gmm_fit_em(&x, 3, seed, &EmOptions { restarts: 1, ..Default::default() }).unwrap();
            assert_eq!(fit.respawns, 0);
            for w in fit.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{:?}", fit.trace);
            }
        }
    }

    #[test]
    fn infinite_tolerance_stops_after_one_improving_step() {
        let x = two_clusters(200, 1);
        let opts = EmOptions {
            tol: f64::INFINITY,
            restarts: 1,
            ..Default::default()
        };
        let fit = gmm_fit_em(&x, 2, 0, &opts).unwrap();
        assert_eq!(fit.iterations, 1);
        assert_eq!(fit.trace.len(), 2);
        assert!(fit.trace[1] >= fit.trace[0]);
    }

    #[test]
    fn too_few_samples() {
        let x = DMatrix::from_element(2, 1, 0.0);
        assert!(matches!(gmm_fit_em(&x, 3, 0, &EmOptions::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn duplicate_points_do_not_break_fitting() {
        let mut x = DMatrix::from_element(30, 2, 0.2);
        x[(0, 0)] = 0.3;
        let fit = gmm_fit_em(&x, 2, 0, &EmOptions::default()).unwrap();
        assert!(fit.log_likelihood.is_finite());
    }
}
