//! MAP objective, responsibilities, the expected complete-data surrogate
//! `E_M` and its gradients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::combination::{enumerate_combinations, CombinationTable};
use crate::error::{Error, Result};
use crate::gmm::{EndmemberGmmSet, NoiseModel};
use crate::graph::{prior_energy, prior_gradient, PixelGraph};
use crate::linalg::{logsumexp, symmetrize, GaussianFactor};

/// Posterior combination probabilities `gamma_nk`, one row per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    gamma: DMatrix<f64>,
}

impl Responsibilities {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        for row in gamma.row_iter() {
            let s = row.sum();
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (s - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument("responsibility rows must be distributions".into()));
            }
        }
        Ok(Responsibilities { gamma })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn n_pixels(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn n_combinations(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.gamma[(n, k)]
    }
}

/// Everything `E_M` depends on besides the parameters being updated.
#[derive(Clone, Copy)]
pub struct Surrogate<'a> {
    pub pixels: &'a [DVector<f64>],
    pub noise: &'a DMatrix<f64>,
    pub gamma: &'a Responsibilities,
    pub graph: &'a PixelGraph,
}

/// Gradients of `E_M` with respect to every component mean and covariance
/// (indexed `[j][l]`) and the abundance matrix.
#[derive(Debug, Clone)]
pub struct SurrogateGradients {
    pub means: Vec<Vec<DVector<f64>>>,
    pub covariances: Vec<Vec<DMatrix<f64>>>,
    pub abundances: DMatrix<f64>,
}

pub(crate) fn row(a: &DMatrix<f64>, n: usize) -> Vec<f64> {
    a.row(n).iter().copied().collect()
}

pub(crate) fn check_inputs(pixels: &[DVector<f64>], a: &DMatrix<f64>, table: &CombinationTable) -> Result<()> {
    if a.nrows() != pixels.len() {
        return Err(Error::dim("abundance rows", pixels.len(), a.nrows()));
    }
    if a.ncols() != table.n_endmembers() {
        return Err(Error::dim("abundance columns", table.n_endmembers(), a.ncols()));
    }
    if let Some(p) = pixels.iter().find(|p| p.len() != table.bands()) {
        return Err(Error::dim("pixel bands", table.bands(), p.len()));
    }
    Ok(())
}

/// `log pi_k + log N(y | mu_nk, Sigma_nk)` for every combination.
pub(crate) fn log_joint(y: &DVector<f64>, alpha: &[f64], table: &CombinationTable, noise: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..table.len())
        .map(|k| {
            let w = table.weights()[k];
            if w == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            let f = GaussianFactor::new(&table.combined_covariance(alpha, noise, k))?;
            Ok(w.ln() + f.log_density(y, &table.combined_mean(alpha, k)))
        })
        .collect()
}

/// Objective and responsibilities in one pass over the pixels.
pub fn evaluate(
    pixels: &[DVector<f64>],
    a: &DMatrix<f64>,
    table: &CombinationTable,
    noise: &DMatrix<f64>,
    graph: &PixelGraph,
) -> Result<(f64, Responsibilities)> {
    check_inputs(pixels, a, table)?;
    let rows: Vec<(f64, Vec<f64>)> = (0..pixels.len())
        .into_par_iter()
        .map(|n| {
            let lj = log_joint(&pixels[n], &row(a, n), table, noise)?;
            let lse = logsumexp(&lj);
            if !lse.is_finite() {
                return Err(Error::InvalidArgument(format!("pixel {n} has zero likelihood")));
            }
            Ok((lse, lj.iter().map(|v| (v - lse).exp()).collect()))
        })
        .collect::<Result<_>>()?;
    let mut data = 0.0;
    let mut gamma = DMatrix::zeros(pixels.len(), table.len());
    for (n, (lse, g)) in rows.iter().enumerate() {
        data -= lse;
        let s: f64 = g.iter().sum();
        for (k, v) in g.iter().enumerate() {
            gamma[(n, k)] = v / s;
        }
    }
    Ok((data + prior_energy(a, graph), Responsibilities { gamma }))
}

/// `E(A, Theta) = -sum_n log p(y_n | alpha_n, Theta, D) + E_prior(A)`.
pub fn negative_log_posterior(
    pixels: &[DVector<f64>],
    a: &DMatrix<f64>,
    theta: &EndmemberGmmSet,
    noise: &NoiseModel,
    graph: &PixelGraph,
) -> Result<f64> {
    objective_with_table(pixels, a, &enumerate_combinations(theta)?, noise.matrix(), graph)
}

/// [`negative_log_posterior`] against a table whose weights may have been updated.
pub fn objective_with_table(
    pixels: &[DVector<f64>],
    a: &DMatrix<f64>,
    table: &CombinationTable,
    noise: &DMatrix<f64>,
    graph: &PixelGraph,
) -> Result<f64> {
    Ok(evaluate(pixels, a, table, noise, graph)?.0)
}

pub fn e_step(
    pixels: &[DVector<f64>],
    a: &DMatrix<f64>,
    table: &CombinationTable,
    noise: &NoiseModel,
) -> Result<Responsibilities> {
    let graph = PixelGraph::unweighted(pixels.len(), 0.0);
    Ok(evaluate(pixels, a, table, noise.matrix(), &graph)?.1)
}

/// `pi_k = (1/N) sum_n gamma_nk`.
pub fn m_step_pi(gamma: &Responsibilities) -> Vec<f64> {
    let n = gamma.n_pixels() as f64;
    let mut pi: Vec<f64> = (0..gamma.n_combinations())
        .map(|k| gamma.gamma.column(k).iter().sum::<f64>() / n)
        .collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    pi
}

/// `-sum_k gamma_nk (log pi_k + log N(y_n | mu_nk, Sigma_nk))` for one pixel.
pub(crate) fn row_data_value(
    y: &DVector<f64>,
    alpha: &[f64],
    gamma: &[f64],
    table: &CombinationTable,
    noise: &DMatrix<f64>,
) -> Result<f64> {
    let mut v = 0.0;
    for (k, &g) in gamma.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let f = GaussianFactor::new(&table.combined_covariance(alpha, noise, k))?;
        v -= g * (table.weights()[k].ln() + f.log_density(y, &table.combined_mean(alpha, k)));
    }
    Ok(v)
}

/// Per-combination quantities behind every gradient: `v = Sigma^{-1} r`
/// and `Sigma^{-1}` for the pixel's combined covariance.
pub(crate) struct ComboStats {
    pub k: usize,
    pub gamma: f64,
    pub log_term: f64,
    pub v: DVector<f64>,
    pub inv: DMatrix<f64>,
}

pub(crate) fn combo_stats(
    y: &DVector<f64>,
    alpha: &[f64],
    gamma: &[f64],
    table: &CombinationTable,
    noise: &DMatrix<f64>,
) -> Result<Vec<ComboStats>> {
    let mut out = Vec::new();
    for (k, &g) in gamma.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let f = GaussianFactor::new(&table.combined_covariance(alpha, noise, k))?;
        let r = y - table.combined_mean(alpha, k);
        out.push(ComboStats {
            k,
            gamma: g,
            log_term: table.weights()[k].ln() + f.log_density_residual(&r),
            v: f.solve(&r),
            inv: f.inverse(),
        });
    }
    Ok(out)
}

/// Value and `alpha` gradient of [`row_data_value`]:
/// `-sum_k [lambda_k^T mu_{j k_j} + 2 alpha_j tr(Psi_k Sigma_{j k_j})]`.
pub(crate) fn row_data_value_grad(
    y: &DVector<f64>,
    alpha: &[f64],
    gamma: &[f64],
    table: &CombinationTable,
    noise: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>)> {
    let m = alpha.len();
    let mut value = 0.0;
    let mut grad = DVector::zeros(m);
    for s in combo_stats(y, alpha, gamma, table, noise)? {
        value -= s.gamma * s.log_term;
        let idx = &table.indices()[s.k];
        for j in 0..m {
            let mu = table.component_mean(j, idx[j]);
            let sig = table.component_covariance(j, idx[j]);
            let lam_mu = s.gamma * s.v.dot(mu);
            // tr(Psi Sigma_j) = gamma/2 (v^T Sigma_j v - <Sigma^{-1}, Sigma_j>)
            let tr = 0.5 * s.gamma * ((sig * &s.v).dot(&s.v) - s.inv.component_mul(sig).sum());
            grad[j] -= lam_mu + 2.0 * alpha[j] * tr;
        }
    }
    Ok((value, grad))
}

/// `E_M(A, Theta) = -sum_n sum_k gamma_nk (log pi_k + log N) + E_prior(A)`.
pub fn surrogate_energy(sur: &Surrogate, a: &DMatrix<f64>, table: &CombinationTable) -> Result<f64> {
    check_inputs(sur.pixels, a, table)?;
    let rows: Vec<f64> = (0..sur.pixels.len())
        .into_par_iter()
        .map(|n| {
            let g = row(&sur.gamma.gamma, n);
            row_data_value(&sur.pixels[n], &row(a, n), &g, table, sur.noise)
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().sum::<f64>() + prior_energy(a, sur.graph))
}

/// Analytic gradients of `E_M`.
///
/// `dE/dmu_jl = -sum_n alpha_nj sum_{k: k_j = l} lambda_nk`,
/// `dE/dSigma_jl = -sum_n alpha_nj^2 sum_{k: k_j = l} Psi_nk` (symmetric),
/// `dE/dalpha_nj` as in [`row_data_value_grad`] plus `beta1 L A - beta2 A`.
pub fn m_step_gradients(sur: &Surrogate, a: &DMatrix<f64>, table: &CombinationTable) -> Result<SurrogateGradients> {
    check_inputs(sur.pixels, a, table)?;
    let m = table.n_endmembers();
    let b = table.bands();
    let counts = table.component_counts().to_vec();
    let zero_means = || -> Vec<Vec<DVector<f64>>> { counts.iter().map(|&k| vec![DVector::zeros(b); k]).collect() };
    let zero_covs = || -> Vec<Vec<DMatrix<f64>>> { counts.iter().map(|&k| vec![DMatrix::zeros(b, b); k]).collect() };

    type Partial = (Vec<Vec<DVector<f64>>>, Vec<Vec<DMatrix<f64>>>, DVector<f64>);
    let partials: Vec<Partial> = (0..sur.pixels.len())
        .into_par_iter()
        .map(|n| {
            let alpha = row(a, n);
            let g = row(&sur.gamma.gamma, n);
            let mut gm = zero_means();
            let mut gs = zero_covs();
            let mut ga = DVector::zeros(m);
            for s in combo_stats(&sur.pixels[n], &alpha, &g, table, sur.noise)? {
                let idx = &table.indices()[s.k];
                let psi = (&s.v * s.v.transpose() - &s.inv) * (0.5 * s.gamma);
                for j in 0..m {
                    let l = idx[j];
                    gm[j][l].axpy(-alpha[j] * s.gamma, &s.v, 1.0);
                    gs[j][l] -= &psi * (alpha[j] * alpha[j]);
                    let mu = table.component_mean(j, l);
                    let sig = table.component_covariance(j, l);
                    ga[j] -= s.gamma * s.v.dot(mu) + 2.0 * alpha[j] * psi.component_mul(sig).sum();
                }
            }
            Ok((gm, gs, ga))
        })
        .collect::<Result<_>>()?;

    let mut means = zero_means();
    let mut covariances = zero_covs();
    let mut abundances = prior_gradient(a, sur.graph);
    for (n, (gm, gs, ga)) in partials.into_iter().enumerate() {
        for j in 0..m {
            for l in 0..counts[j] {
                means[j][l] += &gm[j][l];
                covariances[j][l] += &gs[j][l];
            }
            abundances[(n, j)] += ga[j];
        }
    }
    for c in covariances.iter_mut().flatten() {
        *c = symmetrize(c);
    }
    Ok(SurrogateGradients {
        means,
        covariances,
        abundances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combination::enumerate_combinations;
    use crate::gmm::tests::random_set;
    use crate::linalg::CovarianceMatrix;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_abundances(rng: &mut rand_chacha::ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(n, m);
        for i in 0..n {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for j in 0..m {
                a[(i, j)] = raw[j] / s;
            }
        }
        a
    }

    struct Instance {
        pixels: Vec<DVector<f64>>,
        a: DMatrix<f64>,
        table: CombinationTable,
        noise: DMatrix<f64>,
        graph: PixelGraph,
    }

    fn instance(seed: u64, counts: &[usize], b: usize, rows: usize, cols: usize, betas: (f64, f64)) -> Instance {
        let mut rng = seeded(seed);
        let theta = random_set(&mut rng, counts, b);
        let n = rows * cols;
        let pixels: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(b, |_, _| rng.random_range(-1.0..1.0))).collect();
        let cube = crate::cube::SpectralCube::new(
            DMatrix::from_fn(n, b, |i, j| pixels[i][j]),
            rows,
            cols,
        )
        .unwrap();
        Instance {
            a: random_abundances(&mut rng, n, counts.len()),
            table: enumerate_combinations(&theta).unwrap(),
            noise: DMatrix::identity(b, b) * 0.02,
            graph: PixelGraph::new(&cube, None, betas.0, betas.1).unwrap(),
            pixels,
        }
    }

    #[test]
    fn single_combination_gives_unit_responsibilities() {
        let inst = instance(1, &[1, 1], 2, 2, 2, (0.0, 0.0));
        let (_, g) = evaluate(&inst.pixels, &inst.a, &inst.table, &inst.noise, &inst.graph).unwrap();
        assert!(g.matrix().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn symmetric_combinations_split_evenly() {
        let comp = |m: f64| {
            crate::gmm::GaussianComponent::new(0.5, DVector::from_element(1, m), CovarianceMatrix::scaled_identity(1, 0.1)).unwrap()
        };
        let theta = EndmemberGmmSet::new(vec![crate::gmm::EndmemberGmm::new(vec![comp(-1.0), comp(1.0)]).unwrap()]).unwrap();
        let table = enumerate_combinations(&theta).unwrap();
        let g = e_step(
            &[DVector::from_element(1, 0.0)],
            &DMatrix::from_element(1, 1, 1.0),
            &table,
            &NoiseModel::isotropic(1, 0.1).unwrap(),
        )
        .unwrap();
        assert!((g.get(0, 0) - 0.5).abs() < 1e-12 && (g.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn responsibilities_match_direct_ratio() {
        let inst = instance(2, &[2, 3], 3, 2, 3, (0.0, 0.0));
        let (_, g) = evaluate(&inst.pixels, &inst.a, &inst.table, &inst.noise, &inst.graph).unwrap();
        for n in 0..inst.pixels.len() {
            let alpha = row(&inst.a, n);
            let dens: Vec<f64> = (0..inst.table.len())
                .map(|k| {
                    let s = inst.table.combined_covariance(&alpha, &inst.noise, k);
                    let mu = inst.table.combined_mean(&alpha, k);
                    let r = &inst.pixels[n] - mu;
                    let inv = s.clone().try_inverse().unwrap();
                    let q = (r.transpose() * inv * &r)[0];
                    inst.table.weights()[k] * (-0.5 * q).exp() / (s * 2.0 * std::f64::consts::PI).determinant().sqrt()
                })
                .collect();
            let total: f64 = dens.iter().sum();
            for k in 0..inst.table.len() {
                assert!((g.get(n, k) - dens[k] / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn objective_matches_naive_evaluation() {
        let inst = instance(3, &[2, 2], 2, 2, 2, (1.5, 0.5));
        let obj = objective_with_table(&inst.pixels, &inst.a, &inst.table, &inst.noise, &inst.graph).unwrap();
        let mut naive = 0.0;
        for n in 0..inst.pixels.len() {
            let alpha = row(&inst.a, n);
            let mut p = 0.0;
            for k in 0..inst.table.len() {
                let s = inst.table.combined_covariance(&alpha, &inst.noise, k);
                let r = &inst.pixels[n] - inst.table.combined_mean(&alpha, k);
                let q = (r.transpose() * s.clone().try_inverse().unwrap() * &r)[0];
                p += inst.table.weights()[k] * (-0.5 * q).exp() / (s * 2.0 * std::f64::consts::PI).determinant().sqrt();
            }
            naive -= p.ln();
        }
        let l = inst.graph.laplacian.to_dense();
        naive += 0.75 * (inst.a.transpose() * l * &inst.a).trace() - 0.25 * inst.a.norm_squared();
        assert!((obj - naive).abs() < 1e-9, "{obj} vs {naive}");
    }

    #[test]
    fn pi_update_is_column_mean() {
        let g = Responsibilities::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(m_step_pi(&g), vec![0.5, 0.5]);
        let same = Responsibilities::new(DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.2, 0.3, 0.5, 0.2, 0.3, 0.5])).unwrap();
        let pi = m_step_pi(&same);
        for (a, b) in pi.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn fd_check(seed: u64) -> f64 {
        let inst = instance(seed, &[2, 2], 3, 2, 2, (0.8, 0.3));
        let (_, gamma) = evaluate(&inst.pixels, &inst.a, &inst.table, &inst.noise, &inst.graph).unwrap();
        let sur = Surrogate {
            pixels: &inst.pixels,
            noise: &inst.noise,
            gamma: &gamma,
            graph: &inst.graph,
        };
        let grads = m_step_gradients(&sur, &inst.a, &inst.table).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;

        let mut rel = |analytic: &[f64], fd: &[f64]| {
            let num = analytic.iter().zip(fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let den = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
            worst = worst.max(num / den);
        };

        let mut an = Vec::new();
        let mut fd = Vec::new();
        for n in 0..inst.a.nrows() {
            for j in 0..inst.a.ncols() {
                let mut p = inst.a.clone();
                p[(n, j)] += h;
                let mut q = inst.a.clone();
                q[(n, j)] -= h;
                fd.push((surrogate_energy(&sur, &p, &inst.table).unwrap() - surrogate_energy(&sur, &q, &inst.table).unwrap()) / (2.0 * h));
                an.push(grads.abundances[(n, j)]);
            }
        }
        rel(&an, &fd);

        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for j in 0..2 {
            for l in 0..2 {
                for e in 0..3 {
                    let shift = |d: f64| {
                        let mut t = inst.table.clone();
                        let mut mu = t.component_mean(j, l).clone();
                        mu[e] += d;
                        t.set_component_mean(j, l, mu);
                        surrogate_energy(&sur, &inst.a, &t).unwrap()
                    };
                    fd.push((shift(h) - shift(-h)) / (2.0 * h));
                    an.push(grads.means[j][l][e]);
                }
            }
        }
        rel(&an, &fd);

        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for j in 0..2 {
            for l in 0..2 {
                for r in 0..3 {
                    for c in r..3 {
                        let shift = |d: f64| {
                            let mut t = inst.table.clone();
                            let mut s = t.component_covariance(j, l).clone();
                            s[(r, c)] += d;
                            if r != c {
                                s[(c, r)] += d;
                            }
                            t.set_component_covariance(j, l, s);
                            surrogate_energy(&sur, &inst.a, &t).unwrap()
                        };
                        let g = grads.covariances[j][l][(r, c)];
                        fd.push((shift(h) - shift(-h)) / (2.0 * h));
                        an.push(if r == c { g } else { 2.0 * g });
                    }
                }
            }
        }
        rel(&an, &fd);
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let err = fd_check(100 + seed);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_residual_gives_zero_mean_gradient() {
        let mut rng = seeded(5);
        let theta = random_set(&mut rng, &[1, 1], 3);
        let table = enumerate_combinations(&theta).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let pixels: Vec<_> = (0..2).map(|n| table.combined_mean(&row(&a, n), 0)).collect();
        let noise = DMatrix::identity(3, 3) * 0.01;
        let graph = PixelGraph::unweighted(2, 0.0);
        let (_, gamma) = evaluate(&pixels, &a, &table, &noise, &graph).unwrap();
        let sur = Surrogate {
            pixels: &pixels,
            noise: &noise,
            gamma: &gamma,
            graph: &graph,
        };
        let g = m_step_gradients(&sur, &a, &table).unwrap();
        assert!(g.means.iter().flatten().all(|v| v.amax() < 1e-12));
    }

    #[test]
    fn scalar_two_endmember_gradient_matches_symbolic() {
        // y ~ N(a m1 + (1-a)... ) with alpha = (a1, a2), scalar variances s1, s2, noise d.
        let (m1, m2, s1, s2, d, y) = (0.2, 0.9, 0.03, 0.05, 0.01, 0.5);
        let comp = |m: f64, s: f64| {
            crate::gmm::EndmemberGmm::single(DVector::from_element(1, m), CovarianceMatrix::scaled_identity(1, s)).unwrap()
        };
        let theta = EndmemberGmmSet::new(vec![comp(m1, s1), comp(m2, s2)]).unwrap();
        let table = enumerate_combinations(&theta).unwrap();
        let (a1, a2) = (0.35, 0.65);
        let a = DMatrix::from_row_slice(1, 2, &[a1, a2]);
        let pixels = vec![DVector::from_element(1, y)];
        let noise = DMatrix::from_element(1, 1, d);
        let graph = PixelGraph::unweighted(1, 0.0);
        let (_, gamma) = evaluate(&pixels, &a, &table, &noise, &graph).unwrap();
        let sur = Surrogate {
            pixels: &pixels,
            noise: &noise,
            gamma: &gamma,
            graph: &graph,
        };
        let g = m_step_gradients(&sur, &a, &table).unwrap();
        // E = 0.5 ln(2 pi S) + r^2 / (2 S), S = a1^2 s1 + a2^2 s2 + d, r = y - a1 m1 - a2 m2.
        let s = a1 * a1 * s1 + a2 * a2 * s2 + d;
        let r = y - a1 * m1 - a2 * m2;
        let de = |aj: f64, mj: f64, sj: f64| aj * sj / s - r * mj / s - r * r * aj * sj / (s * s);
        assert!((g.abundances[(0, 0)] - de(a1, m1, s1)).abs() < 1e-12);
        assert!((g.abundances[(0, 1)] - de(a2, m2, s2)).abs() < 1e-12);
    }
}
