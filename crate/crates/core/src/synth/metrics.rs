use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::combination::enumerate_combinations;
use crate::error::{Error, Result};
use crate::gmm::{EndmemberGmmSet, NoiseModel};
use crate::rng::seeded;

/// Per-endmember `sqrt(mean_n (a_est - a_true)^2)` over `index_set` (all
/// pixels if `None`). An empty set gives NaN.
pub fn abundance_rmse(a_est: &DMatrix<f64>, a_true: &DMatrix<f64>, index_set: Option<&[usize]>) -> Result<Vec<f64>> {
    if a_est.shape() != a_true.shape() {
        return Err(Error::InvalidArgument(format!(
            "abundance shapes differ: {:?} vs {:?}",
            a_est.shape(),
            a_true.shape()
        )));
    }
    let all: Vec<usize>;
    let idx = match index_set {
        Some(s) => s,
        None => {
            all = (0..a_true.nrows()).collect();
            &all
        }
    };
    if let Some(&bad) = idx.iter().find(|&&n| n >= a_true.nrows()) {
        return Err(Error::InvalidArgument(format!("pixel index {bad} out of range")));
    }
    Ok((0..a_true.ncols())
        .map(|j| {
            let ss: f64 = idx.iter().map(|&n| (a_est[(n, j)] - a_true[(n, j)]).powi(2)).sum();
            (ss / idx.len() as f64).sqrt()
        })
        .collect())
}

/// Per-endmember `mean_{n in I_j} sqrt(||m_true - m_est||^2 / B)`, with
/// per-pixel spectra given as `M x B` matrices. An empty set gives NaN.
pub fn endmember_error(est: &[DMatrix<f64>], truth: &[DMatrix<f64>], index_sets: &[Vec<usize>]) -> Result<Vec<f64>> {
    if est.len() != truth.len() {
        return Err(Error::dim("pixel count", truth.len(), est.len()));
    }
    let Some(first) = truth.first() else {
        return Ok(vec![f64::NAN; index_sets.len()]);
    };
    let (m, b) = first.shape();
    if index_sets.len() != m {
        return Err(Error::dim("index sets", m, index_sets.len()));
    }
    for (e, t) in est.iter().zip(truth) {
        if e.shape() != (m, b) || t.shape() != (m, b) {
            return Err(Error::InvalidArgument("per-pixel spectra must all be M x B".into()));
        }
    }
    index_sets
        .iter()
        .enumerate()
        .map(|(j, set)| {
            let mut total = 0.0;
            for &n in set {
                if n >= truth.len() {
                    return Err(Error::InvalidArgument(format!("pixel index {n} out of range")));
                }
                total += ((truth[n].row(j) - est[n].row(j)).norm_squared() / b as f64).sqrt();
            }
            Ok(total / set.len() as f64)
        })
        .collect()
}

/// Permutation `p` minimizing `sum_j ||a_est[:, p[j]] - a_true[:, j]||^2`,
/// found exhaustively for up to 8 endmembers and greedily beyond.
pub fn best_permutation(a_est: &DMatrix<f64>, a_true: &DMatrix<f64>) -> Result<Vec<usize>> {
    if a_est.shape() != a_true.shape() {
        return Err(Error::InvalidArgument("abundance shapes differ".into()));
    }
    let m = a_true.ncols();
    let cost = DMatrix::from_fn(m, m, |i, j| (a_est.column(i) - a_true.column(j)).norm_squared());
    if m > 8 {
        let mut used = vec![false; m];
        let mut perm = vec![0; m];
        for j in 0..m {
            let i = (0..m)
                .filter(|&i| !used[i])
                .min_by(|&x, &y| cost[(x, j)].total_cmp(&cost[(y, j)]))
                .unwrap();
            used[i] = true;
            perm[j] = i;
        }
        return Ok(perm);
    }
    let mut best = (f64::INFINITY, (0..m).collect::<Vec<_>>());
    let mut current: Vec<usize> = Vec::with_capacity(m);
    let mut used = vec![false; m];
    search(&cost, &mut current, &mut used, 0.0, &mut best);
    Ok(best.1)
}

fn search(cost: &DMatrix<f64>, current: &mut Vec<usize>, used: &mut [bool], acc: f64, best: &mut (f64, Vec<usize>)) {
    let m = used.len();
    let j = current.len();
    if j == m {
        if acc < best.0 {
            *best = (acc, current.clone());
        }
        return;
    }
    for i in 0..m {
        if !used[i] {
            used[i] = true;
            current.push(i);
            search(cost, current, used, acc + cost[(i, j)], best);
            current.pop();
            used[i] = false;
        }
    }
}

/// Column `j` of the result is column `perm[j]` of `a`.
pub fn permute_columns(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), perm.len(), |n, j| a[(n, perm[j])])
}

/// Equal-width histogram normalized to a density.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub density: Vec<f64>,
    /// Samples that fell outside the binned range.
    pub outside: usize,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.density.len()).map(|i| self.lo + i as f64 * self.width).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.density.len()).map(|i| self.lo + (i as f64 + 0.5) * self.width).collect()
    }
}

/// Simulates `y = sum_j alpha_j m_j + n` with `m_j` drawn from the endmember
/// mixtures and bins the draws. The model must be one-dimensional (project
/// it first for multiband data). The range covers six standard deviations
/// around every combination mean.
pub fn monte_carlo_pixel_density(
    alpha: &[f64],
    theta: &EndmemberGmmSet,
    noise: &NoiseModel,
    n_samples: usize,
    bins: usize,
    seed: u64,
) -> Result<Histogram> {
    if theta.bands() != 1 || noise.dim() != 1 {
        return Err(Error::Unsupported("Monte-Carlo density is defined for one-dimensional models".into()));
    }
    if alpha.len() != theta.n_endmembers() {
        return Err(Error::dim("abundances", theta.n_endmembers(), alpha.len()));
    }
    if bins == 0 || n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one bin and one sample".into()));
    }
    let table = enumerate_combinations(theta)?;
    let d = noise.matrix();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..table.len() {
        let mu = table.combined_mean(alpha, k)[0];
        let sd = table.combined_covariance(alpha, d, k)[(0, 0)].max(0.0).sqrt();
        lo = lo.min(mu - 6.0 * sd);
        hi = hi.max(mu + 6.0 * sd);
    }
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;

    let sds: Vec<Vec<f64>> = theta
        .endmembers()
        .iter()
        .map(|g| g.components().iter().map(|c| c.covariance.matrix()[(0, 0)].sqrt()).collect())
        .collect();
    let noise_sd = d[(0, 0)].sqrt();
    let mut rng = seeded(seed);
    let mut counts = vec![0usize; bins];
    let mut outside = 0;
    for _ in 0..n_samples {
        let mut y = 0.0;
        for (j, g) in theta.endmembers().iter().enumerate() {
            let k = g.draw_component(&mut rng);
            let z: f64 = rng.sample(StandardNormal);
            y += alpha[j] * (g.components()[k].mean[0] + sds[j][k] * z);
        }
        let z: f64 = rng.sample(StandardNormal);
        y += noise_sd * z;
        let pos = ((y - lo) / width).floor();
        if pos >= 0.0 && (pos as usize) < bins {
            counts[pos as usize] += 1;
        } else {
            outside += 1;
        }
    }
    Ok(Histogram {
        lo,
        width,
        density: counts.iter().map(|&c| c as f64 / (n_samples as f64 * width)).collect(),
        outside,
    })
}

/// Average of `f` over each bin of `h` by composite Simpson's rule.
pub fn bin_averages(h: &Histogram, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let steps = 16;
    h.edges()
        .windows(2)
        .map(|e| {
            let step = (e[1] - e[0]) / steps as f64;
            let mut s = f(e[0]) + f(e[1]);
            for i in 1..steps {
                s += f(e[0] + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * step / 3.0 / (e[1] - e[0])
        })
        .collect()
}
