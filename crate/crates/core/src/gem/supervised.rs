use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{run_gem, GemConfig, TraceRow, UpdatePlan};
use crate::combination::enumerate_combinations_capped;
use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::gmm::{EndmemberGmmSet, NoiseModel};
use crate::graph::PixelGraph;
use crate::linalg::project_simplex;
use crate::pca::{pca_fit, PcaBasis};

#[derive(Debug, Clone)]
pub struct SupervisedFit {
    pub abundances: DMatrix<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub basis: PcaBasis,
}

/// Least-squares start: for every combination `k`, `alpha = (R_k R_k^T + eps I)^{-1} R_k y`
/// projected to the simplex; each pixel keeps the candidate with the
/// smallest reconstruction error `||y - R_k^T alpha||^2`.
pub fn init_abundances_supervised(pixels: &DMatrix<f64>, theta: &EndmemberGmmSet, ridge: f64, cap: usize) -> Result<DMatrix<f64>> {
    if pixels.ncols() != theta.bands() {
        return Err(Error::dim("library bands", pixels.ncols(), theta.bands()));
    }
    let m = theta.n_endmembers();
    if m == 1 {
        return Ok(DMatrix::from_element(pixels.nrows(), 1, 1.0));
    }
    let table = enumerate_combinations_capped(theta, cap)?;
    let systems: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..table.len())
        .map(|k| {
            let r = table.mean_stack(k);
            let gram = &r * r.transpose() + DMatrix::identity(m, m) * ridge;
            let inv = gram.cholesky().ok_or(Error::NotPositiveDefinite)?.inverse();
            Ok((inv * &r, r))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..pixels.nrows())
        .into_par_iter()
        .map(|n| {
            let y: DVector<f64> = pixels.row(n).transpose();
            let mut best = (f64::INFINITY, vec![1.0 / m as f64; m]);
            for (solve, r) in &systems {
                let alpha = project_simplex((solve * &y).as_slice());
                let err = (&y - r.tr_mul(&DVector::from_column_slice(&alpha))).norm_squared();
                if err < best.0 {
                    best = (err, alpha);
                }
            }
            best.1
        })
        .collect();
    Ok(DMatrix::from_fn(pixels.nrows(), m, |n, j| rows[n][j]))
}

/// Supervised unmixing with a known endmember library: PCA to `cfg.dim`
/// dimensions, least-squares initialization, then GEM updating only the
/// abundances (weights, means and covariances stay fixed).
pub fn run_supervised(cube: &SpectralCube, library: &EndmemberGmmSet, noise: &NoiseModel, cfg: &GemConfig) -> Result<SupervisedFit> {
    if library.bands() != cube.n_bands() {
        return Err(Error::dim("library bands", cube.n_bands(), library.bands()));
    }
    if noise.dim() != cube.n_bands() {
        return Err(Error::dim("noise bands", cube.n_bands(), noise.dim()));
    }
    let basis = subspace(cube, cfg.dim)?;
    let a0 = init_abundances_supervised(cube.data(), library, cfg.ridge, cfg.combination_cap)?;
    if library.n_endmembers() == 1 {
        return Ok(SupervisedFit {
            abundances: a0,
            trace: Vec::new(),
            converged: true,
            basis,
        });
    }
    let graph = PixelGraph::new(cube, cfg.eta, cfg.beta1, cfg.beta2)?;
    let pixels = basis.project_cube(cube)?.pixels();
    let table = enumerate_combinations_capped(&basis.project_model(library)?, cfg.combination_cap)?;
    let pnoise = basis.project_noise(noise)?;
    let run = run_gem(
        &pixels,
        cube.rows(),
        cube.cols(),
        a0,
        table,
        pnoise.matrix(),
        &graph,
        UpdatePlan::default(),
        cfg,
    )?;
    Ok(SupervisedFit {
        abundances: run.abundances,
        trace: run.trace,
        converged: run.converged,
        basis,
    })
}

/// PCA basis of dimension `min(dim, N, B)`; an identity basis when the
/// cube has no variance to analyse.
pub(crate) fn subspace(cube: &SpectralCube, dim: usize) -> Result<PcaBasis> {
    let d = dim.min(cube.n_pixels()).min(cube.n_bands()).max(1);
    match pca_fit(cube, d) {
        Ok(b) => Ok(b),
        Err(Error::DegenerateCovariance) => {
            log::warn!("cube has no variance; optimizing in the full band space");
            Ok(PcaBasis::identity(cube.n_bands()))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{EndmemberGmm, GaussianComponent};
    use crate::linalg::CovarianceMatrix;

    fn library(means: &[&[f64]], var: f64) -> EndmemberGmmSet {
        EndmemberGmmSet::new(
            means
                .iter()
                .map(|m| EndmemberGmm::single(DVector::from_column_slice(m), CovarianceMatrix::scaled_identity(m.len(), var)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn vertex_pixels_initialize_to_vertices() {
        let lib = library(&[&[0.9, 0.1, 0.2, 0.1], &[0.1, 0.8, 0.1, 0.3], &[0.2, 0.2, 0.9, 0.6]], 1e-4);
        let pixels = DMatrix::from_row_slice(3, 4, &[0.9, 0.1, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.2, 0.2, 0.9, 0.6]);
        let a = init_abundances_supervised(&pixels, &lib, 1e-6, 4096).unwrap();
        for j in 0..3 {
            assert!(a[(j, j)] > 0.95);
        }
    }

    #[test]
    fn single_endmember_is_all_ones() {
        let lib = library(&[&[0.5, 0.5]], 1e-3);
        let a = init_abundances_supervised(&DMatrix::from_element(4, 2, 0.3), &lib, 1e-6, 4096).unwrap();
        assert!(a.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn multimodal_library_picks_best_combination() {
        let two = EndmemberGmm::new(vec![
            GaussianComponent::new(0.5, DVector::from_vec(vec![0.9, 0.1, 0.1]), CovarianceMatrix::scaled_identity(3, 1e-4)).unwrap(),
            GaussianComponent::new(0.5, DVector::from_vec(vec![0.5, 0.5, 0.1]), CovarianceMatrix::scaled_identity(3, 1e-4)).unwrap(),
        ])
        .unwrap();
        let one = EndmemberGmm::single(DVector::from_vec(vec![0.1, 0.1, 0.9]), CovarianceMatrix::scaled_identity(3, 1e-4)).unwrap();
        let lib = EndmemberGmmSet::new(vec![two, one]).unwrap();
        // 0.6 * second mode + 0.4 * other endmember.
        let y = [0.6 * 0.5 + 0.4 * 0.1, 0.6 * 0.5 + 0.4 * 0.1, 0.6 * 0.1 + 0.4 * 0.9];
        let a = init_abundances_supervised(&DMatrix::from_row_slice(1, 3, &y), &lib, 1e-6, 4096).unwrap();
        assert!((a[(0, 0)] - 0.6).abs() < 1e-4, "{a}");
    }

    #[test]
    fn noiseless_vertex_pixel_is_recovered() {
        let lib = library(&[&[0.8, 0.2, 0.3, 0.1, 0.5], &[0.2, 0.7, 0.4, 0.6, 0.1]], 1e-4);
        let mut data = DMatrix::zeros(4, 5);
        let alphas = [1.0, 0.0, 0.3, 0.7];
        for (n, &a) in alphas.iter().enumerate() {
            for b in 0..5 {
                data[(n, b)] = a * lib.endmembers()[0].components()[0].mean[b] + (1.0 - a) * lib.endmembers()[1].components()[0].mean[b];
            }
        }
        let cube = SpectralCube::new(data, 2, 2).unwrap();
        let cfg = GemConfig {
            beta1: 0.0,
            beta2: 0.0,
            ..Default::default()
        };
        let fit = run_supervised(&cube, &lib, &NoiseModel::isotropic(5, 0.001).unwrap(), &cfg).unwrap();
        for (n, &a) in alphas.iter().enumerate() {
            assert!((fit.abundances[(n, 0)] - a).abs() < 0.02, "{}", fit.abundances);
        }
        for w in fit.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-8 * w[0].objective.abs().max(1.0));
        }
    }

    #[test]
    fn mismatched_bands_are_rejected() {
        let lib = library(&[&[0.8, 0.2], &[0.2, 0.7]], 1e-4);
        let cube = SpectralCube::new(DMatrix::from_element(4, 3, 0.5), 2, 2).unwrap();
        let err = run_supervised(&cube, &lib, &NoiseModel::isotropic(3, 0.001).unwrap(), &GemConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
