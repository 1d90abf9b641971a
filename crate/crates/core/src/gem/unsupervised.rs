use nalgebra::DMatrix;

use super::supervised::{init_abundances_supervised, run_supervised, subspace};
use super::{run_gem, select_num_components, CvicResult, GemConfig, PurePixels, TraceRow, UpdatePlan};
use crate::combination::enumerate_combinations_capped;
use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::gem::extract_pure_pixels;
use crate::gmm::{gmm_fit_em, EndmemberGmm, EndmemberGmmSet, NoiseModel};
use crate::graph::PixelGraph;
use crate::kmeans::{kmeans, KMeansOptions};
use crate::linalg::CovarianceMatrix;
use crate::pca::PcaBasis;
use crate::rng::derive_seed;

#[derive(Debug, Clone)]
pub struct UnsupervisedFit {
    pub abundances: DMatrix<f64>,
    /// Fitted endmember distributions in band space.
    pub model: EndmemberGmmSet,
    pub cvic: Vec<CvicResult>,
    pub pure_pixels: PurePixels,
    /// Abundances at the end of the segmentation phase.
    pub segmentation: DMatrix<f64>,
    pub segmentation_trace: Vec<TraceRow>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub basis: PcaBasis,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LibraryFit {
    pub model: EndmemberGmmSet,
    pub cvic: Vec<CvicResult>,
    pub basis: PcaBasis,
    pub warnings: Vec<String>,
}

/// Fits one mixture per set of pure spectra (rows are samples). Component
/// counts are chosen by cross-validation in a PCA subspace of all samples,
/// the final EM fit runs in band space.
pub fn fit_library(samples: &[DMatrix<f64>], cfg: &GemConfig) -> Result<LibraryFit> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidArgument("need at least one set of pure spectra".into()));
    };
    let b = first.ncols();
    if let Some(bad) = samples.iter().find(|s| s.ncols() != b) {
        return Err(Error::dim("library bands", b, bad.ncols()));
    }
    if let Some(j) = samples.iter().position(|s| s.nrows() == 0) {
        return Err(Error::NoPurePixels { endmember: j });
    }
    let n: usize = samples.iter().map(|s| s.nrows()).sum();
    let mut all = DMatrix::zeros(n, b);
    let mut row = 0;
    for s in samples {
        all.rows_mut(row, s.nrows()).copy_from(s);
        row += s.nrows();
    }
    let basis = subspace(&SpectralCube::from_samples(all)?, cfg.dim)?;
    let mut warnings = Vec::new();
    let mut models = Vec::with_capacity(samples.len());
    let mut cvic = Vec::with_capacity(samples.len());
    for (j, s) in samples.iter().enumerate() {
        let projected = basis.project_cube(&SpectralCube::from_samples(s.clone())?)?;
        let (g, c) = fit_endmember(s, projected.data(), j, cfg, &mut warnings)?;
        models.push(g);
        cvic.push(c);
    }
    Ok(LibraryFit {
        model: EndmemberGmmSet::new(models)?,
        cvic,
        basis,
        warnings,
    })
}

/// Unsupervised unmixing in three steps:
///
/// 1. PCA, k-means centres as single-Gaussian endmembers with covariance
///    `init_sigma^2 I`, least-squares abundances;
/// 2. segmentation by GEM over weights, means and abundances (covariances
///    fixed) with the large `beta2`;
/// 3. pure pixels by thresholding and erosion, component counts by
///    cross-validation, per-endmember EM fits, and a fresh abundance
///    estimate with the fitted model fixed and `beta2` scaled by `zeta`.
pub fn run_unsupervised(cube: &SpectralCube, m: usize, noise: Option<&NoiseModel>, cfg: &GemConfig) -> Result<UnsupervisedFit> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one endmember".into()));
    }
    let b = cube.n_bands();
    let noise = match noise {
        Some(n) if n.dim() != b => return Err(Error::dim("noise bands", b, n.dim())),
        Some(n) => n.clone(),
        None => NoiseModel::isotropic(b, cfg.noise_sigma)?,
    };
    let basis = subspace(cube, cfg.dim)?;
    let projected = basis.project_cube(cube)?;
    let mut warnings = Vec::new();

    if m == 1 {
        let all: Vec<usize> = (0..cube.n_pixels()).collect();
        let (model, cvic) = fit_endmember(cube.data(), projected.data(), 0, cfg, &mut warnings)?;
        return Ok(UnsupervisedFit {
            abundances: DMatrix::from_element(cube.n_pixels(), 1, 1.0),
            model: EndmemberGmmSet::new(vec![model])?,
            cvic: vec![cvic],
            pure_pixels: PurePixels {
                sets: vec![all],
                radii: vec![0],
            },
            segmentation: DMatrix::from_element(cube.n_pixels(), 1, 1.0),
            segmentation_trace: Vec::new(),
            trace: Vec::new(),
            converged: true,
            basis,
            warnings,
        });
    }

    // Step 1.
    let points = projected.pixels();
    let km = kmeans(&points, m, cfg.seed, &KMeansOptions::default())?;
    let init = EndmemberGmmSet::new(
        km.centers
            .iter()
            .map(|c| EndmemberGmm::single(basis.reconstruct(c), CovarianceMatrix::scaled_identity(b, cfg.init_sigma.powi(2))))
            .collect::<Result<_>>()?,
    )?;
    let a0 = init_abundances_supervised(cube.data(), &init, cfg.ridge, cfg.combination_cap)?;

    // Step 2.
    let graph = PixelGraph::new(cube, cfg.eta, cfg.beta1, cfg.beta2)?;
    let table = enumerate_combinations_capped(&basis.project_model(&init)?, cfg.combination_cap)?;
    let pnoise = basis.project_noise(&noise)?;
    let seg = run_gem(
        &points,
        cube.rows(),
        cube.cols(),
        a0,
        table,
        pnoise.matrix(),
        &graph,
        UpdatePlan {
            weights: true,
            means: true,
        },
        cfg,
    )?;

    // Step 3.
    let pure = extract_pure_pixels(&seg.abundances, cube.rows(), cube.cols(), cfg.purity_threshold, cfg.r_se)?;
    let mut models = Vec::with_capacity(m);
    let mut cvic = Vec::with_capacity(m);
    for (j, set) in pure.sets.iter().enumerate() {
        let (g, c) = fit_endmember(&cube.select(set), &projected.select(set), j, cfg, &mut warnings)?;
        log::info!("endmember {j}: {} pure pixels, K = {}", set.len(), g.n_components());
        models.push(g);
        cvic.push(c);
    }
    let model = EndmemberGmmSet::new(models)?;
    let final_cfg = GemConfig {
        beta2: cfg.beta2 * cfg.zeta,
        ..cfg.clone()
    };
    let fit = run_supervised(cube, &model, &noise, &final_cfg)?;
    Ok(UnsupervisedFit {
        abundances: fit.abundances,
        model,
        cvic,
        pure_pixels: pure,
        segmentation: seg.abundances,
        segmentation_trace: seg.trace,
        trace: fit.trace,
        converged: seg.converged && fit.converged,
        basis,
        warnings,
    })
}

/// Component count by cross-validation in the subspace, then an EM fit of
/// that many components in band space.
fn fit_endmember(band: &DMatrix<f64>, projected: &DMatrix<f64>, j: usize, cfg: &GemConfig, warnings: &mut Vec<String>) -> Result<(EndmemberGmm, CvicResult)> {
    let seed = derive_seed(cfg.seed, 1000 + j as u64);
    let cvic = select_num_components(projected, cfg.k_max, cfg.folds, seed, &cfg.em)?;
    if let Some(w) = &cvic.warning {
        warnings.push(format!("endmember {j}: {w}"));
    }
    let fit = gmm_fit_em(band, cvic.k, derive_seed(seed, 1), &cfg.em)?;
    Ok((fit.model, cvic))
}
