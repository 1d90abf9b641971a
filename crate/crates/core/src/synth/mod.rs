//! Seeded synthetic scenes with known abundances, per-pixel endmembers and
//! noise, plus the error metrics used to score estimates against them.

pub mod metrics;
mod spectra;

pub use metrics::{
    abundance_rmse, best_permutation, bin_averages, endmember_error, monte_carlo_pixel_density, permute_columns, Histogram,
};
pub use spectra::{builtin_spectrum, default_wavelengths, BUILTIN_SPECTRA};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::gmm::{sampling_root, EndmemberGmm, EndmemberGmmSet, GaussianComponent, NoiseModel};
use crate::linalg::{symmetrize, CovarianceMatrix};
use crate::rng::{derive_seed, seeded};

const STREAM_ABUNDANCE: u64 = 1;
const STREAM_ENDMEMBERS: u64 = 2;
const STREAM_NOISE_LEVEL: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_DIRECTIONS: u64 = 5;

/// `a^2 I + b^2 u u^T` with `u` normalized.
pub fn make_covariance(a: f64, b: f64, u: &DVector<f64>) -> Result<CovarianceMatrix> {
    let norm = u.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::InvalidArgument("covariance direction must be a nonzero finite vector".into()));
    }
    let u = u / norm;
    let n = u.len();
    CovarianceMatrix::new(symmetrize(&(DMatrix::identity(n, n) * (a * a) + &u * u.transpose() * (b * b))))
}

/// Configuration of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub seed: u64,
    /// Upper bound of the per-band noise standard deviations.
    pub noise_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<Vec<f64>>,
    pub abundance: AbundanceSpec,
    pub endmembers: Vec<EndmemberSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AbundanceSpec {
    Dirichlet {
        #[serde(default = "one")]
        concentration: f64,
    },
    /// Four pure quadrants with Gaussian-smoothed boundaries; needs four endmembers.
    Quadrant {
        #[serde(default = "two")]
        smoothing: f64,
    },
    /// Endmember 0 everywhere, other endmembers in Gaussian blobs.
    BlobBackground {
        #[serde(default = "blob_count")]
        blobs: usize,
        #[serde(default = "three")]
        width_mean: f64,
        #[serde(default = "one")]
        width_sd: f64,
        #[serde(default = "two")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn three() -> f64 {
    3.0
}
fn blob_count() -> usize {
    150
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndmemberSpec {
    #[serde(default)]
    pub name: String,
    pub components: Vec<ComponentSpec>,
}

/// One generating component. The covariance is `covariance` (row-major) if
/// given, else `a^2 I + b^2 u u^T` with `u = direction` or a seeded random
/// unit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: MeanSpec,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Values(Vec<f64>),
    Builtin {
        spectrum: String,
        #[serde(default = "one")]
        scale: f64,
        /// Added to every band after scaling.
        #[serde(default)]
        offset: f64,
    },
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene specs always serialize")
    }

    pub fn n_endmembers(&self) -> usize {
        self.endmembers.len()
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        self.wavelengths.clone().unwrap_or_else(|| default_wavelengths(self.bands))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.rows == 0 || self.cols == 0 || self.bands == 0 {
            return bad("scene needs positive rows, cols and bands".into());
        }
        if self.endmembers.is_empty() {
            return bad("scene needs at least one endmember".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if let Some(w) = &self.wavelengths {
            if w.len() != self.bands {
                return Err(Error::dim("wavelengths", self.bands, w.len()));
            }
        }
        match &self.abundance {
            AbundanceSpec::Dirichlet { concentration } if !(*concentration > 0.0) => {
                return bad(format!("Dirichlet concentration must be > 0, got {concentration}"));
            }
            AbundanceSpec::Quadrant { smoothing } => {
                if self.endmembers.len() != 4 {
                    return bad(format!("quadrant mode needs 4 endmembers, got {}", self.endmembers.len()));
                }
                if !(*smoothing >= 0.0) {
                    return bad("quadrant smoothing must be >= 0".into());
                }
            }
            AbundanceSpec::BlobBackground { width_mean, amplitude, .. } if !(*width_mean > 0.0 && *amplitude > 0.0) => {
                return bad("blob width_mean and amplitude must be > 0".into());
            }
            _ => {}
        }
        self.theta().map(|_| ())
    }

    /// The generating endmember distributions.
    pub fn theta(&self) -> Result<EndmemberGmmSet> {
        let wl = self.wavelengths();
        let mut rng = seeded(derive_seed(self.seed, STREAM_DIRECTIONS));
        let mut gmms = Vec::with_capacity(self.endmembers.len());
        for e in &self.endmembers {
            let mut comps = Vec::with_capacity(e.components.len());
            for c in &e.components {
                let mean = match &c.mean {
                    MeanSpec::Values(v) => DVector::from_column_slice(v),
                    MeanSpec::Builtin { spectrum, scale, offset } => (builtin_spectrum(spectrum, &wl)? * *scale).add_scalar(*offset),
                };
                if mean.len() != self.bands {
                    return Err(Error::dim("component mean", self.bands, mean.len()));
                }
                // Always draw so that the stream does not depend on which components set a direction.
                let random_dir = DVector::from_fn(self.bands, |_, _| rng.sample::<f64, _>(StandardNormal));
                let cov = match (&c.covariance, &c.direction) {
                    (Some(full), _) => {
                        if full.len() != self.bands * self.bands {
                            return Err(Error::dim("component covariance", self.bands * self.bands, full.len()));
                        }
                        CovarianceMatrix::new(DMatrix::from_row_slice(self.bands, self.bands, full))?
                    }
                    (None, Some(u)) => {
                        if u.len() != self.bands {
                            return Err(Error::dim("component direction", self.bands, u.len()));
                        }
                        make_covariance(c.a, c.b, &DVector::from_column_slice(u))?
                    }
                    (None, None) => make_covariance(c.a, c.b, &random_dir)?,
                };
                comps.push(GaussianComponent::new(c.weight, mean, cov)?);
            }
            gmms.push(EndmemberGmm::new(comps)?);
        }
        EndmemberGmmSet::new(gmms)
    }
}

/// A generated scene with everything needed to score an estimate.
#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub spec: SceneSpec,
    pub cube: SpectralCube,
    /// `N x M`.
    pub abundances: DMatrix<f64>,
    /// Per-pixel endmember spectra, each `M x B`.
    pub spectra: Vec<DMatrix<f64>>,
    /// Component index drawn for each pixel and endmember.
    pub labels: Vec<Vec<usize>>,
    pub theta: EndmemberGmmSet,
    /// Diagonal noise covariance actually used.
    pub noise: NoiseModel,
    /// The noise realization, `N x B`.
    pub noise_draws: DMatrix<f64>,
}

impl GroundTruthBundle {
    /// Spectra of endmember `j` for all pixels (`N x B`).
    pub fn plane(&self, j: usize) -> DMatrix<f64> {
        let b = self.cube.n_bands();
        DMatrix::from_fn(self.spectra.len(), b, |n, l| self.spectra[n][(j, l)])
    }

    /// Pixels whose true abundance of each endmember exceeds `threshold`.
    pub fn pure_sets(&self, threshold: f64) -> Vec<Vec<usize>> {
        (0..self.abundances.ncols())
            .map(|j| (0..self.abundances.nrows()).filter(|&n| self.abundances[(n, j)] > threshold).collect())
            .collect()
    }
}

/// Generates a scene from `spec`. The same spec always yields the same bundle.
pub fn gen_scene(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let theta = spec.theta()?;
    let (rows, cols, b, m) = (spec.rows, spec.cols, spec.bands, spec.n_endmembers());
    let n = rows * cols;
    let abundances = match &spec.abundance {
        AbundanceSpec::Dirichlet { concentration } => dirichlet_abundances(n, m, *concentration, derive_seed(spec.seed, STREAM_ABUNDANCE))?,
        AbundanceSpec::Quadrant { smoothing } => quadrant_abundances(rows, cols, *smoothing),
        AbundanceSpec::BlobBackground {
            blobs,
            width_mean,
            width_sd,
            amplitude,
        } => blob_abundances(rows, cols, m, *blobs, *width_mean, *width_sd, *amplitude, derive_seed(spec.seed, STREAM_ABUNDANCE))?,
    };

    let mut rng = seeded(derive_seed(spec.seed, STREAM_ENDMEMBERS));
    let roots: Vec<Vec<DMatrix<f64>>> = theta
        .endmembers()
        .iter()
        .map(|g| g.components().iter().map(|c| sampling_root(c.covariance.matrix())).collect())
        .collect();
    let mut spectra = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = DMatrix::zeros(m, b);
        let mut lab = Vec::with_capacity(m);
        for (j, g) in theta.endmembers().iter().enumerate() {
            let k = g.draw_component(&mut rng);
            s.set_row(j, &g.draw_from(k, &roots[j][k], &mut rng).transpose());
            lab.push(k);
        }
        spectra.push(s);
        labels.push(lab);
    }

    let mut level_rng = seeded(derive_seed(spec.seed, STREAM_NOISE_LEVEL));
    let sigmas: Vec<f64> = (0..b).map(|_| level_rng.random::<f64>() * spec.noise_sigma).collect();
    let noise = NoiseModel::diagonal(&sigmas.iter().map(|s| s * s).collect::<Vec<_>>())?;
    let mut noise_rng = seeded(derive_seed(spec.seed, STREAM_NOISE));
    let noise_draws = DMatrix::from_fn(n, b, |_, l| sigmas[l] * noise_rng.sample::<f64, _>(StandardNormal));

    let mut data = DMatrix::zeros(n, b);
    for p in 0..n {
        let alpha = abundances.row(p).transpose();
        let clean = spectra[p].tr_mul(&alpha);
        for l in 0..b {
            data[(p, l)] = clean[l] + noise_draws[(p, l)];
        }
    }
    let cube = SpectralCube::new(data, rows, cols)?.with_wavelengths(spec.wavelengths())?;
    Ok(GroundTruthBundle {
        spec: spec.clone(),
        cube,
        abundances,
        spectra,
        labels,
        theta,
        noise,
        noise_draws,
    })
}

fn dirichlet_abundances(n: usize, m: usize, concentration: f64, seed: u64) -> Result<DMatrix<f64>> {
    if m == 1 {
        return Ok(DMatrix::from_element(n, 1, 1.0));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seeded(seed);
    let mut a = DMatrix::zeros(n, m);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..m {
            let g: f64 = gamma.sample(&mut rng);
            a[(i, j)] = g;
            total += g;
        }
        if total > 0.0 {
            for j in 0..m {
                a[(i, j)] /= total;
            }
        } else {
            // All draws underflowed (tiny concentration): pick a vertex.
            a[(i, rng.random_range(0..m))] = 1.0;
        }
    }
    Ok(a)
}

/// Quadrant indicator maps smoothed with a normalized Gaussian kernel of
/// width `sigma` pixels (clipped at the image border).
fn quadrant_abundances(rows: usize, cols: usize, sigma: f64) -> DMatrix<f64> {
    let label = |r: usize, c: usize| (r * 2 / rows) * 2 + c * 2 / cols;
    let n = rows * cols;
    let mut a = DMatrix::zeros(n, 4);
    if sigma == 0.0 {
        for r in 0..rows {
            for c in 0..cols {
                a[(r * cols + c, label(r, c))] = 1.0;
            }
        }
        return a;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = [0.0; 4];
            let mut wsum = 0.0;
            for dr in -radius..=radius {
                let rr = r as isize + dr;
                if rr < 0 || rr >= rows as isize {
                    continue;
                }
                for dc in -radius..=radius {
                    let cc = c as isize + dc;
                    if cc < 0 || cc >= cols as isize {
                        continue;
                    }
                    let w = kernel[(dr + radius) as usize] * kernel[(dc + radius) as usize];
                    acc[label(rr as usize, cc as usize)] += w;
                    wsum += w;
                }
            }
            for (j, v) in acc.iter().enumerate() {
                a[(r * cols + c, j)] = v / wsum;
            }
        }
    }
    a
}

#[allow(clippy::too_many_arguments)]
fn blob_abundances(
    rows: usize,
    cols: usize,
    m: usize,
    blobs: usize,
    width_mean: f64,
    width_sd: f64,
    amplitude: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = rows * cols;
    let mut a = DMatrix::zeros(n, m);
    a.column_mut(0).fill(1.0);
    if m > 1 {
        let width = Normal::new(width_mean, width_sd.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = seeded(seed);
        for _ in 0..blobs {
            let cr = rng.random::<f64>() * rows as f64;
            let cc = rng.random::<f64>() * cols as f64;
            let j = rng.random_range(1..m);
            let s: f64 = width.sample(&mut rng).abs().max(0.5);
            for r in 0..rows {
                for c in 0..cols {
                    let d2 = (r as f64 + 0.5 - cr).powi(2) + (c as f64 + 0.5 - cc).powi(2);
                    a[(r * cols + c, j)] += amplitude * (-d2 / (2.0 * s * s)).exp();
                }
            }
        }
    }
    for i in 0..n {
        let total: f64 = a.row(i).sum();
        for j in 0..m {
            a[(i, j)] /= total;
        }
    }
    Ok(a)
}

fn component(weight: f64, spectrum: &str, offset: f64, a: f64, b: f64) -> ComponentSpec {
    ComponentSpec {
        weight,
        mean: MeanSpec::Builtin {
            spectrum: spectrum.into(),
            scale: 1.0,
            offset,
        },
        a,
        b,
        direction: None,
        covariance: None,
    }
}

/// 30x30 Dirichlet scene, 30 bands: a unimodal vegetation endmember and a
/// four-component painted-metal endmember.
pub fn supervised_preset(seed: u64) -> SceneSpec {
    SceneSpec {
        rows: 30,
        cols: 30,
        bands: 30,
        seed,
        noise_sigma: 0.002,
        wavelengths: None,
        abundance: AbundanceSpec::Dirichlet { concentration: 1.0 },
        endmembers: vec![
            EndmemberSpec {
                name: "vegetation".into(),
                components: vec![component(1.0, "vegetation", 0.0, 0.005, 0.02)],
            },
            EndmemberSpec {
                name: "painted-metal".into(),
                components: vec![
                    component(0.25, "red-paint", 0.0, 0.005, 0.02),
                    component(0.25, "blue-paint", 0.0, 0.005, 0.02),
                    component(0.25, "green-paint", 0.0, 0.005, 0.02),
                    component(0.25, "white-paint", 0.0, 0.005, 0.02),
                ],
            },
        ],
    }
}

/// 60x60 quadrant scene, 30 bands, four endmembers with 1, 2, 3 and 1
/// components. Components of one material are its spectrum shifted by a
/// constant.
pub fn quadrant_preset(seed: u64) -> SceneSpec {
    SceneSpec {
        rows: 60,
        cols: 60,
        bands: 30,
        seed,
        noise_sigma: 0.001,
        wavelengths: None,
        abundance: AbundanceSpec::Quadrant { smoothing: 2.0 },
        endmembers: vec![
            EndmemberSpec {
                name: "vegetation".into(),
                components: vec![component(1.0, "vegetation", 0.0, 0.005, 0.015)],
            },
            EndmemberSpec {
                name: "asphalt".into(),
                components: vec![
                    component(0.4, "asphalt", -0.03, 0.005, 0.015),
                    component(0.6, "asphalt", 0.03, 0.005, 0.015),
                ],
            },
            EndmemberSpec {
                name: "painted-metal".into(),
                components: vec![
                    component(0.3, "red-paint", -0.04, 0.005, 0.015),
                    component(0.4, "red-paint", 0.0, 0.005, 0.015),
                    component(0.3, "red-paint", 0.04, 0.005, 0.015),
                ],
            },
            EndmemberSpec {
                name: "white-paint".into(),
                components: vec![component(1.0, "white-paint", 0.0, 0.005, 0.015)],
            },
        ],
    }
}

/// Named presets: `supervised`, `quadrant`.
pub fn preset(name: &str, seed: u64) -> Result<SceneSpec> {
    match name {
        "supervised" => Ok(supervised_preset(seed)),
        "quadrant" => Ok(quadrant_preset(seed)),
        _ => Err(Error::InvalidArgument(format!("unknown preset {name:?}; known: supervised, quadrant"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn covariance_without_direction_term_is_isotropic() {
        let c = make_covariance(0.1, 0.0, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert!((c.matrix() - DMatrix::identity(3, 3) * 0.01).amax() < 1e-15);
    }

    #[test]
    fn covariance_without_isotropic_term_is_rank_one() {
        let c = make_covariance(0.0, 0.5, &DVector::from_vec(vec![0.0, 3.0, 4.0])).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(c.matrix().clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-15 && ev[1].abs() < 1e-15);
        assert!((ev[2] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn covariance_eigenvalues() {
        let mut rng = seeded(2);
        let u = DVector::from_fn(6, |_, _| rng.random::<f64>() - 0.5);
        let c = make_covariance(0.3, 0.7, &u).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(c.matrix().clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for v in &ev[..5] {
            assert!((v - 0.09).abs() < 1e-12);
        }
        assert!((ev[5] - 0.58).abs() < 1e-12);
    }

    #[test]
    fn noiseless_quadrant_interiors_equal_component_means() {
        let mut spec = quadrant_preset(3);
        spec.noise_sigma = 0.0;
        for e in &mut spec.endmembers {
            for c in &mut e.components {
                c.a = 0.0;
                c.b = 0.0;
            }
        }
        let bundle = gen_scene(&spec).unwrap();
        let interior = [(5, 5, 0), (5, 50, 1), (50, 5, 2), (50, 50, 3)];
        for (r, c, j) in interior {
            let n = r * 60 + c;
            assert_eq!(bundle.abundances[(n, j)], 1.0);
            let k = bundle.labels[n][j];
            let mean = &bundle.theta.endmembers()[j].components()[k].mean;
            assert_eq!(bundle.cube.pixel(n), *mean);
        }
    }

    #[test]
    fn abundance_rows_are_on_the_simplex() {
        for spec in [supervised_preset(1), quadrant_preset(1), blob_spec()] {
            let bundle = gen_scene(&spec).unwrap();
            for row in bundle.abundances.row_iter() {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    fn blob_spec() -> SceneSpec {
        let mut spec = quadrant_preset(5);
        spec.rows = 20;
        spec.cols = 25;
        spec.abundance = AbundanceSpec::BlobBackground {
            blobs: 12,
            width_mean: 3.0,
            width_sd: 1.0,
            amplitude: 2.0,
        };
        spec
    }

    #[test]
    fn blob_scene_has_background_and_blobs() {
        let bundle = gen_scene(&blob_spec()).unwrap();
        assert!(bundle.abundances.column(0).iter().any(|&v| v > 0.5));
        for j in 1..4 {
            assert!(bundle.abundances.column(j).max() > 0.3);
        }
    }

    #[test]
    fn same_seed_gives_identical_bundles() {
        let a = gen_scene(&supervised_preset(11)).unwrap();
        let b = gen_scene(&supervised_preset(11)).unwrap();
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.abundances, b.abundances);
        assert_eq!(a.spectra, b.spectra);
        let c = gen_scene(&supervised_preset(12)).unwrap();
        assert_ne!(a.cube, c.cube);
    }

    #[test]
    fn pixels_follow_the_mixing_model() {
        let bundle = gen_scene(&quadrant_preset(4)).unwrap();
        for n in (0..3600).step_by(37) {
            let clean = bundle.spectra[n].tr_mul(&bundle.abundances.row(n).transpose());
            let y = bundle.cube.pixel(n) - bundle.noise_draws.row(n).transpose();
            assert!((y - clean).amax() < 1e-12);
        }
    }

    #[test]
    fn noise_levels_are_bounded() {
        let bundle = gen_scene(&supervised_preset(2)).unwrap();
        for v in bundle.noise.variances() {
            assert!(v.sqrt() <= 0.002);
        }
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = blob_spec();
        let text = spec.to_toml();
        assert_eq!(SceneSpec::from_toml(&text).unwrap(), spec);
    }

    #[test]
    fn toml_with_literal_values() {
        let text = r#"
rows = 2
cols = 3
bands = 2
seed = 9
noise_sigma = 0.0

[abundance]
mode = "dirichlet"

[[endmembers]]
name = "x"
[[endmembers.components]]
weight = 1.0
mean = [0.1, 0.2]
a = 0.01

[[endmembers]]
[[endmembers.components]]
weight = 1.0
mean = { spectrum = "water" }
covariance = [1e-4, 0.0, 0.0, 1e-4]
"#;
        let spec = SceneSpec::from_toml(text).unwrap();
        assert_eq!(spec.abundance, AbundanceSpec::Dirichlet { concentration: 1.0 });
        let bundle = gen_scene(&spec).unwrap();
        assert_eq!(bundle.cube.n_pixels(), 6);
        assert_eq!(bundle.theta.bands(), 2);
    }

    #[test]
    fn quadrant_mode_needs_four_endmembers() {
        let mut spec = quadrant_preset(0);
        spec.endmembers.pop();
        assert!(spec.validate().is_err());
    }
}
