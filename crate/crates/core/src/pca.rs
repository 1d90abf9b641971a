//! Principal-component subspace used to shrink the band dimension before
//! optimization. Pixels map as `y -> E^T (y - c)`; Gaussian models map as
//! `mu -> E^T (mu - c)`, `Sigma -> E^T Sigma E`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::gmm::{EndmemberGmm, EndmemberGmmSet, GaussianComponent, NoiseModel};
use crate::linalg::{symmetrize, CovarianceMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    projection: DMatrix<f64>,
    center: DVector<f64>,
}

impl PcaBasis {
    pub fn new(projection: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        if projection.nrows() != center.len() {
            return Err(Error::dim("pca center", projection.nrows(), center.len()));
        }
        let gram = projection.transpose() * &projection;
        let dev = (gram - DMatrix::identity(projection.ncols(), projection.ncols())).amax();
        if dev > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "projection columns are not orthonormal (deviation {dev:.3e})"
            )));
        }
        Ok(PcaBasis { projection, center })
    }

    /// `E = I`, `c = 0`.
    pub fn identity(bands: usize) -> Self {
        PcaBasis {
            projection: DMatrix::identity(bands, bands),
            center: DVector::zeros(bands),
        }
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn bands(&self) -> usize {
        self.projection.nrows()
    }

    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn project_vector(&self, y: &DVector<f64>) -> DVector<f64> {
        self.projection.tr_mul(&(y - &self.center))
    }

    pub fn reconstruct(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.projection * z
    }

    pub fn project_cube(&self, cube: &SpectralCube) -> Result<SpectralCube> {
        self.check_bands("pca_project cube", cube.n_bands())?;
        let centered = DMatrix::from_fn(cube.n_pixels(), cube.n_bands(), |n, b| {
            cube.data()[(n, b)] - self.center[b]
        });
        SpectralCube::new(centered * &self.projection, cube.rows(), cube.cols())
    }

    pub fn project_covariance(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(self.projection.transpose() * s * &self.projection))
    }

    pub fn project_model(&self, theta: &EndmemberGmmSet) -> Result<EndmemberGmmSet> {
        self.check_bands("pca_project model", theta.bands())?;
        let endmembers = theta
            .endmembers()
            .iter()
            .map(|g| {
                let comps = g
                    .components()
                    .iter()
                    .map(|c| {
                        GaussianComponent::new(
                            c.weight,
                            self.project_vector(&c.mean),
                            CovarianceMatrix::new(self.project_covariance(c.covariance.matrix()))?,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                EndmemberGmm::new(comps)
            })
            .collect::<Result<Vec<_>>>()?;
        EndmemberGmmSet::new(endmembers)
    }

    /// `D -> E^T D E`; the result is generally no longer diagonal.
    pub fn project_noise(&self, noise: &NoiseModel) -> Result<NoiseModel> {
        self.check_bands("pca_project noise", noise.dim())?;
        NoiseModel::from_matrix(self.project_covariance(noise.matrix()))
    }

    fn check_bands(&self, context: &'static str, bands: usize) -> Result<()> {
        if bands != self.bands() {
            return Err(Error::dim(context, self.bands(), bands));
        }
        Ok(())
    }
}

/// Fits the top-`d` principal directions of the cube's pixels.
///
/// Each column's largest-magnitude entry is made positive so the basis is
/// reproducible.
pub fn pca_fit(cube: &SpectralCube, d: usize) -> Result<PcaBasis> {
    let n = cube.n_pixels();
    let b = cube.n_bands();
    if d == 0 || d > n.min(b) {
        return Err(Error::InvalidArgument(format!(
            "pca dimension {d} outside 1..={}",
            n.min(b)
        )));
    }
    let data = cube.data();
    let center = DVector::from_fn(b, |j, _| data.column(j).mean());
    let centered = DMatrix::from_fn(n, b, |i, j| data[(i, j)] - center[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = symmetrize(&(centered.tr_mul(&centered) / denom));

    let scale = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    if cov.trace() <= 1e-24 * scale.max(1e-300) {
        return Err(Error::DegenerateCovariance);
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut projection = DMatrix::zeros(b, d);
    for (col, &idx) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc })
            .0;
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        projection.set_column(col, &v);
    }
    Ok(PcaBasis { projection, center })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combination::pixel_log_density;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_input_is_rejected() {
        let cube = SpectralCube::from_samples(DMatrix::from_element(6, 3, 0.25)).unwrap();
        assert!(matches!(pca_fit(&cube, 1), Err(Error::DegenerateCovariance)));
        assert!(pca_fit(&cube, 0).is_err());
        assert!(pca_fit(&cube, 4).is_err());
    }

    #[test]
    fn line_data_recovers_direction() {
        let samples = DMatrix::from_fn(20, 2, |i, j| (i as f64 - 7.0) * if j == 0 { 1.0 } else { 2.0 });
        let basis = pca_fit(&SpectralCube::from_samples(samples).unwrap(), 1).unwrap();
        let e = basis.projection().column(0);
        let s5 = 5f64.sqrt();
        assert!((e[0] - 1.0 / s5).abs() < 1e-12);
        assert!((e[1] - 2.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples = DMatrix::from_fn(5, 10, |_, _| rng.random_range(0.0..1.0));
        let cube = SpectralCube::from_samples(samples).unwrap();
        let basis = pca_fit(&cube, 5).unwrap();
        let gram = basis.projection().tr_mul(basis.projection());
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
        for n in 0..5 {
            let y = cube.pixel(n);
            let back = basis.reconstruct(&basis.project_vector(&y));
            assert!((back - y).amax() < 1e-8);
        }
    }

    #[test]
    fn identity_basis_is_identity_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cube = SpectralCube::from_samples(DMatrix::from_fn(4, 3, |_, _| rng.random())).unwrap();
        let basis = PcaBasis::identity(3);
        assert_eq!(basis.project_cube(&cube).unwrap().data(), cube.data());
    }

    #[test]
    fn projected_single_gaussian_integrates_to_one() {
        let mu = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let a = DMatrix::from_row_slice(3, 3, &[0.2, 0.05, 0.0, 0.0, 0.3, 0.1, 0.02, 0.0, 0.25]);
        let sigma = CovarianceMatrix::new(symmetrize(&(&a * a.transpose()))).unwrap();
        let theta = EndmemberGmmSet::new(vec![EndmemberGmm::single(mu, sigma).unwrap()]).unwrap();
        let e = DVector::from_vec(vec![1.0, 2.0, -2.0]) / 3.0;
        let basis = PcaBasis::new(DMatrix::from_column_slice(3, 1, e.as_slice()), DVector::from_element(3, 0.1)).unwrap();
        let projected = basis.project_model(&theta).unwrap();
        let g = &projected.endmembers()[0];
        let (lo, hi, n) = (-10.0, 10.0, 20_001);
        let h = (hi - lo) / (n - 1) as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let x = DVector::from_element(1, lo + i as f64 * h);
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * g.log_density(&x).unwrap().exp()
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn projection_commutes_with_density_for_full_rank() {
        // With an orthogonal E (d = B) the density transforms by |det E| = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cube = SpectralCube::from_samples(DMatrix::from_fn(12, 3, |_, _| rng.random())).unwrap();
        let basis = pca_fit(&cube, 3).unwrap();
        let theta = crate::gmm::tests::random_set(&mut rng, &[2, 1], 3);
        let noise = NoiseModel::isotropic(3, 0.01).unwrap();
        let ptheta = basis.project_model(&theta).unwrap();
        let pnoise = basis.project_noise(&noise).unwrap();
        let alpha = [0.3, 0.7];
        for n in 0..4 {
            let y = cube.pixel(n);
            let full = pixel_log_density(&y, &alpha, &theta, &noise).unwrap();
            let proj = pixel_log_density(&basis.project_vector(&y), &alpha, &ptheta, &pnoise).unwrap();
            assert!((full - proj).abs() < 1e-9, "{full} vs {proj}");
        }
    }
}
