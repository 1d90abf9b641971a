use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A hyperspectral image: `N = rows * cols` pixels by `B` bands, one pixel per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    data: DMatrix<f64>,
    rows: usize,
    cols: usize,
    wavelengths: Option<Vec<f64>>,
}

impl SpectralCube {
    pub fn new(data: DMatrix<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("cube must have positive rows and cols".into()));
        }
        if rows * cols != data.nrows() {
            return Err(Error::dim("cube pixel count", rows * cols, data.nrows()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cube contains non-finite values".into()));
        }
        Ok(SpectralCube {
            data,
            rows,
            cols,
            wavelengths: None,
        })
    }

    /// Builds a cube from pixel-major (band-interleaved-by-pixel) samples.
    pub fn from_pixel_major(values: &[f64], rows: usize, cols: usize, bands: usize) -> Result<Self> {
        if values.len() != rows * cols * bands {
            return Err(Error::dim("cube payload", rows * cols * bands, values.len()));
        }
        Self::new(DMatrix::from_row_slice(rows * cols, bands, values), rows, cols)
    }

    /// A `n x 1` cube holding a list of spectra (for libraries of samples).
    pub fn from_samples(samples: DMatrix<f64>) -> Result<Self> {
        let n = samples.nrows();
        Self::new(samples, n, 1)
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.n_bands() {
            return Err(Error::dim("wavelengths", self.n_bands(), wavelengths.len()));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_pixels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.data.ncols()
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn pixel(&self, n: usize) -> DVector<f64> {
        self.data.row(n).transpose()
    }

    pub fn pixels(&self) -> Vec<DVector<f64>> {
        (0..self.n_pixels()).map(|n| self.pixel(n)).collect()
    }

    /// Pixel-major sample order, as stored in cube containers.
    pub fn to_pixel_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.row_iter() {
            out.extend(row.iter());
        }
        out
    }

    /// Rows of the cube selected by pixel index, as a sample matrix.
    pub fn select(&self, indices: &[usize]) -> DMatrix<f64> {
        self.data.select_rows(indices)
    }
}
