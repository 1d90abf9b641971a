//! JSON document for a set of endmember mixtures, with an optional PCA
//! basis and noise diagonal. Floats are written in shortest round-trip form,
//! so finite values come back bit-identical.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{EndmemberGmm, EndmemberGmmSet, GaussianComponent, NoiseModel};
use crate::linalg::CovarianceMatrix;
use crate::pca::PcaBasis;

pub const MODEL_FORMAT: &str = "gmmu-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub endmembers: Vec<EndmemberDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaDoc>,
    /// Diagonal of the noise covariance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndmemberDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `B x B` per component.
    pub covariances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaDoc {
    pub dim: usize,
    pub center: Vec<f64>,
    /// Row-major `B x dim`.
    pub projection: Vec<f64>,
}

impl ModelDocument {
    pub fn from_model(theta: &EndmemberGmmSet, names: &[String]) -> Self {
        let b = theta.bands();
        ModelDocument {
            format: MODEL_FORMAT.into(),
            m: theta.n_endmembers(),
            b,
            endmembers: theta
                .endmembers()
                .iter()
                .enumerate()
                .map(|(j, g)| EndmemberDoc {
                    name: names.get(j).cloned().unwrap_or_default(),
                    weights: g.weights(),
                    means: g.components().iter().map(|c| c.mean.as_slice().to_vec()).collect(),
                    covariances: g
                        .components()
                        .iter()
                        .map(|c| {
                            let s = c.covariance.matrix();
                            (0..b).flat_map(|r| (0..b).map(move |col| s[(r, col)])).collect()
                        })
                        .collect(),
                })
                .collect(),
            pca: None,
            noise: None,
        }
    }

    pub fn with_pca(mut self, basis: &PcaBasis) -> Self {
        let p = basis.projection();
        self.pca = Some(PcaDoc {
            dim: basis.dim(),
            center: basis.center().as_slice().to_vec(),
            projection: (0..p.nrows()).flat_map(|r| (0..p.ncols()).map(move |c| p[(r, c)])).collect(),
        });
        self
    }

    pub fn with_noise(mut self, noise: &NoiseModel) -> Self {
        self.noise = Some(noise.variances());
        self
    }

    pub fn names(&self) -> Vec<String> {
        self.endmembers.iter().map(|e| e.name.clone()).collect()
    }

    pub fn to_model(&self) -> Result<EndmemberGmmSet> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unknown model format {:?}", self.format)));
        }
        if self.endmembers.len() != self.m {
            return Err(Error::Format(format!("M = {} but {} endmembers listed", self.m, self.endmembers.len())));
        }
        let b = self.b;
        let gmms = self
            .endmembers
            .iter()
            .enumerate()
            .map(|(j, e)| {
                if e.means.len() != e.weights.len() || e.covariances.len() != e.weights.len() {
                    return Err(Error::Format(format!("endmember {j}: weights, means and covariances differ in length")));
                }
                let comps = e
                    .weights
                    .iter()
                    .zip(&e.means)
                    .zip(&e.covariances)
                    .map(|((&w, mu), cov)| {
                        if mu.len() != b || cov.len() != b * b {
                            return Err(Error::Format(format!("endmember {j}: component sizes do not match B = {b}")));
                        }
                        GaussianComponent::new(
                            w,
                            DVector::from_column_slice(mu),
                            CovarianceMatrix::new(DMatrix::from_row_slice(b, b, cov))?,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                EndmemberGmm::new(comps)
            })
            .collect::<Result<Vec<_>>>()?;
        EndmemberGmmSet::new(gmms)
    }

    pub fn pca_basis(&self) -> Result<Option<PcaBasis>> {
        self.pca
            .as_ref()
            .map(|p| {
                if p.center.len() != self.b || p.projection.len() != self.b * p.dim {
                    return Err(Error::Format("PCA basis sizes do not match B".into()));
                }
                PcaBasis::new(DMatrix::from_row_slice(self.b, p.dim, &p.projection), DVector::from_column_slice(&p.center))
            })
            .transpose()
    }

    pub fn noise_model(&self) -> Result<Option<NoiseModel>> {
        self.noise
            .as_ref()
            .map(|d| {
                if d.len() != self.b {
                    return Err(Error::Format(format!("noise has {} entries, B = {}", d.len(), self.b)));
                }
                NoiseModel::diagonal(d)
            })
            .transpose()
    }

    pub fn to_json(&self) -> Result<String> {
        let all_finite = self
            .endmembers
            .iter()
            .flat_map(|e| e.weights.iter().chain(e.means.iter().flatten()).chain(e.covariances.iter().flatten()))
            .chain(self.noise.iter().flatten())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidArgument("model contains non-finite values".into()));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad model document: {e}")))
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
