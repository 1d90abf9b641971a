//! Hyperspectral linear unmixing with Gaussian-mixture endmember variability.
//!
//! Every endmember is modelled as a Gaussian mixture, so each pixel (a
//! linear mixture of endmembers plus Gaussian noise) is itself a Gaussian
//! mixture over combinations of endmember components. The crate provides the
//! density machinery, a generalized-EM abundance / model estimator with a
//! spatial prior, component-count selection by cross-validation, per-pixel
//! endmember recovery, a synthetic scene generator with error metrics, and
//! the file formats used by the `gmmu` command-line tool.

pub mod combination;
pub mod cube;
pub mod endmembers;
pub mod error;
pub mod gem;
pub mod gmm;
pub mod io;
pub mod graph;
pub mod kmeans;
pub mod linalg;
pub mod pca;
pub mod rng;
pub mod synth;

pub use combination::{
    combined_moments, enumerate_combinations, marginalization_density_oracle, pixel_log_density,
    recover_component_weights, CombinationTable, PixelMoments, QuadratureGrid,
};
pub use cube::SpectralCube;
pub use endmembers::{
    endmember_e_step, endmember_gradient, endmember_m_step, endmember_objective, estimate_pixel_endmembers, EndmemberEmOptions,
    PixelEndmemberTensor,
};
pub use error::{Error, Result};
pub use gem::{
    extract_pure_pixels, fit_library, init_abundances_supervised, run_gem, run_supervised, run_unsupervised,
    select_num_components, GemConfig, LibraryFit, SupervisedFit, TraceRow, UnsupervisedFit,
};
pub use gmm::{gmm_fit_em, gmm_l2_distance, EmOptions, EndmemberGmm, EndmemberGmmSet, GaussianComponent, NoiseModel};
pub use graph::{build_laplacian, prior_energy, prior_gradient, Laplacian, PixelGraph};
pub use linalg::{log_gaussian, project_psd, project_simplex, CovarianceMatrix, EPS_PSD};
pub use pca::{pca_fit, PcaBasis};
