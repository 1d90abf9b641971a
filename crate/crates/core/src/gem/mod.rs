//! Generalized-EM estimation of abundances (and optionally component
//! weights and means) under the Gaussian-mixture pixel model, plus the
//! supervised and unsupervised pipelines built on it.

mod cvic;
mod objective;
mod pgd;
mod purity;
mod supervised;
mod unsupervised;

pub use cvic::{select_num_components, CvicResult};
pub use objective::{
    e_step, evaluate, m_step_gradients, m_step_pi, negative_log_posterior, objective_with_table, surrogate_energy,
    Responsibilities, Surrogate, SurrogateGradients,
};
pub use pgd::{pgd_update_abundances, pgd_update_sigma, update_means, AbundanceUpdate, ParameterUpdate, RowSteps, StepControl};
pub use purity::{extract_pure_pixels, PurePixels};
pub use supervised::{init_abundances_supervised, run_supervised, SupervisedFit};
pub use unsupervised::{fit_library, run_unsupervised, LibraryFit, UnsupervisedFit};

use nalgebra::{DMatrix, DVector};

use crate::combination::CombinationTable;
use crate::error::Result;
use crate::gmm::EmOptions;
use crate::graph::PixelGraph;

#[derive(Debug, Clone)]
pub struct GemConfig {
    /// Smoothness weight of the abundance prior.
    pub beta1: f64,
    /// Sparsity weight of the abundance prior (the "large" value used while
    /// segmenting in the unsupervised pipeline).
    pub beta2: f64,
    /// Laplacian bandwidth; `None` picks the median neighbour distance.
    pub eta: Option<f64>,
    /// Dimension of the PCA subspace the optimization runs in.
    pub dim: usize,
    /// Relative objective change that ends the outer iteration.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner_pgd: usize,
    /// Erosion radius for pure-pixel extraction.
    pub r_se: usize,
    /// Factor applied to `beta2` after segmentation.
    pub zeta: f64,
    pub purity_threshold: f64,
    pub k_max: usize,
    pub folds: usize,
    pub seed: u64,
    /// Ridge used by the least-squares abundance initializations.
    pub ridge: f64,
    /// Standard deviation of the initial isotropic endmember covariances.
    pub init_sigma: f64,
    /// Noise standard deviation used when none is supplied.
    pub noise_sigma: f64,
    pub combination_cap: usize,
    pub em: EmOptions,
}

impl Default for GemConfig {
    fn default() -> Self {
        GemConfig {
            beta1: 5.0,
            beta2: 5.0,
            eta: None,
            dim: 10,
            tol: 1e-5,
            max_outer: 200,
            max_inner_pgd: 50,
            r_se: 5,
            zeta: 0.05,
            purity_threshold: 0.99,
            k_max: 4,
            folds: 5,
            seed: 0,
            ridge: 1e-6,
            init_sigma: 0.1,
            noise_sigma: 0.001,
            combination_cap: crate::combination::DEFAULT_COMBINATION_CAP,
            em: EmOptions::default(),
        }
    }
}

impl GemConfig {
    /// Defaults for the unsupervised pipeline: a sparsity weight large enough
    /// to overcome the pull of the broad initial covariances towards mixed
    /// abundances during segmentation.
    pub fn unsupervised() -> Self {
        GemConfig {
            beta2: 50.0,
            ..GemConfig::default()
        }
    }

    fn step_control(&self) -> StepControl {
        StepControl {
            max_inner: self.max_inner_pgd,
            ..StepControl::default()
        }
    }
}

/// One line of the optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub max_delta_alpha: f64,
}

/// Which parameter blocks the M-step updates besides the abundances.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdatePlan {
    pub weights: bool,
    pub means: bool,
}

#[derive(Debug, Clone)]
pub struct GemRun {
    pub abundances: DMatrix<f64>,
    pub table: CombinationTable,
    /// Objective at the start, then after every outer iteration.
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// Alternates E-steps and decreasing M-steps until the relative change of
/// the negative log posterior drops below `cfg.tol` or `cfg.max_outer`
/// iterations have run.
#[allow(clippy::too_many_arguments)]
pub fn run_gem(
    pixels: &[DVector<f64>],
    rows: usize,
    cols: usize,
    a0: DMatrix<f64>,
    table0: CombinationTable,
    noise: &DMatrix<f64>,
    graph: &PixelGraph,
    plan: UpdatePlan,
    cfg: &GemConfig,
) -> Result<GemRun> {
    let ctl = cfg.step_control();
    let mut a = a0;
    let mut table = table0;
    let (mut obj, mut gamma) = evaluate(pixels, &a, &table, noise, graph)?;
    let mut trace = vec![TraceRow {
        iteration: 0,
        objective: obj,
        max_delta_alpha: 0.0,
    }];
    let mut steps = RowSteps::default();
    let mut converged = false;
    for it in 1..=cfg.max_outer {
        if plan.weights {
            table.set_weights(m_step_pi(&gamma))?;
        }
        let sur = Surrogate {
            pixels,
            noise,
            gamma: &gamma,
            graph,
        };
        if plan.means {
            table = update_means(&sur, &a, &table, &ctl)?.table;
        }
        let up = pgd_update_abundances(&sur, &a, &table, rows, cols, &mut steps, &ctl)?;
        let delta = (&up.abundances - &a).amax();
        a = up.abundances;
        let (new_obj, new_gamma) = evaluate(pixels, &a, &table, noise, graph)?;
        log::info!("iteration {it}: objective {new_obj:.9e}, max |delta alpha| {delta:.3e}");
        trace.push(TraceRow {
            iteration: it,
            objective: new_obj,
            max_delta_alpha: delta,
        });
        let rel = (obj - new_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        obj = new_obj;
        gamma = new_gamma;
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("no convergence after {} outer iterations; returning the last iterate", cfg.max_outer);
    }
    Ok(GemRun {
        abundances: a,
        table,
        trace,
        converged,
    })
}
