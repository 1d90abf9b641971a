//! M-step updates that decrease (rather than minimize) the surrogate:
//! projected gradient steps with Armijo backtracking.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use super::objective::{combo_stats, row, row_data_value, row_data_value_grad, surrogate_energy, Surrogate};
use crate::combination::CombinationTable;
use crate::error::Result;
use crate::linalg::{project_psd, project_simplex, EPS_PSD};

/// Line-search constants shared by every update.
#[derive(Debug, Clone)]
pub struct StepControl {
    pub armijo: f64,
    pub max_halvings: usize,
    /// Projected-gradient iterations per abundance row per M-step.
    pub max_inner: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            armijo: 1e-4,
            max_halvings: 30,
            max_inner: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AbundanceUpdate {
    pub abundances: DMatrix<f64>,
    /// Decrease of `E_M` achieved by the update (non-negative).
    pub decrease: f64,
    /// No row could be moved.
    pub stalled: bool,
}

/// Per-row step sizes carried between M-steps.
#[derive(Debug, Clone, Default)]
pub struct RowSteps {
    steps: Vec<f64>,
}

/// One projected-gradient pass over the abundance rows.
///
/// The 4-connected lattice is bipartite, so rows are updated in two
/// checkerboard half-sweeps: rows of one colour share no prior terms and are
/// moved independently (in parallel), each by backtracking PGD on the exact
/// part of `E_M` that depends on that row. Every accepted row move strictly
/// decreases `E_M`; rejected rows stay unchanged.
pub fn pgd_update_abundances(
    sur: &Surrogate,
    a: &DMatrix<f64>,
    table: &CombinationTable,
    rows: usize,
    cols: usize,
    steps: &mut RowSteps,
    ctl: &StepControl,
) -> Result<AbundanceUpdate> {
    let n = a.nrows();
    if steps.steps.len() != n {
        steps.steps = vec![0.0; n];
    }
    let mut current = a.clone();
    let mut decrease = 0.0;
    let mut moved = false;
    for colour in 0..2 {
        let members: Vec<usize> = (0..n)
            .filter(|&i| if rows * cols == n { (i / cols + i % cols) % 2 == colour } else { i % 2 == colour })
            .collect();
        let snapshot = &current;
        let results: Vec<(usize, Option<(Vec<f64>, f64)>, f64)> = members
            .par_iter()
            .map(|&i| {
                let (res, t) = update_row(sur, snapshot, table, i, steps.steps[i], ctl)?;
                Ok((i, res, t))
            })
            .collect::<Result<_>>()?;
        for (i, res, t) in results {
            steps.steps[i] = t;
            if let Some((alpha, d)) = res {
                for (j, v) in alpha.iter().enumerate() {
                    current[(i, j)] = *v;
                }
                decrease += d;
                moved = true;
            }
        }
    }
    Ok(AbundanceUpdate {
        abundances: current,
        decrease,
        stalled: !moved,
    })
}

fn local_value(sur: &Surrogate, a: &DMatrix<f64>, table: &CombinationTable, i: usize, alpha: &[f64], gamma: &[f64]) -> Result<f64> {
    Ok(row_data_value(&sur.pixels[i], alpha, gamma, table, sur.noise)? + sur.graph.row_energy(a, i, alpha))
}

/// Projected-gradient iterations on row `i`; returns the new row and the
/// decrease achieved (or `None` if no step was accepted) and the step size
/// to start from next time.
fn update_row(
    sur: &Surrogate,
    a: &DMatrix<f64>,
    table: &CombinationTable,
    i: usize,
    step: f64,
    ctl: &StepControl,
) -> Result<(Option<(Vec<f64>, f64)>, f64)> {
    let gamma = row(sur.gamma.matrix(), i);
    let start = row(a, i);
    let mut alpha = start.clone();
    let (v0, mut g) = row_data_value_grad(&sur.pixels[i], &alpha, &gamma, table, sur.noise)?;
    let f_start = v0 + sur.graph.row_energy(a, i, &alpha);
    g += sur.graph.row_gradient(a, i, &alpha);
    let mut f = f_start;
    let mut t = if step > 0.0 { step } else { initial_step(sur, table, i, &alpha, &gamma)? };
    let mut accepted_any = false;

    for _ in 0..ctl.max_inner.max(1) {
        let mut accepted = None;
        let mut tt = t;
        for h in 0..=ctl.max_halvings {
            let trial: Vec<f64> = alpha.iter().zip(g.iter()).map(|(x, gx)| x - tt * gx).collect();
            let cand = project_simplex(&trial);
            let dir: f64 = cand.iter().zip(&alpha).zip(g.iter()).map(|((c, x), gx)| (c - x) * gx).sum();
            if dir >= 0.0 {
                // Projected point does not descend: stationary to working precision.
                break;
            }
            let fc = local_value(sur, a, table, i, &cand, &gamma)?;
            if fc <= f + ctl.armijo * dir && fc < f {
                accepted = Some((cand, fc));
                t = if h == 0 { tt * 2.0 } else { tt };
                break;
            }
            tt *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            break;
        };
        let change = cand.iter().zip(&alpha).map(|(c, x)| (c - x).abs()).fold(0.0, f64::max);
        let gain = f - fc;
        alpha = cand;
        f = fc;
        accepted_any = true;
        if change < 1e-12 || gain <= 1e-14 * f.abs().max(1.0) {
            break;
        }
        let (v, gd) = row_data_value_grad(&sur.pixels[i], &alpha, &gamma, table, sur.noise)?;
        debug_assert!((v + sur.graph.row_energy(a, i, &alpha) - f).abs() <= 1e-9 * f.abs().max(1.0));
        g = gd + sur.graph.row_gradient(a, i, &alpha);
    }
    if accepted_any && f < f_start {
        Ok((Some((alpha, f_start - f)), t))
    } else {
        Ok((None, t))
    }
}

/// `1 / ||H||` for the Gauss-Newton curvature `sum_k gamma_k R_k Sigma^{-1} R_k^T`
/// of the row objective plus the prior's diagonal.
fn initial_step(
    sur: &Surrogate,
    table: &CombinationTable,
    i: usize,
    alpha: &[f64],
    gamma: &[f64],
) -> Result<f64> {
    let m = alpha.len();
    let mut h = DMatrix::zeros(m, m);
    for s in combo_stats(&sur.pixels[i], alpha, gamma, table, sur.noise)? {
        let r = table.mean_stack(s.k);
        h += (&r * &s.inv * r.transpose()) * s.gamma;
    }
    let curvature = h.norm() + sur.graph.beta1 * sur.graph.laplacian.degree(i) + sur.graph.beta2;
    Ok(if curvature > 0.0 { 1.0 / curvature } else { 1.0 })
}

#[derive(Debug, Clone)]
pub struct ParameterUpdate {
    pub table: CombinationTable,
    pub decrease: f64,
    pub stalled: bool,
}

/// Mean update. With covariances fixed `E_M` is a convex quadratic in all
/// component means jointly, so the gradient is preconditioned by its exact
/// Hessian `sum_n sum_k gamma_nk (alpha_n alpha_n^T restricted to k) (x) Sigma_nk^{-1}`
/// and the step is backtracked as usual.
pub fn update_means(sur: &Surrogate, a: &DMatrix<f64>, table: &CombinationTable, ctl: &StepControl) -> Result<ParameterUpdate> {
    let m = table.n_endmembers();
    let b = table.bands();
    let counts = table.component_counts().to_vec();
    let mut offsets = Vec::with_capacity(m);
    let mut total = 0;
    for &k in &counts {
        offsets.push(total);
        total += k;
    }
    let p = total * b;
    let block = |j: usize, l: usize| (offsets[j] + l) * b;

    // Fixed-size pixel chunks keep the reduction order independent of scheduling.
    let chunks: Vec<Vec<usize>> = (0..sur.pixels.len())
        .collect::<Vec<_>>()
        .chunks(64)
        .map(|c| c.to_vec())
        .collect();
    let partials: Vec<(DMatrix<f64>, DVector<f64>)> = chunks
        .into_par_iter()
        .map(|chunk| {
            let mut h = DMatrix::zeros(p, p);
            let mut g = DVector::zeros(p);
            for n in chunk {
                let alpha = row(a, n);
                let gamma = row(sur.gamma.matrix(), n);
                for s in combo_stats(&sur.pixels[n], &alpha, &gamma, table, sur.noise)? {
                    let idx = &table.indices()[s.k];
                    for j in 0..m {
                        let bj = block(j, idx[j]);
                        g.rows_mut(bj, b).axpy(-alpha[j] * s.gamma, &s.v, 1.0);
                        for jj in 0..m {
                            let bjj = block(jj, idx[jj]);
                            let mut view = h.view_mut((bj, bjj), (b, b));
                            view += &s.inv * (alpha[j] * alpha[jj] * s.gamma);
                        }
                    }
                }
            }
            Ok((h, g))
        })
        .collect::<Result<_>>()?;
    let mut h = DMatrix::zeros(p, p);
    let mut g = DVector::zeros(p);
    for (hn, gn) in partials {
        h += hn;
        g += gn;
    }
    let ridge = 1e-12 * (h.trace() / p as f64).max(f64::MIN_POSITIVE);
    for i in 0..p {
        h[(i, i)] += ridge;
    }
    let dir = match Cholesky::new(h.clone()) {
        Some(c) => -c.solve(&g),
        None => -DVector::from_fn(p, |i, _| g[i] / h[(i, i)].max(ridge)),
    };
    let slope = g.dot(&dir);
    let base = surrogate_energy(sur, a, table)?;
    if !(slope < 0.0) {
        return Ok(ParameterUpdate {
            table: table.clone(),
            decrease: 0.0,
            stalled: true,
        });
    }
    let mut tau = 1.0;
    for _ in 0..=ctl.max_halvings {
        let mut cand = table.clone();
        for j in 0..m {
            for l in 0..counts[j] {
                let mu = table.component_mean(j, l) + dir.rows(block(j, l), b) * tau;
                cand.set_component_mean(j, l, mu);
            }
        }
        let e = surrogate_energy(sur, a, &cand)?;
        if e <= base + ctl.armijo * tau * slope && e < base {
            return Ok(ParameterUpdate {
                table: cand,
                decrease: base - e,
                stalled: false,
            });
        }
        tau *= 0.5;
    }
    Ok(ParameterUpdate {
        table: table.clone(),
        decrease: 0.0,
        stalled: true,
    })
}

/// Projected gradient step on every component covariance, projecting onto
/// `{Sigma : lambda_min >= EPS_PSD}`, with backtracking from `initial_step`.
pub fn pgd_update_sigma(
    sur: &Surrogate,
    a: &DMatrix<f64>,
    table: &CombinationTable,
    grads: &[Vec<DMatrix<f64>>],
    initial_step: f64,
    ctl: &StepControl,
) -> Result<ParameterUpdate> {
    let base = surrogate_energy(sur, a, table)?;
    let gnorm: f64 = grads.iter().flatten().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    if gnorm == 0.0 {
        return Ok(ParameterUpdate {
            table: table.clone(),
            decrease: 0.0,
            stalled: true,
        });
    }
    let mut t = initial_step;
    for _ in 0..=ctl.max_halvings {
        let mut cand = table.clone();
        let mut slope = 0.0;
        for (j, gj) in grads.iter().enumerate() {
            for (l, g) in gj.iter().enumerate() {
                let old = table.component_covariance(j, l);
                let new = project_psd(&(old - g * t), EPS_PSD).into_inner();
                slope += g.component_mul(&(&new - old)).sum();
                cand.set_component_covariance(j, l, new);
            }
        }
        if slope < 0.0 {
            let e = surrogate_energy(sur, a, &cand)?;
            if e <= base + ctl.armijo * slope && e < base {
                return Ok(ParameterUpdate {
                    table: cand,
                    decrease: base - e,
                    stalled: false,
                });
            }
        }
        t *= 0.5;
    }
    Ok(ParameterUpdate {
        table: table.clone(),
        decrease: 0.0,
        stalled: true,
    })
}
