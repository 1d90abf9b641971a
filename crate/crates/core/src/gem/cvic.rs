use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::Result;
use crate::gmm::{gmm_fit_em, EmOptions};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq)]
pub struct CvicResult {
    /// Selected number of components.
    pub k: usize,
    /// Summed held-out log-likelihood for `K = 1..=k_max` (`-inf` where a
    /// fit failed; empty on fallback).
    pub scores: Vec<f64>,
    pub warning: Option<String>,
}

/// Chooses the component count by `folds`-fold cross-validated
/// log-likelihood. Ties go to the smaller `K`; with fewer than
/// `folds * k_max` samples the answer is `K = 1` with a warning.
pub fn select_num_components(x: &DMatrix<f64>, k_max: usize, folds: usize, seed: u64, em: &EmOptions) -> Result<CvicResult> {
    let n = x.nrows();
    let folds = folds.max(2);
    if k_max <= 1 || n < folds * k_max {
        let warning = (k_max > 1).then(|| format!("{n} samples are too few for {folds}-fold selection up to K = {k_max}; using K = 1"));
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        return Ok(CvicResult {
            k: 1,
            scores: Vec::new(),
            warning,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos * folds / n;
        }
        f
    };

    let mut scores = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut total = 0.0;
        for v in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != v).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == v).collect();
            let fit = match gmm_fit_em(&x.select_rows(&train), k, derive_seed(seed, (k * folds + v) as u64), em) {
                Ok(f) => f,
                Err(e) => {
                    log::debug!("K = {k}, fold {v}: {e}");
                    total = f64::NEG_INFINITY;
                    break;
                }
            };
            let eval = fit.model.evaluator()?;
            for &i in &test {
                total += eval.log_density(&x.row(i).transpose());
            }
        }
        scores.push(total);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(CvicResult {
        k: best + 1,
        scores,
        warning: None,
    })
}
