//! Comparison of an unmixing result against ground truth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{gmm_l2_distance, EndmemberGmmSet};
use crate::synth::metrics::{abundance_rmse, best_permutation, endmember_error, permute_columns};

/// Inputs for [`evaluate`]. Columns of `abundances` are matched to the
/// truth by the best permutation when `match_columns` is set; spectra and
/// models are reordered the same way.
#[derive(Debug, Clone)]
pub struct EvalInputs<'a> {
    pub abundances: &'a DMatrix<f64>,
    pub true_abundances: &'a DMatrix<f64>,
    pub pure_threshold: f64,
    pub match_columns: bool,
    pub spectra: Option<&'a [DMatrix<f64>]>,
    pub true_spectra: Option<&'a [DMatrix<f64>]>,
    pub model: Option<&'a EndmemberGmmSet>,
    pub true_model: Option<&'a EndmemberGmmSet>,
}

impl<'a> EvalInputs<'a> {
    pub fn new(abundances: &'a DMatrix<f64>, true_abundances: &'a DMatrix<f64>) -> Self {
        EvalInputs {
            abundances,
            true_abundances,
            pure_threshold: 0.99,
            match_columns: false,
            spectra: None,
            true_spectra: None,
            model: None,
            true_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `permutation[j]` is the estimated column matched to true endmember `j`.
    pub permutation: Vec<usize>,
    pub abundance_rmse: Vec<f64>,
    pub abundance_rmse_mean: f64,
    /// RMSE restricted to each endmember's pure pixels in the truth.
    pub pure_rmse: Vec<f64>,
    pub pure_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endmember_error: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_distance: Option<Vec<f64>>,
}

pub fn evaluate(inputs: &EvalInputs<'_>) -> Result<EvalReport> {
    let (a, t) = (inputs.abundances, inputs.true_abundances);
    if a.shape() != t.shape() {
        return Err(Error::InvalidArgument(format!("abundance shapes differ: {:?} vs {:?}", a.shape(), t.shape())));
    }
    let m = t.ncols();
    let perm = if inputs.match_columns { best_permutation(a, t)? } else { (0..m).collect() };
    let a = permute_columns(a, &perm);

    let rmse = abundance_rmse(&a, t, None)?;
    let mean = rmse.iter().sum::<f64>() / m.max(1) as f64;
    let pure: Vec<Vec<usize>> = (0..m).map(|j| (0..t.nrows()).filter(|&n| t[(n, j)] > inputs.pure_threshold).collect()).collect();
    let pure_rmse = pure
        .iter()
        .enumerate()
        .map(|(j, set)| Ok(abundance_rmse(&a, t, Some(set))?[j]))
        .collect::<Result<Vec<_>>>()?;

    let endmember_error = match (inputs.spectra, inputs.true_spectra) {
        (Some(est), Some(truth)) => {
            let est: Vec<DMatrix<f64>> = est.iter().map(|s| DMatrix::from_fn(m, s.ncols(), |j, k| s[(perm[j], k)])).collect();
            Some(endmember_error(&est, truth, &pure)?)
        }
        _ => None,
    };
    let l2_distance = match (inputs.model, inputs.true_model) {
        (Some(est), Some(truth)) => {
            if est.n_endmembers() != m || truth.n_endmembers() != m {
                return Err(Error::dim("model endmembers", m, est.n_endmembers()));
            }
            Some(
                (0..m)
                    .map(|j| gmm_l2_distance(&est.endmembers()[perm[j]], &truth.endmembers()[j]))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        _ => None,
    };

    Ok(EvalReport {
        permutation: perm,
        abundance_rmse: rmse,
        abundance_rmse_mean: mean,
        pure_rmse,
        pure_counts: pure.iter().map(Vec::len).collect(),
        endmember_error,
        l2_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::tests::random_set;
    use crate::rng::seeded;

    fn one_hot_rows(n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |r, c| if r % m == c { 1.0 } else { 0.0 })
    }

    #[test]
    fn self_evaluation_is_zero() {
        let t = one_hot_rows(12, 3);
        let mut rng = seeded(4);
        let theta = random_set(&mut rng, &[1, 2, 1], 2);
        let spectra: Vec<DMatrix<f64>> = (0..12).map(|n| DMatrix::from_element(3, 2, n as f64)).collect();
        let mut inputs = EvalInputs::new(&t, &t);
        inputs.spectra = Some(&spectra);
        inputs.true_spectra = Some(&spectra);
        inputs.model = Some(&theta);
        inputs.true_model = Some(&theta);
        let r = evaluate(&inputs).unwrap();
        assert_eq!(r.abundance_rmse, vec![0.0; 3]);
        assert_eq!(r.abundance_rmse_mean, 0.0);
        assert_eq!(r.pure_rmse, vec![0.0; 3]);
        assert_eq!(r.pure_counts, vec![4; 3]);
        assert_eq!(r.endmember_error.unwrap(), vec![0.0; 3]);
        assert!(r.l2_distance.unwrap().iter().all(|&d| d.abs() < 1e-9));
    }

    #[test]
    fn column_matching_undoes_a_shuffle() {
        let t = one_hot_rows(9, 3);
        let shuffled = permute_columns(&t, &[2, 0, 1]);
        let mut inputs = EvalInputs::new(&shuffled, &t);
        assert!(evaluate(&inputs).unwrap().abundance_rmse_mean > 0.1);
        inputs.match_columns = true;
        let r = evaluate(&inputs).unwrap();
        assert_eq!(r.abundance_rmse_mean, 0.0);
        assert_eq!(permute_columns(&shuffled, &r.permutation), t);
    }

    #[test]
    fn report_serializes_to_json() {
        let t = one_hot_rows(4, 2);
        let r = evaluate(&EvalInputs::new(&t, &t)).unwrap();
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
