//! Seeded Lloyd k-means with k-means++ initialization.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Vec<DVector<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

/// Best-of-`restarts` k-means; restart `r` uses a seed derived from `(seed, r)`.
pub fn kmeans(points: &[DVector<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::InsufficientData(format!(
            "k-means needs at least k = {k} points, got {}",
            points.len()
        )));
    }
    let mut best: Option<KMeans> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = seeded(derive_seed(seed, r as u64));
        let centers = plus_plus_init(points, k, &mut rng);
        let run = lloyd(points, centers, opts.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// k-means++ seeding: each new center is drawn with probability proportional
/// to the squared distance from the nearest existing center.
pub(crate) fn plus_plus_init(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

pub(crate) fn nearest(p: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn lloyd(points: &[DVector<f64>], mut centers: Vec<DVector<f64>>, max_iter: usize) -> KMeans {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (l, d) = nearest(p, &centers);
            dists[i] = d;
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l] += p;
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            } else {
                // Empty cluster: move it to the point worst served by its center.
                let far = dists
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centers[c] = points[far].clone();
                dists[far] = 0.0;
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| (p - &centers[l]).norm_squared())
        .sum();
    KMeans {
        centers,
        labels,
        inertia,
    }
}
