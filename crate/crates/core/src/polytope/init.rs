//! Initial patient memberships.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Membership;
use crate::dataset::{indices_of, Label};
use crate::error::{MagicError, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMembership {
    /// Shuffled round-robin assignment.
    Random,
    /// k-means++ seeding followed by Lloyd iterations on patient features.
    KMeans,
    /// k-means on patient deviations from the controls, whitened by the
    /// shrunk control covariance.
    WhitenedKMeans,
}

const KMEANS_MAX_ITER: usize = 100;

/// Initial memberships of the patients in `features` (all subjects, rows
/// aligned with `labels`). Every cluster is non-empty; deterministic in
/// `seed`.
pub fn init_membership(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    c: usize,
    strategy: InitMembership,
    seed: u64,
) -> Result<Membership> {
    if features.nrows() != labels.len() {
        return Err(MagicError::DimensionMismatch {
            expected: labels.len(),
            found: features.nrows(),
        });
    }
    let patient_features = features.select(Axis(0), &indices_of(labels, Label::Patient));
    let p = patient_features.nrows();
    if c == 0 {
        return Err(MagicError::Config("number of clusters must be at least 1".into()));
    }
    if c > p {
        return Err(MagicError::InvalidInput(format!(
            "cannot form {c} clusters from {p} patients"
        )));
    }
    if c == 1 {
        return Ok(Membership::new(vec![0; p], 1));
    }
    let assignments = match strategy {
        InitMembership::Random => {
            let mut order: Vec<usize> = (0..p).collect();
            order.shuffle(&mut rng_from_seed(seed));
            let mut a = vec![0; p];
            for (rank, &i) in order.iter().enumerate() {
                a[i] = rank % c;
            }
            a
        }
        InitMembership::KMeans => kmeans(patient_features.view(), c, seed),
        InitMembership::WhitenedKMeans => {
            let controls = features.select(Axis(0), &indices_of(labels, Label::Control));
            kmeans(whiten(controls.view(), patient_features.view())?.view(), c, seed)
        }
    };
    Ok(Membership::new(assignments, c))
}

/// `(x − μ) Σ^{-1/2}` for each patient row, with `μ` the control mean and
/// `Σ` the Ledoit–Wolf shrinkage estimate of the control covariance.
fn whiten(controls: ArrayView2<'_, f64>, patients: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, k) = controls.dim();
    if n < 2 {
        return Err(MagicError::InvalidInput("whitening needs at least two controls".into()));
    }
    let mean = controls.mean_axis(Axis(0)).expect("controls present");
    let centered = &controls - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let mu = cov.diag().sum() / k as f64;
    let cov_sq: f64 = cov.iter().map(|v| v * v).sum();
    let delta = cov_sq - 2.0 * mu * cov.diag().sum() + mu * mu * k as f64;
    let beta: f64 = centered
        .rows()
        .into_iter()
        .map(|x| {
            let norm2 = x.dot(&x);
            norm2 * norm2 - 2.0 * x.dot(&cov.dot(&x)) + cov_sq
        })
        .sum::<f64>()
        / (n * n) as f64;
    let shrink = if delta > 0.0 { beta.min(delta) / delta } else { 1.0 };
    let target = if mu > 0.0 { mu } else { 1.0 };
    let shrunk = DMatrix::from_fn(k, k, |i, j| {
        (1.0 - shrink) * cov[[i, j]] + if i == j { shrink * target } else { 0.0 }
    });
    let eig = SymmetricEigen::new(shrunk);
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt()))
        * eig.eigenvectors.transpose();
    let dev = &patients - &mean;
    Ok(Array2::from_shape_fn(dev.dim(), |(i, j)| {
        (0..k).map(|l| dev[[i, l]] * inv_sqrt[(l, j)]).sum()
    }))
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans(x: ArrayView2<'_, f64>, c: usize, seed: u64) -> Vec<usize> {
    let (p, k) = x.dim();
    let mut rng = rng_from_seed(seed);
    let mut centers = Array2::<f64>::zeros((c, k));
    let first = rng.random_range(0..p);
    centers.row_mut(0).assign(&x.row(first));
    let mut nearest: Vec<f64> = (0..p).map(|i| sq_dist(x.row(i), centers.row(0))).collect();
    for j in 1..c {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = p - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..p)
        };
        centers.row_mut(j).assign(&x.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centers.row(j)));
        }
    }

    let mut assign = vec![usize::MAX; p];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..p {
            let best = (0..c)
                .map(|j| (j, sq_dist(x.row(i), centers.row(j))))
                .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        fill_empty_clusters(x, &centers, &mut assign, c);
        if !changed {
            break;
        }
        for j in 0..c {
            let members: Vec<usize> = (0..p).filter(|&i| assign[i] == j).collect();
            centers
                .row_mut(j)
                .assign(&x.select(Axis(0), &members).mean_axis(Axis(0)).expect("non-empty cluster"));
        }
    }
    assign
}

/// Moves the point farthest from its center into each empty cluster.
fn fill_empty_clusters(x: ArrayView2<'_, f64>, centers: &Array2<f64>, assign: &mut [usize], c: usize) {
    loop {
        let mut sizes = vec![0usize; c];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..assign.len())
            .filter(|&i| sizes[assign[i]] > 1)
            .map(|i| (i, sq_dist(x.row(i), centers.row(assign[i]))))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc })
            .0;
        assign[donor] = empty;
    }
}
