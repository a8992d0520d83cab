//! Clustering stability over `(c, K)` and choice of the number of clusters.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{indices_of, stratified_holdout_split, Dataset, Label};
use crate::error::{MagicError, Result};
use crate::opnmf::{fit_opnmf, MultiScaleBasis, OpnmfConfig};
use crate::polytope::{fit_polytope_with_restarts, PolytopeConfig};
use crate::rng::{derive_seed, TAG_RESTART, TAG_SPLIT};

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

fn same_partition(u: &[usize], v: &[usize]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    u.iter().zip(v).all(|(a, b)| *fwd.entry(a).or_insert(b) == b && *back.entry(b).or_insert(a) == a)
}

/// Hubert–Arabie adjusted Rand index from the contingency table.
///
/// When the expected and maximal index coincide (e.g. both partitions are a
/// single cluster) the result is 1 for identical partitions and 0 otherwise.
pub fn adjusted_rand_index(u: &[usize], v: &[usize]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(MagicError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    if u.is_empty() {
        return Err(MagicError::InvalidInput("ARI of empty partitions".into()));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in u.iter().zip(v) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| choose2(n)).sum();
    // Numerator and denominator are scaled by the pair count so that both
    // stay integral (and exact) for any realistic n.
    let pairs = choose2(u.len() as u64);
    let num = index * pairs - sum_rows * sum_cols;
    let den = 0.5 * (sum_rows + sum_cols) * pairs - sum_rows * sum_cols;
    if den == 0.0 {
        return Ok(if same_partition(u, v) { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub c_values: Vec<usize>,
    pub k_values: Vec<usize>,
    /// `|c| × |K|`.
    pub mean_ari: Vec<Vec<f64>>,
    pub std_ari: Vec<Vec<f64>>,
    pub repetitions: usize,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    pub c_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub repetitions: usize,
    pub test_fraction: f64,
    pub polytope: PolytopeConfig,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            c_values: (2..=8).collect(),
            k_values: (25..=60).step_by(5).collect(),
            repetitions: 100,
            test_fraction: 0.2,
            polytope: PolytopeConfig::default(),
            seed: 0,
        }
    }
}

/// Where per-repetition features come from.
#[derive(Debug, Clone, Copy)]
pub enum BasisSource<'a> {
    /// Loadings of a basis fitted once on all subjects.
    Fixed(&'a MultiScaleBasis),
    /// Refit OPNMF on each repetition's training subjects.
    Refit(&'a OpnmfConfig),
}

/// Repeated stratified holdout; each `(c, K)` cell holds the mean and
/// (population) standard deviation of ARIs between every pair of
/// repetitions, computed over patients present in both training sets.
pub fn stability_analysis(ds: &Dataset, source: BasisSource<'_>, cfg: &StabilityConfig) -> Result<StabilityReport> {
    if cfg.repetitions < 2 {
        return Err(MagicError::Config("stability analysis needs at least 2 repetitions".into()));
    }
    if cfg.c_values.is_empty() || cfg.k_values.is_empty() {
        return Err(MagicError::Config("empty c or K range".into()));
    }
    if let BasisSource::Fixed(basis) = source {
        if basis.n_subjects() != ds.n_subjects() {
            return Err(MagicError::DimensionMismatch {
                expected: ds.n_subjects(),
                found: basis.n_subjects(),
            });
        }
        for &k in &cfg.k_values {
            basis.get(k)?;
        }
    }
    let splits = (0..cfg.repetitions)
        .map(|r| stratified_holdout_split(&ds.labels, cfg.test_fraction, derive_seed(cfg.seed, TAG_SPLIT, r as u64)))
        .collect::<Result<Vec<_>>>()?;

    // Per repetition and scale: subject-major training features.
    let features: Vec<Vec<Array2<f64>>> = splits
        .par_iter()
        .map(|split| {
            cfg.k_values
                .iter()
                .map(|&k| match source {
                    BasisSource::Fixed(basis) => Ok(basis.get(k)?.loadings_for(&split.train).t().to_owned()),
                    BasisSource::Refit(opnmf) => {
                        let x = ds.features.select(Axis(0), &split.train);
                        Ok(fit_opnmf(x.t(), k, opnmf)?.loadings.t().to_owned())
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let n_c = cfg.c_values.len();
    let n_k = cfg.k_values.len();
    let cells: Vec<(usize, usize, usize)> = (0..cfg.repetitions)
        .flat_map(|r| (0..n_c).flat_map(move |ci| (0..n_k).map(move |ki| (r, ci, ki))))
        .collect();
    // Subject index -> cluster, for each (rep, c, K).
    let assignments: Vec<Vec<Option<usize>>> = cells
        .par_iter()
        .map(|&(r, ci, ki)| {
            let train = &splits[r].train;
            let labels: Vec<Label> = train.iter().map(|&i| ds.labels[i]).collect();
            let c = cfg.c_values[ci];
            let seed = derive_seed(cfg.seed, TAG_RESTART, r as u64);
            let model = fit_polytope_with_restarts(features[r][ki].view(), &labels, c, &cfg.polytope, seed)?;
            let mut by_subject = vec![None; ds.n_subjects()];
            for (p, &row) in indices_of(&labels, Label::Patient).iter().enumerate() {
                by_subject[train[row]] = Some(model.membership.assignments[p]);
            }
            Ok(by_subject)
        })
        .collect::<Result<_>>()?;
    let at = |r: usize, ci: usize, ki: usize| &assignments[(r * n_c + ci) * n_k + ki];

    let mut mean_ari = vec![vec![0.0; n_k]; n_c];
    let mut std_ari = vec![vec![0.0; n_k]; n_c];
    for ci in 0..n_c {
        for ki in 0..n_k {
            let mut aris = Vec::new();
            for r1 in 0..cfg.repetitions {
                for r2 in (r1 + 1)..cfg.repetitions {
                    let (a, b) = (at(r1, ci, ki), at(r2, ci, ki));
                    let (u, v): (Vec<usize>, Vec<usize>) =
                        a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip();
                    if u.len() < 2 {
                        return Err(MagicError::InvalidInput(format!(
                            "repetitions {r1} and {r2} share {} training patients; lower test_fraction",
                            u.len()
                        )));
                    }
                    aris.push(adjusted_rand_index(&u, &v)?);
                }
            }
            let n = aris.len() as f64;
            let mean = aris.iter().sum::<f64>() / n;
            let var = aris.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            mean_ari[ci][ki] = mean;
            std_ari[ci][ki] = var.sqrt();
        }
    }
    Ok(StabilityReport {
        c_values: cfg.c_values.clone(),
        k_values: cfg.k_values.clone(),
        mean_ari,
        std_ari,
        repetitions: cfg.repetitions,
        test_fraction: cfg.test_fraction,
    })
}

/// The `c` whose mean ARI, averaged over `k_subset`, is highest; ties go to
/// the smallest `c`.
pub fn select_num_clusters(report: &StabilityReport, k_subset: &[usize]) -> Result<usize> {
    if k_subset.is_empty() {
        return Err(MagicError::InvalidInput("empty K subset".into()));
    }
    let cols = k_subset
        .iter()
        .map(|k| {
            report
                .k_values
                .iter()
                .position(|x| x == k)
                .ok_or_else(|| MagicError::InvalidInput(format!("K={k} not in stability report")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (ci, &c) in report.c_values.iter().enumerate() {
        let avg = cols.iter().map(|&ki| report.mean_ari[ci][ki]).sum::<f64>() / cols.len() as f64;
        let better = match best {
            None => true,
            Some((bc, bv)) => avg > bv || (avg == bv && c < bc),
        };
        if better {
            best = Some((c, avg));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| MagicError::InvalidInput("stability report has no c values".into()))
}
