//! Orthonormal projective non-negative matrix factorization.
//!
//! Given non-negative data `X` (`D × N`, features by subjects) and a scale
//! `K`, finds a non-negative component matrix `C` (`D × K`) with unit-norm
//! columns such that `‖X − C Cᵀ X‖_F²` is small. Loadings are never a free
//! variable: they are the projection `L = Cᵀ X`.
//!
//! The update is the projective multiplicative rule
//! `C ← C ⊙ (X Xᵀ C) ⊘ (C Cᵀ X Xᵀ C + ε)` followed by column normalization.
//! Orthogonality is not imposed; it emerges as components become disjoint.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::rng::{derive_seed, rng_from_seed, TAG_OPNMF};

/// Denominator guard of the multiplicative update.
pub const EPS: f64 = 1e-16;

/// Halvings of the update exponent tried when a full step would increase
/// the objective.
const MAX_DAMPING: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Non-negative double SVD; deterministic.
    Nndsvd,
    /// Uniform random entries in `(0, 1]`, seeded.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpnmfConfig {
    pub init: InitStrategy,
    /// Relative objective decrease below which the fit stops.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for OpnmfConfig {
    fn default() -> Self {
        OpnmfConfig {
            init: InitStrategy::Nndsvd,
            tol: 1e-6,
            max_iter: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub scale_k: usize,
    /// `D × K`, non-negative, unit-norm columns.
    pub components: Array2<f64>,
    /// `K × N`, equal to `componentsᵀ · X`.
    pub loadings: Array2<f64>,
    /// Objective `‖X − C L‖_F²` at initialization and after every accepted
    /// update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖CᵀC − I‖_F` at initialization.
    pub orthogonality_init: f64,
    /// `‖CᵀC − I‖_F` at the returned solution.
    pub orthogonality_final: f64,
}

impl Decomposition {
    pub fn n_features(&self) -> usize {
        self.components.nrows()
    }

    pub fn n_subjects(&self) -> usize {
        self.loadings.ncols()
    }

    /// Loadings of a subset of subjects (columns), in the given order.
    pub fn loadings_for(&self, subjects: &[usize]) -> Array2<f64> {
        self.loadings.select(Axis(1), subjects)
    }
}

/// Decompositions of one dataset at several scales.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleBasis {
    pub scales: Vec<usize>,
    pub decompositions: BTreeMap<usize, Decomposition>,
    pub total_psc_count: usize,
}

impl MultiScaleBasis {
    pub fn from_decompositions(decs: Vec<Decomposition>) -> Result<MultiScaleBasis> {
        let mut map = BTreeMap::new();
        for d in decs {
            let k = d.scale_k;
            if map.insert(k, d).is_some() {
                return Err(MagicError::InvalidInput(format!("duplicate scale K={k}")));
            }
        }
        if map.is_empty() {
            return Err(MagicError::InvalidInput("basis needs at least one scale".into()));
        }
        let scales: Vec<usize> = map.keys().copied().collect();
        let total_psc_count = scales.iter().sum();
        Ok(MultiScaleBasis {
            scales,
            decompositions: map,
            total_psc_count,
        })
    }

    pub fn get(&self, k: usize) -> Result<&Decomposition> {
        self.decompositions
            .get(&k)
            .ok_or_else(|| MagicError::InvalidInput(format!("scale K={k} not present in basis")))
    }

    pub fn n_subjects(&self) -> usize {
        self.decompositions.values().next().map_or(0, Decomposition::n_subjects)
    }

    pub fn n_features(&self) -> usize {
        self.decompositions.values().next().map_or(0, Decomposition::n_features)
    }

    /// Subject-major loadings (`N × K`) at scale `k`.
    pub fn subject_features(&self, k: usize) -> Result<Array2<f64>> {
        Ok(self.get(k)?.loadings.t().to_owned())
    }
}

fn validate_input(x: ArrayView2<'_, f64>) -> Result<()> {
    if let Some(((d, n), v)) = x.indexed_iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(MagicError::InvalidInput(format!(
            "OPNMF input must be finite and non-negative; entry (feature {d}, subject {n}) = {v}"
        )));
    }
    Ok(())
}

fn validate_scale(x: ArrayView2<'_, f64>, k: usize) -> Result<()> {
    let limit = x.nrows().min(x.ncols());
    if k == 0 || k > limit {
        return Err(MagicError::Config(format!("K={k} out of range 1..={limit}")));
    }
    Ok(())
}

/// Fits OPNMF at a single scale.
pub fn fit_opnmf(x: ArrayView2<'_, f64>, k: usize, cfg: &OpnmfConfig) -> Result<Decomposition> {
    validate_input(x)?;
    validate_scale(x, k)?;
    let svd = match cfg.init {
        InitStrategy::Nndsvd => Some(TruncatedSvd::of(x, k)),
        InitStrategy::Random => None,
    };
    fit_with_svd(x, k, cfg, svd.as_ref())
}

/// Fits one decomposition per scale in `k_list`, in parallel.
pub fn fit_multiscale(
    x: ArrayView2<'_, f64>,
    k_list: &[usize],
    cfg: &OpnmfConfig,
) -> Result<MultiScaleBasis> {
    if k_list.is_empty() {
        return Err(MagicError::Config("empty scale list".into()));
    }
    validate_input(x)?;
    for &k in k_list {
        validate_scale(x, k)?;
    }
    let k_max = *k_list.iter().max().expect("non-empty");
    let svd = match cfg.init {
        InitStrategy::Nndsvd => Some(TruncatedSvd::of(x, k_max)),
        InitStrategy::Random => None,
    };
    let decs = k_list
        .par_iter()
        .map(|&k| fit_with_svd(x, k, cfg, svd.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    MultiScaleBasis::from_decompositions(decs)
}

/// `componentsᵀ · X_new`.
pub fn project(dec: &Decomposition, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x_new.nrows() != dec.n_features() {
        return Err(MagicError::DimensionMismatch {
            expected: dec.n_features(),
            found: x_new.nrows(),
        });
    }
    Ok(dec.components.t().dot(&x_new))
}

/// `‖X − C L‖_F²`.
pub fn reconstruction_error(dec: &Decomposition, x: ArrayView2<'_, f64>) -> Result<f64> {
    if x.nrows() != dec.n_features() || x.ncols() != dec.n_subjects() {
        return Err(MagicError::DimensionMismatch {
            expected: dec.n_features() * dec.n_subjects(),
            found: x.len(),
        });
    }
    let approx = dec.components.dot(&dec.loadings);
    Ok(Zip::from(&x).and(&approx).fold(0.0, |acc, a, b| acc + (a - b) * (a - b)))
}

/// `‖CᵀC − I‖_F`.
pub fn orthogonality_defect(c: &Array2<f64>) -> f64 {
    let mut g = c.t().dot(c);
    for i in 0..g.nrows() {
        g[[i, i]] -= 1.0;
    }
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Leading singular triplets of `X`.
struct TruncatedSvd {
    u: Array2<f64>,
    s: Vec<f64>,
    v: Array2<f64>,
}

impl TruncatedSvd {
    fn of(x: ArrayView2<'_, f64>, k: usize) -> TruncatedSvd {
        let (d, n) = x.dim();
        let m = DMatrix::from_fn(d, n, |i, j| x[[i, j]]);
        let svd = m.svd(true, true);
        let u_full = svd.u.expect("requested U");
        let vt_full = svd.v_t.expect("requested Vᵀ");
        // nalgebra does not guarantee ordering.
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(k);
        let u = Array2::from_shape_fn((d, order.len()), |(i, j)| u_full[(i, order[j])]);
        let v = Array2::from_shape_fn((n, order.len()), |(i, j)| vt_full[(order[j], i)]);
        let s = order.iter().map(|&j| svd.singular_values[j]).collect();
        TruncatedSvd { u, s, v }
    }
}

fn nndsvd(svd: &TruncatedSvd, k: usize, seed: u64) -> Array2<f64> {
    let d = svd.u.nrows();
    let mut c = Array2::<f64>::zeros((d, k));
    let mut rng = rng_from_seed(derive_seed(seed, TAG_OPNMF, k as u64));
    for j in 0..k {
        let u = svd.u.column(j);
        let v = svd.v.column(j);
        let sigma = svd.s.get(j).copied().unwrap_or(0.0);
        let col: Vec<f64> = if j == 0 {
            u.iter().map(|a| sigma.sqrt() * a.abs()).collect()
        } else {
            let pos = |a: &f64| a.max(0.0);
            let neg = |a: &f64| (-a).max(0.0);
            let norm = |it: Vec<f64>| it.iter().map(|v| v * v).sum::<f64>().sqrt();
            let up: Vec<f64> = u.iter().map(pos).collect();
            let un: Vec<f64> = u.iter().map(neg).collect();
            let (nup, nun) = (norm(up.clone()), norm(un.clone()));
            let nvp = norm(v.iter().map(pos).collect());
            let nvn = norm(v.iter().map(neg).collect());
            let (mp, mn) = (nup * nvp, nun * nvn);
            if mp >= mn && nup > 0.0 {
                up.iter().map(|a| (sigma * mp).sqrt() * a / nup).collect()
            } else if nun > 0.0 {
                un.iter().map(|a| (sigma * mn).sqrt() * a / nun).collect()
            } else {
                Vec::new()
            }
        };
        if col.iter().any(|v| *v > 0.0) {
            c.column_mut(j).iter_mut().zip(col).for_each(|(dst, v)| *dst = v);
        } else {
            // Degenerate singular vector: fall back to random entries.
            c.column_mut(j).iter_mut().for_each(|dst| *dst = rng.random::<f64>() + f64::MIN_POSITIVE);
        }
    }
    c
}

fn random_init(d: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(derive_seed(seed, TAG_OPNMF, k as u64));
    Array2::from_shape_simple_fn((d, k), || 1.0 - rng.random::<f64>())
}

fn normalize_columns(c: &mut Array2<f64>) {
    for mut col in c.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

/// `‖X − C Cᵀ X‖_F² = tr(A) − 2 tr(CᵀAC) + tr(CᵀC · CᵀAC)` with `A = X Xᵀ`.
/// Also returns `CᵀAC`, which the next update needs.
fn objective(trace_a: f64, c: &Array2<f64>, ac: &Array2<f64>) -> (f64, Array2<f64>) {
    let ctac = c.t().dot(ac);
    let ctc = c.t().dot(c);
    let cross: f64 = ctac.diag().sum();
    let quad: f64 = Zip::from(&ctc).and(&ctac).fold(0.0, |acc, a, b| acc + a * b);
    ((trace_a - 2.0 * cross + quad).max(0.0), ctac)
}

fn fit_with_svd(
    x: ArrayView2<'_, f64>,
    k: usize,
    cfg: &OpnmfConfig,
    svd: Option<&TruncatedSvd>,
) -> Result<Decomposition> {
    if !(cfg.tol >= 0.0) {
        return Err(MagicError::Config(format!("tol must be non-negative, got {}", cfg.tol)));
    }
    let d = x.nrows();
    let mut c = match (cfg.init, svd) {
        (InitStrategy::Nndsvd, Some(svd)) => nndsvd(svd, k, cfg.seed),
        _ => random_init(d, k, cfg.seed),
    };
    normalize_columns(&mut c);
    let orthogonality_init = orthogonality_defect(&c);

    let a = x.dot(&x.t());
    let trace_a = a.diag().sum();
    let mut ac = a.dot(&c);
    let (mut obj, mut ctac) = objective(trace_a, &c, &ac);
    let mut trace = vec![obj];
    let mut iterations = 0;
    let mut converged = obj == 0.0;

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let denom = c.dot(&ctac);
        let mut ratio = ac.clone();
        Zip::from(&mut ratio).and(&denom).for_each(|r, &den| *r /= den + EPS);

        // A full multiplicative step normally decreases the objective; when
        // it does not, shrink the step geometrically.
        let mut accepted = None;
        for damping in 0..=MAX_DAMPING {
            let exponent = 0.5f64.powi(damping as i32);
            let mut cand = c.clone();
            Zip::from(&mut cand).and(&ratio).for_each(|v, &r| {
                *v *= if damping == 0 { r } else { r.powf(exponent) };
            });
            normalize_columns(&mut cand);
            let cand_ac = a.dot(&cand);
            let (cand_obj, cand_ctac) = objective(trace_a, &cand, &cand_ac);
            if cand_obj <= obj {
                accepted = Some((cand, cand_ac, cand_ctac, cand_obj));
                break;
            }
        }
        let Some((cand, cand_ac, cand_ctac, cand_obj)) = accepted else {
            converged = true;
            break;
        };
        let decrease = obj - cand_obj;
        c = cand;
        ac = cand_ac;
        ctac = cand_ctac;
        trace.push(cand_obj);
        converged = cand_obj == 0.0 || decrease <= cfg.tol * obj;
        obj = cand_obj;
    }

    if c.iter().any(|v| !v.is_finite()) {
        return Err(MagicError::Numerical(format!("OPNMF diverged at K={k}")));
    }
    let loadings = c.t().dot(&x);
    let orthogonality_final = orthogonality_defect(&c);
    Ok(Decomposition {
        scale_k: k,
        components: c,
        loadings,
        objective_trace: trace,
        iterations,
        converged,
        orthogonality_init,
        orthogonality_final,
    })
}
