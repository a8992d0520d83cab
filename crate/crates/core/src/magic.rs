//! Double cyclic block-wise optimization across scales.
//!
//! For every initialization scale, a polytope is fitted (with restarts and
//! consensus) on that scale's loadings. The resulting membership is then
//! carried through the other scales in cyclic order, each block refitting
//! the polytope on its own loadings warm-started from the current
//! membership, until a full cycle leaves the membership (almost) unchanged.
//! The final memberships of all initializations are merged by consensus.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{MagicError, Result};
use crate::opnmf::{project, Decomposition, MultiScaleBasis};
use crate::polytope::{
    balanced_accuracy, consensus_from_runs, fit_polytope, fit_polytope_with_restarts, predict_label,
    update_membership, PolytopeConfig, PolytopeModel,
};
use crate::selection::adjusted_rand_index;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    /// Strictly increasing scales visited by the inner cycle.
    pub k_set: Vec<usize>,
    pub max_cycles: usize,
    /// ARI between memberships at the start and end of a cycle at which the
    /// inner loop stops.
    pub consistency_threshold: f64,
    pub restarts_at_init: usize,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        ScaleSchedule {
            k_set: (25..=60).step_by(5).collect(),
            max_cycles: 10,
            consistency_threshold: 0.98,
            restarts_at_init: 10,
        }
    }
}

impl ScaleSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.k_set.is_empty() {
            return Err(MagicError::Config("empty scale schedule".into()));
        }
        if self.k_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MagicError::Config("scale schedule must be strictly increasing".into()));
        }
        if !(self.consistency_threshold > 0.0 && self.consistency_threshold <= 1.0) {
            return Err(MagicError::Config(format!(
                "consistency threshold must be in (0,1], got {}",
                self.consistency_threshold
            )));
        }
        if self.max_cycles == 0 {
            return Err(MagicError::Config("max_cycles must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagicModel {
    pub c: usize,
    pub k_set: Vec<usize>,
    /// Final patient assignments per initialization scale.
    pub per_init_labels: BTreeMap<usize, Vec<usize>>,
    pub consensus_labels: Vec<usize>,
    /// Polytopes of the final cycle of `best_init_scale`.
    pub per_scale_polytopes: BTreeMap<usize, PolytopeModel>,
    /// Start-vs-end ARI of every cycle, per initialization scale.
    pub cycle_ari_trace: BTreeMap<usize, Vec<f64>>,
    /// Initialization whose final labels agree best with the consensus.
    pub best_init_scale: usize,
    pub selected_predict_scale: usize,
}

impl MagicModel {
    pub fn predict_polytope(&self) -> &PolytopeModel {
        &self.per_scale_polytopes[&self.selected_predict_scale]
    }
}

struct InitRun {
    labels: Vec<usize>,
    polytopes: BTreeMap<usize, PolytopeModel>,
    trace: Vec<f64>,
}

fn run_from_init(
    features: &BTreeMap<usize, Array2<f64>>,
    labels: &[Label],
    c: usize,
    schedule: &ScaleSchedule,
    cfg: &PolytopeConfig,
    init_pos: usize,
    seed: u64,
) -> Result<InitRun> {
    let k_init = schedule.k_set[init_pos];
    let init_cfg = PolytopeConfig {
        restarts: schedule.restarts_at_init,
        ..cfg.clone()
    };
    let start = fit_polytope_with_restarts(features[&k_init].view(), labels, c, &init_cfg, seed)?;
    let mut membership = start.membership.clone();
    let mut polytopes = BTreeMap::from([(k_init, start)]);
    let n = schedule.k_set.len();
    let order: Vec<usize> = (1..=n).map(|step| schedule.k_set[(init_pos + step) % n]).collect();
    let mut trace = Vec::new();
    for _ in 0..schedule.max_cycles {
        let cycle_start = membership.clone();
        for &k in &order {
            let model = fit_polytope(features[&k].view(), labels, &membership, cfg)?;
            membership = model.membership.clone();
            polytopes.insert(k, model);
        }
        let ari = adjusted_rand_index(&cycle_start.assignments, &membership.assignments)?;
        trace.push(ari);
        if ari >= schedule.consistency_threshold {
            break;
        }
    }
    Ok(InitRun {
        labels: membership.assignments,
        polytopes,
        trace,
    })
}

/// Fits the multi-scale model. `labels` are aligned with the basis subjects.
pub fn fit_magic(
    basis: &MultiScaleBasis,
    labels: &[Label],
    c: usize,
    schedule: &ScaleSchedule,
    cfg: &PolytopeConfig,
    seed: u64,
) -> Result<MagicModel> {
    schedule.validate()?;
    if c == 0 {
        return Err(MagicError::Config("number of clusters must be at least 1".into()));
    }
    if labels.len() != basis.n_subjects() {
        return Err(MagicError::DimensionMismatch {
            expected: basis.n_subjects(),
            found: labels.len(),
        });
    }
    let features = schedule
        .k_set
        .iter()
        .map(|&k| Ok((k, basis.subject_features(k)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;

    let runs: Vec<InitRun> = (0..schedule.k_set.len())
        .into_par_iter()
        .map(|pos| run_from_init(&features, labels, c, schedule, cfg, pos, seed))
        .collect::<Result<_>>()?;

    let sets: Vec<Vec<usize>> = runs.iter().map(|r| r.labels.clone()).collect();
    let consensus_labels = consensus_from_runs(&sets, c)?;

    let mut best = 0;
    let mut best_ari = f64::NEG_INFINITY;
    for (i, set) in sets.iter().enumerate() {
        let ari = adjusted_rand_index(set, &consensus_labels)?;
        if ari > best_ari {
            best = i;
            best_ari = ari;
        }
    }
    let best_init_scale = schedule.k_set[best];

    let mut selected = None;
    for (&k, model) in &runs[best].polytopes {
        let ba = balanced_accuracy(labels, &predict_label(model, features[&k].view())?)?;
        if selected.is_none_or(|(_, b)| ba > b) {
            selected = Some((k, ba));
        }
    }
    let selected_predict_scale = selected.expect("at least one scale").0;

    let mut per_init_labels = BTreeMap::new();
    let mut cycle_ari_trace = BTreeMap::new();
    let mut per_scale_polytopes = BTreeMap::new();
    for (i, run) in runs.into_iter().enumerate() {
        let k = schedule.k_set[i];
        per_init_labels.insert(k, run.labels);
        cycle_ari_trace.insert(k, run.trace);
        if i == best {
            per_scale_polytopes = run.polytopes;
        }
    }
    Ok(MagicModel {
        c,
        k_set: schedule.k_set.clone(),
        per_init_labels,
        consensus_labels,
        per_scale_polytopes,
        cycle_ari_trace,
        best_init_scale,
        selected_predict_scale,
    })
}

/// Minimum and mean ARI over all pairs of label sets.
pub fn cross_scale_consistency(label_sets: &[Vec<usize>]) -> Result<(f64, f64)> {
    if label_sets.len() < 2 {
        return Err(MagicError::InvalidInput("need at least two label sets".into()));
    }
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..label_sets.len() {
        for j in (i + 1)..label_sets.len() {
            let a = adjusted_rand_index(&label_sets[i], &label_sets[j])?;
            min = min.min(a);
            sum += a;
            pairs += 1;
        }
    }
    Ok((min, sum / pairs as f64))
}

/// Projects raw subject-major features (`M × D`) through `dec` and applies
/// `polytope`. Returns diagnosis predictions and the highest-scoring face of
/// every subject.
pub fn predict_with_polytope(
    polytope: &PolytopeModel,
    dec: &Decomposition,
    raw_features: ArrayView2<'_, f64>,
) -> Result<(Vec<Label>, Vec<usize>)> {
    let loadings = project(dec, raw_features.t())?;
    let feats = loadings.t();
    let labels = predict_label(polytope, feats)?;
    let faces = update_membership(polytope, feats)?.assignments;
    Ok((labels, faces))
}

/// Prediction at the model's designated scale.
pub fn predict_magic(
    model: &MagicModel,
    basis: &MultiScaleBasis,
    raw_features: ArrayView2<'_, f64>,
) -> Result<(Vec<Label>, Vec<usize>)> {
    let k = model.selected_predict_scale;
    predict_with_polytope(model.predict_polytope(), basis.get(k)?, raw_features)
}
