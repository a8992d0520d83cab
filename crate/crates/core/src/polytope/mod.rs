//! Max-margin convex-polytope clustering of patients against controls.
//!
//! Each of the `c` faces is a linear SVM separating all controls (kept on the
//! negative side, inside the polytope) from the patients assigned to that
//! face. Fitting alternates between solving the `c` weighted SVMs for fixed
//! memberships and reassigning each patient to the face that scores it
//! highest. With hard memberships both steps minimize the same joint
//! objective
//!
//! ```text
//! Σ_j ½‖w_j‖² + C · [ Σ_{i∈patients} 1{assign(i)=j} hinge_j(i) + Σ_{i∈controls} (1/c) hinge_j(i) ]
//! ```

mod consensus;
mod init;
mod svm;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use consensus::{average_linkage_cut, co_occurrence, consensus_from_runs};
pub use init::{init_membership, InitMembership};
pub use svm::{fit_weighted_linear_svm, primal_objective, SvmOptions};

use crate::dataset::{indices_of, Label};
use crate::error::{MagicError, Result};
use crate::rng::{derive_seed, rng_from_seed, TAG_RANDOM_SPLIT, TAG_RESTART};

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl Hyperplane {
    pub fn score(&self, x: ArrayView1<'_, f64>) -> f64 {
        svm::decision(self, x)
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|v| v.is_finite())
    }
}

/// Hard assignment of each patient (in feature-row order among patients) to
/// one of `c` faces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub assignments: Vec<usize>,
    pub c: usize,
}

impl Membership {
    pub fn new(assignments: Vec<usize>, c: usize) -> Membership {
        debug_assert!(assignments.iter().all(|&a| a < c));
        Membership { assignments, c }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.c];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Per-dimension standardization fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    /// Standard deviations; constant columns get 1.
    pub scales: Vec<f64>,
}

impl Scaler {
    pub fn fit(features: ArrayView2<'_, f64>) -> Scaler {
        let n = features.nrows() as f64;
        let mut means = Vec::with_capacity(features.ncols());
        let mut scales = Vec::with_capacity(features.ncols());
        for col in features.axis_iter(Axis(1)) {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            means.push(m);
            scales.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Scaler { means, scales }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(MagicError::DimensionMismatch {
                expected: self.dim(),
                found: features.ncols(),
            });
        }
        let mut out = features.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.scales[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeConfig {
    /// SVM penalty.
    pub reg_c: f64,
    pub restarts: usize,
    pub max_alternations: usize,
    pub init: InitMembership,
    pub svm: SvmOptions,
}

impl Default for PolytopeConfig {
    fn default() -> Self {
        PolytopeConfig {
            reg_c: 0.25,
            restarts: 10,
            max_alternations: 50,
            init: InitMembership::WhitenedKMeans,
            svm: SvmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeModel {
    pub hyperplanes: Vec<Hyperplane>,
    pub membership: Membership,
    pub scale_k: usize,
    pub reg_c: f64,
    /// Weight of every control in every face's SVM.
    pub control_weight: f64,
    pub scaler: Scaler,
    /// Joint objective of `hyperplanes` under `membership`.
    pub joint_objective: f64,
    /// Joint objective after the SVM step of each alternation.
    pub objective_trace: Vec<f64>,
    pub n_alternations: usize,
    pub converged: bool,
}

impl PolytopeModel {
    pub fn c(&self) -> usize {
        self.hyperplanes.len()
    }

    /// Face scores (`M × c`) of raw (unstandardized) features.
    pub fn scores(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let z = self.scaler.transform(features)?;
        Ok(face_scores(&self.hyperplanes, z.view()))
    }

    /// Recomputes the joint objective from raw features.
    pub fn recompute_objective(&self, features: ArrayView2<'_, f64>, labels: &[Label]) -> Result<f64> {
        let z = self.scaler.transform(features)?;
        let patients = indices_of(labels, Label::Patient);
        Ok(joint_objective(&self.hyperplanes, z.view(), labels, &patients, &self.membership, self.reg_c, self.control_weight))
    }
}

fn face_scores(hyperplanes: &[Hyperplane], z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut s = Array2::zeros((z.nrows(), hyperplanes.len()));
    for (j, h) in hyperplanes.iter().enumerate() {
        let col = z.dot(&h.weights) + h.bias;
        s.column_mut(j).assign(&col);
    }
    s
}

fn argmax_lowest(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

fn face_weights(labels: &[Label], patients: &[usize], membership: &Membership, face: usize, control_weight: f64) -> Vec<f64> {
    let mut w: Vec<f64> = labels
        .iter()
        .map(|l| if l.is_patient() { 0.0 } else { control_weight })
        .collect();
    for (p, &row) in patients.iter().enumerate() {
        if membership.assignments[p] == face {
            w[row] = 1.0;
        }
    }
    w
}

fn joint_objective(
    hyperplanes: &[Hyperplane],
    z: ArrayView2<'_, f64>,
    labels: &[Label],
    patients: &[usize],
    membership: &Membership,
    reg_c: f64,
    control_weight: f64,
) -> f64 {
    hyperplanes
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let w = face_weights(labels, patients, membership, j, control_weight);
            primal_objective(h, z, labels, &w, reg_c)
        })
        .sum()
}

/// Assigns each patient to its highest-scoring face, ties toward the lowest
/// face index. `patient_features` are raw patient rows.
pub fn update_membership(model: &PolytopeModel, patient_features: ArrayView2<'_, f64>) -> Result<Membership> {
    let scores = model.scores(patient_features)?;
    Ok(membership_from_scores(scores.view()))
}

fn membership_from_scores(scores: ArrayView2<'_, f64>) -> Membership {
    let c = scores.ncols();
    Membership::new(scores.axis_iter(Axis(0)).map(argmax_lowest).collect(), c)
}

/// `+1` iff some face scores strictly above zero; the boundary counts as
/// inside.
pub fn predict_label(model: &PolytopeModel, features: ArrayView2<'_, f64>) -> Result<Vec<Label>> {
    let scores = model.scores(features)?;
    Ok(labels_from_scores(scores.view()))
}

fn labels_from_scores(scores: ArrayView2<'_, f64>) -> Vec<Label> {
    scores
        .axis_iter(Axis(0))
        .map(|row| {
            if row.iter().any(|&s| s > 0.0) {
                Label::Patient
            } else {
                Label::Control
            }
        })
        .collect()
}

/// Mean of sensitivity and specificity.
pub fn balanced_accuracy(y_true: &[Label], y_pred: &[Label]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(MagicError::DimensionMismatch {
            expected: y_true.len(),
            found: y_pred.len(),
        });
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (t, p) in y_true.iter().zip(y_pred) {
        match t {
            Label::Patient => {
                pos += 1;
                tp += usize::from(p.is_patient());
            }
            Label::Control => {
                neg += 1;
                tn += usize::from(!p.is_patient());
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(MagicError::InvalidInput(
            "balanced accuracy needs both classes in y_true".into(),
        ));
    }
    Ok(0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64))
}

/// Checks shapes and returns the patient row indices.
fn validate(features: ArrayView2<'_, f64>, labels: &[Label]) -> Result<Vec<usize>> {
    if features.nrows() != labels.len() {
        return Err(MagicError::DimensionMismatch {
            expected: features.nrows(),
            found: labels.len(),
        });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(MagicError::InvalidInput("non-finite polytope feature".into()));
    }
    let patients = indices_of(labels, Label::Patient);
    if patients.is_empty() || patients.len() == labels.len() {
        return Err(MagicError::InvalidInput("polytope fitting needs controls and patients".into()));
    }
    Ok(patients)
}

/// Moves the worst-fit patients (lowest maximal face score) into empty
/// faces, never emptying a donor face.
fn repair_empty_faces(membership: &mut Membership, scores: Option<ArrayView2<'_, f64>>) {
    loop {
        let sizes = membership.cluster_sizes();
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let candidates = (0..membership.len()).filter(|&p| sizes[membership.assignments[p]] > 1);
        let donor = match scores {
            Some(s) => candidates
                .map(|p| (p, s.row(p).fold(f64::NEG_INFINITY, |a, &b| a.max(b))))
                .fold((usize::MAX, f64::INFINITY), |acc, (p, m)| if m < acc.1 { (p, m) } else { acc })
                .0,
            None => candidates.last().unwrap_or(usize::MAX),
        };
        if donor == usize::MAX {
            return;
        }
        membership.assignments[donor] = empty;
    }
}

/// Fills empty faces with the patients whose move raises their hinge loss
/// the least, never emptying a donor face.
fn repair_by_cost(membership: &mut Membership, scores: ArrayView2<'_, f64>) {
    let hinge = |s: f64| (1.0 - s).max(0.0);
    loop {
        let sizes = membership.cluster_sizes();
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..membership.len())
            .filter(|&p| sizes[membership.assignments[p]] > 1)
            .map(|p| (p, hinge(scores[[p, empty]]) - hinge(scores[[p, membership.assignments[p]]])))
            .fold(None, |best: Option<(usize, f64)>, (p, cost)| match best {
                Some((_, b)) if b <= cost => best,
                _ => Some((p, cost)),
            });
        let Some((p, _)) = donor else {
            return;
        };
        membership.assignments[p] = empty;
    }
}

/// Alternating fit of faces and memberships, warm-started from `init`.
pub fn fit_polytope(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    init: &Membership,
    cfg: &PolytopeConfig,
) -> Result<PolytopeModel> {
    let patients = validate(features, labels)?;
    let scaler = Scaler::fit(features);
    let z = scaler.transform(features)?;
    fit_standardized(z.view(), scaler, labels, &patients, init, cfg)
}

fn fit_standardized(
    z: ArrayView2<'_, f64>,
    scaler: Scaler,
    labels: &[Label],
    patients: &[usize],
    init: &Membership,
    cfg: &PolytopeConfig,
) -> Result<PolytopeModel> {
    let c = init.c;
    if c == 0 {
        return Err(MagicError::Config("number of clusters must be at least 1".into()));
    }
    if init.len() != patients.len() {
        return Err(MagicError::DimensionMismatch {
            expected: patients.len(),
            found: init.len(),
        });
    }
    if patients.len() < c {
        return Err(MagicError::InvalidInput(format!(
            "cannot form {c} clusters from {} patients",
            patients.len()
        )));
    }
    let control_weight = 1.0 / c as f64;
    let gram = svm::gram_of(z);
    let patient_rows = z.select(Axis(0), patients);

    let mut membership = init.clone();
    repair_empty_faces(&mut membership, None);
    let mut hyperplanes: Vec<Hyperplane> = Vec::new();
    let mut trace = Vec::new();
    let mut n_alternations = 0;
    let mut converged = false;

    while n_alternations < cfg.max_alternations.max(1) {
        n_alternations += 1;
        let mut next_faces = Vec::with_capacity(c);
        for j in 0..c {
            let w = face_weights(labels, patients, &membership, j, control_weight);
            let solved = svm::solve(z, gram.view(), labels, &w, cfg.reg_c, &cfg.svm)?;
            // Never accept a face worse than the previous one under the new
            // weights; this keeps the joint objective monotone even when the
            // solver stops slightly short of the optimum.
            let face = match hyperplanes.get(j) {
                Some(prev)
                    if primal_objective(prev, z, labels, &w, cfg.reg_c)
                        < primal_objective(&solved, z, labels, &w, cfg.reg_c) =>
                {
                    prev.clone()
                }
                _ => solved,
            };
            next_faces.push(face);
        }
        hyperplanes = next_faces;
        trace.push(joint_objective(&hyperplanes, z, labels, patients, &membership, cfg.reg_c, control_weight));

        let scores = face_scores(&hyperplanes, patient_rows.view());
        let mut next = membership_from_scores(scores.view());
        if next.cluster_sizes().contains(&0) {
            // Re-seed empty faces, preferring the worst-fit patient, but
            // only accept a repair that does not raise the objective.
            let current = trace[trace.len() - 1];
            let mut worst_fit = next.clone();
            repair_empty_faces(&mut worst_fit, Some(scores.view()));
            let mut cheapest = next;
            repair_by_cost(&mut cheapest, scores.view());
            let accepted = [worst_fit, cheapest].into_iter().find(|m| {
                !m.cluster_sizes().contains(&0)
                    && joint_objective(&hyperplanes, z, labels, patients, m, cfg.reg_c, control_weight) <= current
            });
            match accepted {
                Some(m) => next = m,
                None => break,
            }
        }
        if next == membership {
            converged = true;
            break;
        }
        membership = next;
    }
    let joint = joint_objective(&hyperplanes, z, labels, patients, &membership, cfg.reg_c, control_weight);
    Ok(PolytopeModel {
        hyperplanes,
        membership,
        scale_k: z.ncols(),
        reg_c: cfg.reg_c,
        control_weight,
        scaler,
        joint_objective: joint,
        objective_trace: trace,
        n_alternations,
        converged,
    })
}

/// Runs `cfg.restarts` initializations, takes their consensus and refits from
/// it. The returned model's membership is the final fit's.
pub fn fit_polytope_with_restarts(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    c: usize,
    cfg: &PolytopeConfig,
    seed: u64,
) -> Result<PolytopeModel> {
    let patients = validate(features, labels)?;
    let scaler = Scaler::fit(features);
    let z = scaler.transform(features)?;
    let restarts = cfg.restarts.max(1);
    let runs: Vec<PolytopeModel> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let init = init_membership(z.view(), labels, c, cfg.init, derive_seed(seed, TAG_RESTART, r as u64))?;
            fit_standardized(z.view(), scaler.clone(), labels, &patients, &init, cfg)
        })
        .collect::<Result<_>>()?;
    if runs.len() == 1 {
        return Ok(runs.into_iter().next().expect("one run"));
    }
    let sets: Vec<Vec<usize>> = runs.iter().map(|m| m.membership.assignments.clone()).collect();
    let consensus = Membership::new(consensus_from_runs(&sets, c)?, c);
    fit_standardized(z.view(), scaler, labels, &patients, &consensus, cfg)
}

/// Baseline polytope: patients are split at random into two groups of the
/// given sizes and one SVM (controls vs group, all weights 1) is fitted per
/// group.
pub fn fit_random_split_polytope(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    split_sizes: (usize, usize),
    cfg: &PolytopeConfig,
    seed: u64,
) -> Result<PolytopeModel> {
    let patients = validate(features, labels)?;
    let (n1, n2) = split_sizes;
    if n1 == 0 || n2 == 0 || n1 + n2 != patients.len() {
        return Err(MagicError::InvalidInput(format!(
            "split sizes {n1},{n2} must be positive and sum to the {} patients",
            patients.len()
        )));
    }
    let mut order: Vec<usize> = (0..patients.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, TAG_RANDOM_SPLIT, 0)));
    let mut assignments = vec![0; patients.len()];
    for &p in &order[n1..] {
        assignments[p] = 1;
    }
    let membership = Membership::new(assignments, 2);

    let scaler = Scaler::fit(features);
    let z = scaler.transform(features)?;
    let gram = svm::gram_of(z.view());
    let control_weight = 1.0;
    let hyperplanes = (0..2)
        .map(|j| {
            let w = face_weights(labels, &patients, &membership, j, control_weight);
            svm::solve(z.view(), gram.view(), labels, &w, cfg.reg_c, &cfg.svm)
        })
        .collect::<Result<Vec<_>>>()?;
    let joint = joint_objective(&hyperplanes, z.view(), labels, &patients, &membership, cfg.reg_c, control_weight);
    Ok(PolytopeModel {
        hyperplanes,
        membership,
        scale_k: z.ncols(),
        reg_c: cfg.reg_c,
        control_weight,
        scaler,
        joint_objective: joint,
        objective_trace: vec![joint],
        n_alternations: 1,
        converged: true,
    })
}
