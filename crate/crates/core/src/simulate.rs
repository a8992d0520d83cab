//! Synthetic cohorts with planted subtypes.
//!
//! Each subject is a `rows × cols` grid flattened row-major into features.
//! Controls are a scaled copy of a smooth base field plus noise; each patient
//! additionally loses a fixed fraction of intensity inside one named mask.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariates, Dataset, Label};
use crate::error::{MagicError, Result};
use crate::rng::{derive_seed, rng_from_seed, TAG_SIMULATE};

const TAG_NULL_LABELS: u64 = 0x4e55_4c4c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasePattern {
    Flat(f64),
    /// Constant 1.0 plus two low-frequency Gaussian bumps.
    SmoothBumps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major cell flags.
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_cn: usize,
    pub n_pt: usize,
    pub grid: (usize, usize),
    pub base_pattern: BasePattern,
    pub noise_sd: f64,
    pub subject_sd: f64,
    pub atrophy_fraction: f64,
    /// Additive change per year of age, as a fraction of the base field.
    pub age_slope: f64,
    /// `None` selects [`default_masks`].
    pub masks: Option<Vec<Mask>>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_cn: 100,
            n_pt: 100,
            grid: (20, 20),
            base_pattern: BasePattern::SmoothBumps,
            noise_sd: 0.05,
            subject_sd: 0.05,
            atrophy_fraction: 0.10,
            age_slope: -0.003,
            masks: None,
            seed: 0,
        }
    }
}

const AGE_RANGE: (f64, f64) = (60.0, 90.0);
const AGE_CENTER: f64 = 75.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Patient id to mask name.
    pub subtype_of_patient: BTreeMap<String, String>,
    pub masks: Vec<Mask>,
}

impl GroundTruth {
    /// Index into `masks` of each patient's subtype, in `ids` order.
    pub fn subtype_indices(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                let name = self
                    .subtype_of_patient
                    .get(id)
                    .ok_or_else(|| MagicError::InvalidInput(format!("no planted subtype for '{id}'")))?;
                Ok(self.masks.iter().position(|m| &m.name == name).expect("mask of known name"))
            })
            .collect()
    }
}

/// `"global"`: the left half of the grid minus the focal block.
/// `"focal"`: a centered square block of about 4% of the cells.
pub fn default_masks(rows: usize, cols: usize) -> Result<Vec<Mask>> {
    if rows < 8 || cols < 8 {
        return Err(MagicError::Config(format!("grid must be at least 8x8, got {rows}x{cols}")));
    }
    let side = ((0.04 * (rows * cols) as f64).sqrt().floor() as usize).max(1);
    let (r0, c0) = ((rows - side) / 2, (cols - side) / 2);
    let in_focal = |r: usize, c: usize| (r0..r0 + side).contains(&r) && (c0..c0 + side).contains(&c);
    let mut global = vec![false; rows * cols];
    let mut focal = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if in_focal(r, c) {
                focal[r * cols + c] = true;
            } else if c < cols / 2 {
                global[r * cols + c] = true;
            }
        }
    }
    Ok(vec![
        Mask {
            name: "global".into(),
            rows,
            cols,
            cells: global,
        },
        Mask {
            name: "focal".into(),
            rows,
            cols,
            cells: focal,
        },
    ])
}

fn base_field(pattern: &BasePattern, rows: usize, cols: usize) -> Vec<f64> {
    let bump = |r: f64, c: f64, cr: f64, cc: f64, amp: f64, width: f64| {
        let dr = (r - cr) / (width * rows as f64);
        let dc = (c - cc) / (width * cols as f64);
        amp * (-(dr * dr + dc * dc) / 2.0).exp()
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(match pattern {
                BasePattern::Flat(v) => *v,
                BasePattern::SmoothBumps => {
                    let (rf, cf) = (r as f64, c as f64);
                    1.0 + bump(rf, cf, 0.3 * rows as f64, 0.25 * cols as f64, 0.6, 0.2)
                        + bump(rf, cf, 0.7 * rows as f64, 0.75 * cols as f64, 0.4, 0.25)
                }
            });
        }
    }
    out
}

fn validate(cfg: &SimConfig, masks: &[Mask]) -> Result<()> {
    if !(cfg.atrophy_fraction > 0.0 && cfg.atrophy_fraction < 1.0) {
        return Err(MagicError::Config(format!(
            "atrophy_fraction must be in (0,1), got {}",
            cfg.atrophy_fraction
        )));
    }
    validate_common(cfg, masks)
}

fn validate_common(cfg: &SimConfig, masks: &[Mask]) -> Result<()> {
    let (rows, cols) = cfg.grid;
    if masks.is_empty() {
        return Err(MagicError::Config("at least one mask is required".into()));
    }
    if let Some(m) = masks.iter().find(|m| m.rows != rows || m.cols != cols || m.cells.len() != rows * cols) {
        return Err(MagicError::Config(format!("mask '{}' does not match the {rows}x{cols} grid", m.name)));
    }
    if cfg.n_cn < 2 {
        return Err(MagicError::Config("n_cn must be at least 2".into()));
    }
    if cfg.n_pt < 2 * masks.len() {
        return Err(MagicError::Config(format!(
            "n_pt must be at least {} for {} masks",
            2 * masks.len(),
            masks.len()
        )));
    }
    if !(cfg.noise_sd >= 0.0 && cfg.subject_sd >= 0.0 && cfg.age_slope.is_finite()) {
        return Err(MagicError::Config("noise_sd and subject_sd must be non-negative".into()));
    }
    if let BasePattern::Flat(v) = cfg.base_pattern {
        if !(v > 0.0 && v.is_finite()) {
            return Err(MagicError::Config("flat base value must be positive".into()));
        }
    }
    Ok(())
}

pub fn subject_id(i: usize) -> String {
    format!("sub-{:04}", i + 1)
}

fn feature_names(rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| format!("r{r:02}c{c:02}")))
        .collect()
}

/// Builds the cohort. `atrophy` is applied to patient `j` inside mask
/// `j % n_masks`; pass 0 to draw patients from the control distribution.
fn build(cfg: &SimConfig, masks: &[Mask], atrophy: f64) -> (Array2<f64>, Vec<f64>) {
    let (rows, cols) = cfg.grid;
    let d = rows * cols;
    let n = cfg.n_cn + cfg.n_pt;
    let base = base_field(&cfg.base_pattern, rows, cols);
    let mut x = Array2::<f64>::zeros((n, d));
    let mut ages = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, TAG_SIMULATE, i as u64));
        let age = rng.random_range(AGE_RANGE.0..AGE_RANGE.1);
        let z: f64 = rng.sample(StandardNormal);
        let scale = (1.0 + cfg.subject_sd * z).max(0.1);
        let age_term = cfg.age_slope * (age - AGE_CENTER);
        let mask = (i >= cfg.n_cn).then(|| &masks[(i - cfg.n_cn) % masks.len()]);
        for (f, &b) in base.iter().enumerate() {
            let mut v = scale * b + age_term * b;
            if mask.is_some_and(|m| m.cells[f]) {
                v *= 1.0 - atrophy;
            }
            if cfg.noise_sd > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                v += cfg.noise_sd * e;
            }
            x[[i, f]] = v.max(0.0);
        }
        ages.push(age);
    }
    (x, ages)
}

fn assemble(cfg: &SimConfig, x: Array2<f64>, ages: Vec<f64>, labels: Vec<Label>) -> Result<Dataset> {
    let n = labels.len();
    let ids: Vec<String> = (0..n).map(subject_id).collect();
    let covariates = Covariates {
        names: vec!["cov_age".into()],
        values: Array2::from_shape_vec((n, 1), ages).expect("one age per subject"),
    };
    Dataset::new(ids, x, labels, Some(covariates), feature_names(cfg.grid.0, cfg.grid.1))
}

/// Controls come first (`sub-0001..`), then patients.
pub fn generate_cohort(cfg: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    let masks = match &cfg.masks {
        Some(m) => m.clone(),
        None => default_masks(cfg.grid.0, cfg.grid.1)?,
    };
    validate(cfg, &masks)?;
    let (x, ages) = build(cfg, &masks, cfg.atrophy_fraction);
    let labels: Vec<Label> = (0..cfg.n_cn + cfg.n_pt)
        .map(|i| if i < cfg.n_cn { Label::Control } else { Label::Patient })
        .collect();
    let ds = assemble(cfg, x, ages, labels)?;
    let subtype_of_patient = (0..cfg.n_pt)
        .map(|j| (subject_id(cfg.n_cn + j), masks[j % masks.len()].name.clone()))
        .collect();
    Ok((ds, GroundTruth { subtype_of_patient, masks }))
}

/// Cohort without any planted effect: every subject is drawn from the control
/// distribution and the `n_pt` patient labels land on random subjects. The
/// ground truth still splits those "patients" evenly across the masks.
pub fn generate_null_cohort(cfg: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    let masks = match &cfg.masks {
        Some(m) => m.clone(),
        None => default_masks(cfg.grid.0, cfg.grid.1)?,
    };
    validate_common(cfg, &masks)?;
    let (x, ages) = build(cfg, &masks, 0.0);
    let n = cfg.n_cn + cfg.n_pt;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, TAG_NULL_LABELS, 0)));
    let mut labels = vec![Label::Control; n];
    for &i in &order[..cfg.n_pt] {
        labels[i] = Label::Patient;
    }
    let ds = assemble(cfg, x, ages, labels)?;
    let subtype_of_patient = ds
        .patient_indices()
        .into_iter()
        .enumerate()
        .map(|(j, i)| (ds.subject_ids[i].clone(), masks[j % masks.len()].name.clone()))
        .collect();
    Ok((ds, GroundTruth { subtype_of_patient, masks }))
}

/// Dice overlap `2|A∩B| / (|A|+|B|)` of two flag vectors.
pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|&&x| x).count() + b.iter().filter(|&&x| x).count();
    if total == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / total as f64
}

/// Features whose weight exceeds the mean weight of the component.
pub fn component_support(weights: &[f64]) -> Vec<bool> {
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    weights.iter().map(|&w| w > mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_cfg() -> SimConfig {
        SimConfig {
            n_cn: 10,
            n_pt: 10,
            grid: (10, 10),
            base_pattern: BasePattern::Flat(1.0),
            noise_sd: 0.0,
            subject_sd: 0.0,
            age_slope: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn default_mask_bounds() {
        let m = default_masks(20, 20).unwrap();
        let (global, focal) = (&m[0], &m[1]);
        assert!((160..=200).contains(&global.count()), "{}", global.count());
        assert!(focal.count() <= 20 && focal.count() >= 1);
        assert!(global.cells.iter().zip(&focal.cells).all(|(a, b)| !(a & b)));
        assert!(focal.contains(10, 10));

        let small = default_masks(8, 8).unwrap();
        assert!(small[1].count() >= 1);
        assert!(small[0].count() as f64 >= 0.4 * 64.0);
        assert!(default_masks(7, 20).is_err());
    }

    #[test]
    fn exact_atrophy_without_noise() {
        let (ds, truth) = generate_cohort(&exact_cfg()).unwrap();
        for (i, id) in ds.subject_ids.iter().enumerate() {
            let mask = truth.subtype_of_patient.get(id).map(|name| {
                truth.masks.iter().find(|m| &m.name == name).unwrap()
            });
            for f in 0..ds.n_features() {
                let expected = if mask.is_some_and(|m| m.cells[f]) { 0.9 } else { 1.0 };
                assert_eq!(ds.features[[i, f]], expected);
            }
        }
    }

    #[test]
    fn ratio_inside_mask_is_exact() {
        let cfg = SimConfig {
            base_pattern: BasePattern::SmoothBumps,
            ..exact_cfg()
        };
        let (ds, truth) = generate_cohort(&cfg).unwrap();
        let subtypes = truth.subtype_indices(&ds.subject_ids[10..].to_vec()).unwrap();
        for (p, &s) in subtypes.iter().enumerate() {
            let mask = &truth.masks[s];
            for f in (0..ds.n_features()).filter(|&f| mask.cells[f]) {
                let ratio = ds.features[[10 + p, f]] / ds.features[[0, f]];
                assert!((ratio - 0.9).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn group_sizes_and_determinism() {
        let cfg = SimConfig {
            n_pt: 100,
            n_cn: 30,
            seed: 5,
            ..SimConfig::default()
        };
        let (ds, truth) = generate_cohort(&cfg).unwrap();
        assert_eq!(ds.patient_indices().len(), 100);
        assert_eq!(ds.control_indices().len(), 30);
        let globals = truth.subtype_of_patient.values().filter(|v| *v == "global").count();
        assert_eq!(globals, 50);
        assert_eq!(truth.subtype_of_patient.len(), 100);
        assert!(ds.features.iter().all(|&v| v >= 0.0));
        assert_eq!(ds.covariates.as_ref().unwrap().names, vec!["cov_age".to_string()]);
        let (again, _) = generate_cohort(&cfg).unwrap();
        assert_eq!(ds, again);
        let (other, _) = generate_cohort(&SimConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(ds.features, other.features);
    }

    #[test]
    fn invalid_configs() {
        for a in [0.0, 1.0, 1.5, -0.1] {
            let err = generate_cohort(&SimConfig { atrophy_fraction: a, ..exact_cfg() }).unwrap_err();
            assert!(err.to_string().contains("atrophy_fraction must be in (0,1)"));
        }
        assert!(generate_cohort(&SimConfig { n_pt: 3, ..exact_cfg() }).is_err());
        assert!(generate_cohort(&SimConfig { grid: (5, 5), ..exact_cfg() }).is_err());
    }

    #[test]
    fn null_cohort_has_no_effect() {
        let (ds, truth) = generate_null_cohort(&exact_cfg()).unwrap();
        assert!(ds.features.iter().all(|&v| v == 1.0));
        assert_eq!(ds.patient_indices().len(), 10);
        assert_eq!(truth.subtype_of_patient.len(), 10);
    }

    #[test]
    fn dice_and_support() {
        assert_eq!(dice(&[true, true, false], &[true, false, false]), 2.0 / 3.0);
        assert_eq!(dice(&[false], &[false]), 1.0);
        assert_eq!(component_support(&[0.0, 1.0, 2.0, 0.5]), vec![false, true, true, false]);
    }
}
