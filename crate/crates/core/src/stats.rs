//! Statistical mapping of subtypes against controls: per-PSC two-sample
//! t-tests, Benjamini–Hochberg correction, Cohen's d, and classical MDS.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::dataset::{indices_of, Label};
use crate::error::{MagicError, Result};
use crate::opnmf::MultiScaleBasis;

/// Smallest reported p-value.
pub const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TTestKind {
    /// Student's test with pooled variance.
    #[default]
    Pooled,
    /// Welch's unequal-variance test.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided p-value of a t statistic: `I_{df/(df+t²)}(df/2, 1/2)`.
fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return P_FLOOR;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(P_FLOOR, 1.0)
}

/// Two-sample t-test of `a` against `b`; positive `t` means `mean(a) > mean(b)`.
pub fn two_sample_ttest(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MagicError::InvalidInput("t-test needs at least two samples per group".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MagicError::InvalidInput("non-finite t-test sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let diff = ma - mb;
    let (se2, df) = match kind {
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            (pooled * (1.0 / na + 1.0 / nb), df)
        }
        TTestKind::Welch => {
            let (sa, sb) = (va / na, vb / nb);
            let se2 = sa + sb;
            let denom = sa * sa / (na - 1.0) + sb * sb / (nb - 1.0);
            let df = if denom > 0.0 { se2 * se2 / denom } else { na + nb - 2.0 };
            (se2, df)
        }
    };
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: diff.signum() * f64::INFINITY,
                p: P_FLOOR,
                df,
            }
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTest {
        t,
        p: two_sided_p(t, df),
        df,
    })
}

/// Benjamini–Hochberg step-up: rejects the `k` smallest p-values for the
/// largest `k` with `p_(k) ≤ k·alpha/m`. Flags follow input order.
pub fn bh_adjust(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MagicError::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MagicError::InvalidInput(format!("p-value {p} outside [0,1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let cutoff = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 / m as f64 * alpha)
        .unwrap_or(0);
    let mut reject = vec![false; m];
    for &i in &order[..cutoff] {
        reject[i] = true;
    }
    Ok(reject)
}

/// `(mean(a) − mean(b)) / pooled_sd`. With `a` the controls and `b` a
/// subtype, loss of signal in the subtype gives a positive value.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MagicError::InvalidInput("Cohen's d needs at least two samples per group".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(MagicError::Numerical("zero pooled standard deviation".into()));
    }
    Ok((ma - mb) / pooled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub scale_k: usize,
    /// 1-based component index within its scale.
    pub component_index: usize,
    pub subtype: usize,
    pub n_subtype: usize,
    pub n_cn: usize,
    pub t: f64,
    pub p: f64,
    pub bh_reject: bool,
    /// NaN when both groups are constant.
    pub cohens_d: f64,
    pub mean_cn: f64,
    pub mean_subtype: f64,
    pub sd_cn: f64,
    pub sd_subtype: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsTable {
    /// Grouped by subtype, sorted by effect size (descending) within each.
    pub rows: Vec<StatsRow>,
    /// BH survivors per subtype.
    pub survivors: Vec<usize>,
    pub alpha: f64,
}

impl StatsTable {
    pub fn rows_for(&self, subtype: usize) -> impl Iterator<Item = &StatsRow> {
        self.rows.iter().filter(move |r| r.subtype == subtype)
    }

    /// Highest-effect BH survivor of `subtype`.
    pub fn top_survivor(&self, subtype: usize) -> Option<&StatsRow> {
        self.rows_for(subtype).find(|r| r.bh_reject)
    }
}

/// Tests every PSC at every scale, controls vs each subtype. BH runs over all
/// PSCs within one subtype-vs-control family.
///
/// `subtypes` holds one id per patient, in the order patients appear in
/// `labels`.
pub fn subtype_mapping(
    basis: &MultiScaleBasis,
    labels: &[Label],
    subtypes: &[usize],
    alpha: f64,
    kind: TTestKind,
) -> Result<StatsTable> {
    if labels.len() != basis.n_subjects() {
        return Err(MagicError::DimensionMismatch {
            expected: basis.n_subjects(),
            found: labels.len(),
        });
    }
    let controls = indices_of(labels, Label::Control);
    let patients = indices_of(labels, Label::Patient);
    if subtypes.len() != patients.len() {
        return Err(MagicError::DimensionMismatch {
            expected: patients.len(),
            found: subtypes.len(),
        });
    }
    if controls.len() < 2 {
        return Err(MagicError::InvalidInput("need at least two controls".into()));
    }
    let n_subtypes = subtypes.iter().max().map_or(0, |m| m + 1);
    let groups: Vec<Vec<usize>> = (0..n_subtypes)
        .map(|s| {
            patients
                .iter()
                .zip(subtypes)
                .filter(|(_, &st)| st == s)
                .map(|(&i, _)| i)
                .collect()
        })
        .collect();
    if let Some(s) = groups.iter().position(|g| g.len() < 2) {
        return Err(MagicError::InvalidInput(format!("subtype {s} has fewer than two members")));
    }

    let pscs: Vec<(usize, usize)> = basis
        .scales
        .iter()
        .flat_map(|&k| (0..k).map(move |j| (k, j)))
        .collect();
    let mut rows = Vec::with_capacity(pscs.len() * n_subtypes);
    let mut survivors = Vec::with_capacity(n_subtypes);
    for (s, group) in groups.iter().enumerate() {
        let mut family = pscs
            .par_iter()
            .map(|&(k, j)| {
                let loadings = basis.get(k)?.loadings.row(j);
                let cn: Vec<f64> = controls.iter().map(|&i| loadings[i]).collect();
                let st: Vec<f64> = group.iter().map(|&i| loadings[i]).collect();
                let test = two_sample_ttest(&cn, &st, kind)?;
                let (m_cn, v_cn) = mean_var(&cn);
                let (m_st, v_st) = mean_var(&st);
                let d = match cohens_d(&cn, &st) {
                    Ok(d) => d,
                    Err(_) if m_cn == m_st => 0.0,
                    Err(_) => f64::NAN,
                };
                Ok(StatsRow {
                    scale_k: k,
                    component_index: j + 1,
                    subtype: s,
                    n_subtype: st.len(),
                    n_cn: cn.len(),
                    t: test.t,
                    p: test.p,
                    bh_reject: false,
                    cohens_d: d,
                    mean_cn: m_cn,
                    mean_subtype: m_st,
                    sd_cn: v_cn.sqrt(),
                    sd_subtype: v_st.sqrt(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let p: Vec<f64> = family.iter().map(|r| r.p).collect();
        let reject = bh_adjust(&p, alpha)?;
        for (row, r) in family.iter_mut().zip(reject) {
            row.bh_reject = r;
        }
        survivors.push(family.iter().filter(|r| r.bh_reject).count());
        // Stable sort: equal effects keep basis order. NaN sorts last.
        family.sort_by(|a, b| {
            let key = |r: &StatsRow| if r.cohens_d.is_nan() { f64::NEG_INFINITY } else { r.cohens_d };
            key(b).total_cmp(&key(a))
        });
        rows.extend(family);
    }
    Ok(StatsTable { rows, survivors, alpha })
}

/// Classical (Torgerson) MDS of the rows of `features` into `dims`
/// coordinates, ordered by decreasing eigenvalue. Each axis is signed so
/// that its largest-magnitude coordinate is positive.
pub fn mds_embed(features: ArrayView2<'_, f64>, dims: usize) -> Result<Array2<f64>> {
    let n = features.nrows();
    if dims == 0 || n < dims + 1 {
        return Err(MagicError::InvalidInput(format!(
            "MDS into {dims} dimensions needs at least {} points, got {n}",
            dims + 1
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(MagicError::InvalidInput("non-finite MDS input".into()));
    }
    let mut d2 = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = features
                .row(i)
                .iter()
                .zip(features.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[(i, j)] = d;
            d2[(j, i)] = d;
        }
    }
    // B = −½ J D² J.
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = Array2::<f64>::zeros((n, dims));
    for (axis, &e) in order.iter().take(dims).enumerate() {
        let lambda = eig.eigenvalues[e].max(0.0);
        let v = eig.eigenvectors.column(e);
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[[i, axis]] = sign * v[i] * lambda.sqrt();
        }
    }
    Ok(out)
}
