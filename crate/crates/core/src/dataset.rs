//! Subject-by-feature data model, CSV I/O, covariate residualization and
//! stratified holdout splitting.
//!
//! Files hold one subject per row. Internally features are kept as an
//! `N × D` matrix; the decomposition code transposes when it needs the
//! feature-major `D × N` orientation.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::rng::rng_from_seed;

/// Diagnosis label. Encoded as `-1` (control) and `+1` (patient) on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Control,
    Patient,
}

impl Label {
    pub fn from_code(code: i64) -> Option<Label> {
        match code {
            -1 => Some(Label::Control),
            1 => Some(Label::Patient),
            _ => None,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Label::Control => -1,
            Label::Patient => 1,
        }
    }

    pub fn sign(self) -> f64 {
        f64::from(self.code())
    }

    pub fn is_patient(self) -> bool {
        self == Label::Patient
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Column roles of an input table.
#[derive(Debug, Clone)]
pub struct Schema {
    pub id_column: String,
    pub label_column: String,
    pub covariate_prefix: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id_column: "participant_id".into(),
            label_column: "diagnosis".into(),
            covariate_prefix: "cov_".into(),
        }
    }
}

/// Named covariate columns, `N × Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subject_ids: Vec<String>,
    /// `N × D`, rows are subjects.
    pub features: Array2<f64>,
    pub labels: Vec<Label>,
    pub covariates: Option<Covariates>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        subject_ids: Vec<String>,
        features: Array2<f64>,
        labels: Vec<Label>,
        covariates: Option<Covariates>,
        feature_names: Vec<String>,
    ) -> Result<Dataset> {
        let n = subject_ids.len();
        if features.nrows() != n || labels.len() != n {
            return Err(MagicError::InvalidInput(format!(
                "{} subject ids, {} feature rows, {} labels",
                n,
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() == 0 || features.ncols() != feature_names.len() {
            return Err(MagicError::InvalidInput(format!(
                "{} feature columns but {} feature names",
                features.ncols(),
                feature_names.len()
            )));
        }
        if let Some(dup) = first_duplicate(&subject_ids) {
            return Err(MagicError::InvalidInput(format!("duplicate subject id '{dup}'")));
        }
        if let Some(dup) = first_duplicate(&feature_names) {
            return Err(MagicError::InvalidInput(format!("duplicate feature name '{dup}'")));
        }
        if !labels.contains(&Label::Control) || !labels.contains(&Label::Patient) {
            return Err(MagicError::InvalidInput(
                "labels must contain at least one control (-1) and one patient (+1)".into(),
            ));
        }
        if let Some(cov) = &covariates {
            if cov.values.nrows() != n || cov.values.ncols() != cov.names.len() {
                return Err(MagicError::InvalidInput("covariate matrix shape mismatch".into()));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(MagicError::InvalidInput("non-finite feature value".into()));
        }
        Ok(Dataset {
            subject_ids,
            features,
            labels,
            covariates,
            feature_names,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        indices_of(&self.labels, Label::Control)
    }

    pub fn patient_indices(&self) -> Vec<usize> {
        indices_of(&self.labels, Label::Patient)
    }

    /// Feature-major `D × N` view.
    pub fn feature_major(&self) -> ArrayView2<'_, f64> {
        self.features.t()
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.covariates.as_ref().map(|c| Covariates {
                names: c.names.clone(),
                values: c.values.select(Axis(0), indices),
            }),
            self.feature_names.clone(),
        )
    }
}

pub(crate) fn indices_of(labels: &[Label], which: Label) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == which)
        .map(|(i, _)| i)
        .collect()
}

fn first_duplicate(values: &[String]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(values.len());
    values.iter().find(|v| !seen.insert(v.as_str())).map(|s| s.as_str())
}

/// A loaded table whose label column may be absent (prediction inputs).
#[derive(Debug, Clone)]
pub struct SubjectTable {
    pub subject_ids: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Option<Vec<Label>>,
    pub covariates: Option<Covariates>,
    pub feature_names: Vec<String>,
}

impl SubjectTable {
    pub fn into_dataset(self) -> Result<Dataset> {
        let labels = self
            .labels
            .ok_or_else(|| MagicError::InvalidInput("table has no diagnosis column".into()))?;
        Dataset::new(
            self.subject_ids,
            self.features,
            labels,
            self.covariates,
            self.feature_names,
        )
    }
}

/// Loads a labelled dataset.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let table = load_table(path, schema)?;
    if table.labels.is_none() {
        return Err(parse_err(path, 1, &schema.label_column, "missing label column"));
    }
    table.into_dataset()
}

fn parse_err(path: &Path, row: usize, column: &str, message: impl Into<String>) -> MagicError {
    MagicError::Parse {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Loads a table whose label column is optional.
pub fn load_table(path: &Path, schema: &Schema) -> Result<SubjectTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => MagicError::io(path, io),
            other => MagicError::InvalidInput(format!("{}: {other:?}", path.display())),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some(schema.id_column.as_str()) {
        return Err(parse_err(path, 1, header.first().map_or("", |s| s), format!(
            "first column must be '{}'",
            schema.id_column
        )));
    }
    let label_col = header.iter().position(|h| *h == schema.label_column);
    if let Some(pos) = label_col {
        if pos != 1 {
            return Err(parse_err(path, 1, &schema.label_column, "label column must be second"));
        }
    }
    let mut cov_cols = Vec::new();
    let mut feat_cols = Vec::new();
    for (j, name) in header.iter().enumerate().skip(1) {
        if Some(j) == label_col {
            continue;
        }
        if name.starts_with(&schema.covariate_prefix) {
            cov_cols.push(j);
        } else {
            feat_cols.push(j);
        }
    }
    if feat_cols.is_empty() {
        return Err(parse_err(path, 1, "", "no feature columns"));
    }
    let feature_names: Vec<String> = feat_cols.iter().map(|&j| header[j].clone()).collect();
    if let Some(dup) = first_duplicate(&feature_names) {
        return Err(parse_err(path, 1, dup, "duplicate feature name"));
    }

    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut labels = Vec::new();
    let mut feats = Vec::new();
    let mut covs = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record?;
        if record.len() != header.len() {
            return Err(parse_err(path, row, "", format!(
                "expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let id = record[0].trim();
        if id.is_empty() {
            return Err(parse_err(path, row, &header[0], "missing subject id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(parse_err(path, row, &header[0], format!("duplicate subject id '{id}'")));
        }
        ids.push(id.to_string());
        if let Some(pos) = label_col {
            let raw = record[pos].trim();
            let label = raw
                .parse::<i64>()
                .ok()
                .and_then(Label::from_code)
                .ok_or_else(|| parse_err(path, row, &header[pos], format!("invalid label '{raw}'")))?;
            labels.push(label);
        }
        for &j in &cov_cols {
            covs.push(parse_real(path, row, &header[j], &record[j])?);
        }
        for &j in &feat_cols {
            let v = parse_real(path, row, &header[j], &record[j])?;
            if v < 0.0 {
                return Err(parse_err(path, row, &header[j], format!("negative feature value {v}")));
            }
            feats.push(v);
        }
    }
    let n = ids.len();
    if n == 0 {
        return Err(parse_err(path, 2, "", "no data rows"));
    }
    let features = Array2::from_shape_vec((n, feat_cols.len()), feats)
        .expect("row-major buffer matches shape");
    let covariates = if cov_cols.is_empty() {
        None
    } else {
        Some(Covariates {
            names: cov_cols.iter().map(|&j| header[j].clone()).collect(),
            values: Array2::from_shape_vec((n, cov_cols.len()), covs)
                .expect("row-major buffer matches shape"),
        })
    };
    Ok(SubjectTable {
        subject_ids: ids,
        features,
        labels: label_col.map(|_| labels),
        covariates,
        feature_names,
    })
}

fn parse_real(path: &Path, row: usize, column: &str, raw: &str) -> Result<f64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(parse_err(path, row, column, "missing value"));
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, row, column, format!("non-numeric value '{raw}'"))),
    }
}

/// Writes `ds` in the input format. Values use the shortest round-trip
/// decimal representation, so a reload is bit-identical.
pub fn save_dataset(ds: &Dataset, path: &Path, schema: &Schema) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| MagicError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec![schema.id_column.clone(), schema.label_column.clone()];
    if let Some(cov) = &ds.covariates {
        header.extend(cov.names.iter().cloned());
    }
    header.extend(ds.feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..ds.n_subjects() {
        let mut rec = vec![ds.subject_ids[i].clone(), ds.labels[i].to_string()];
        if let Some(cov) = &ds.covariates {
            rec.extend(cov.values.row(i).iter().map(|v| v.to_string()));
        }
        rec.extend(ds.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| MagicError::io(path, e))?;
    Ok(())
}

/// Per-feature linear covariate effects estimated on controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub covariate_names: Vec<String>,
    pub covariate_means_cn: Vec<f64>,
    /// `D × Q`.
    pub slopes: Vec<Vec<f64>>,
    /// Control mean of each feature, i.e. the fitted value at the control
    /// covariate means.
    pub intercepts: Vec<f64>,
}

impl CovariateModel {
    pub fn is_identity(&self) -> bool {
        self.covariate_names.is_empty()
    }

    /// Removes the fitted effects from `features` (`N × D`) given the
    /// matching covariates (`N × Q`), clamping at zero.
    pub fn apply(&self, features: &Array2<f64>, covariates: Option<&Covariates>) -> Result<Array2<f64>> {
        if self.is_identity() {
            return Ok(features.clone());
        }
        let cov = covariates.ok_or_else(|| {
            MagicError::InvalidInput(format!(
                "covariate model needs columns {}",
                self.covariate_names.join(", ")
            ))
        })?;
        // Columns are matched by name so that file order does not matter.
        let mut order = Vec::with_capacity(self.covariate_names.len());
        for name in &self.covariate_names {
            let j = cov.names.iter().position(|n| n == name).ok_or_else(|| {
                MagicError::InvalidInput(format!("missing covariate column '{name}'"))
            })?;
            order.push(j);
        }
        if self.slopes.len() != features.ncols() {
            return Err(MagicError::DimensionMismatch {
                expected: self.slopes.len(),
                found: features.ncols(),
            });
        }
        let mut out = features.clone();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let centered: Vec<f64> = order
                .iter()
                .zip(&self.covariate_means_cn)
                .map(|(&j, m)| cov.values[[i, j]] - m)
                .collect();
            for (d, v) in row.iter_mut().enumerate() {
                let effect: f64 = self.slopes[d].iter().zip(&centered).map(|(s, z)| s * z).sum();
                *v = (*v - effect).max(0.0);
            }
        }
        Ok(out)
    }
}

/// Fits a per-feature OLS of feature on covariates over controls only and
/// removes the effect from every subject.
pub fn residualize_covariates(ds: &Dataset) -> Result<(Dataset, CovariateModel)> {
    let d = ds.n_features();
    let controls = ds.control_indices();
    let Some(cov) = ds.covariates.as_ref().filter(|c| !c.names.is_empty()) else {
        let intercepts = column_means(&ds.features, &controls);
        return Ok((
            ds.clone(),
            CovariateModel {
                covariate_names: Vec::new(),
                covariate_means_cn: Vec::new(),
                slopes: vec![Vec::new(); d],
                intercepts,
            },
        ));
    };
    if controls.len() < 2 {
        return Err(MagicError::InvalidInput(
            "covariate residualization needs at least two controls".into(),
        ));
    }
    let q = cov.names.len();
    let nc = controls.len();
    let cov_means = column_means(&cov.values, &controls);
    let z = DMatrix::from_fn(nc, q, |r, j| cov.values[[controls[r], j]] - cov_means[j]);
    check_rank(&z, &cov.names)?;

    let feat_means = column_means(&ds.features, &controls);
    let y = DMatrix::from_fn(nc, d, |r, j| ds.features[[controls[r], j]] - feat_means[j]);
    let gram = z.transpose() * &z;
    let chol = gram.cholesky().ok_or_else(|| MagicError::RankDeficient(cov.names.clone()))?;
    let beta = chol.solve(&(z.transpose() * y)); // Q × D
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(MagicError::Numerical("non-finite covariate slopes".into()));
    }
    let slopes: Vec<Vec<f64>> = (0..d).map(|j| (0..q).map(|k| beta[(k, j)]).collect()).collect();
    let model = CovariateModel {
        covariate_names: cov.names.clone(),
        covariate_means_cn: cov_means,
        slopes,
        intercepts: feat_means,
    };
    let corrected = model.apply(&ds.features, Some(cov))?;
    let mut out = ds.clone();
    out.features = corrected;
    Ok((out, model))
}

fn column_means(m: &Array2<f64>, rows: &[usize]) -> Vec<f64> {
    let n = rows.len().max(1) as f64;
    (0..m.ncols())
        .map(|j| rows.iter().map(|&i| m[[i, j]]).sum::<f64>() / n)
        .collect()
}

/// Modified Gram-Schmidt over the centered design; a column whose residual
/// vanishes relative to its own norm is collinear with the intercept or with
/// earlier columns.
fn check_rank(z: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for j in 0..z.ncols() {
        let col = z.column(j).into_owned();
        let norm0 = col.norm();
        let mut resid = col;
        for b in &basis {
            let proj = b.dot(&resid);
            resid -= b * proj;
        }
        let norm = resid.norm();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            collinear.push(names[j].clone());
        } else {
            basis.push(resid / norm);
        }
    }
    if collinear.is_empty() {
        Ok(())
    } else {
        Err(MagicError::RankDeficient(collinear))
    }
}

/// Train/test row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per class, `round(n_class · test_fraction)` subjects go to the test side.
pub fn stratified_holdout_split(labels: &[Label], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(MagicError::Config(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [Label::Control, Label::Patient] {
        let mut members = indices_of(labels, class);
        let n = members.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        if n < 2 || n_test == 0 || n_test >= n {
            return Err(MagicError::InvalidInput(format!(
                "test_fraction {test_fraction} leaves an empty {class:?} group on one side ({n} members)"
            )));
        }
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write as _;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_row_file() {
        let f = write_tmp("participant_id,diagnosis,f1,f2\na,-1,1.0,2.0\nb,-1,1.5,2.5\nc,1,0.5,3\n");
        let ds = load_dataset(f.path(), &Schema::default()).unwrap();
        assert_eq!(ds.n_subjects(), 3);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.labels, vec![Label::Control, Label::Control, Label::Patient]);
        assert_eq!(ds.features[[2, 1]], 3.0);
        assert!(ds.covariates.is_none());
    }

    #[test]
    fn rejects_invalid_label() {
        let f = write_tmp("participant_id,diagnosis,f1\na,-1,1\nb,0,1\n");
        let err = load_dataset(f.path(), &Schema::default()).unwrap_err().to_string();
        assert!(err.contains("invalid label"), "{err}");
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn rejects_duplicate_id() {
        let f = write_tmp("participant_id,diagnosis,f1\na,-1,1\na,1,1\n");
        let err = load_dataset(f.path(), &Schema::default()).unwrap_err().to_string();
        assert!(err.contains("duplicate subject id"), "{err}");
    }

    #[test]
    fn rejects_non_numeric_and_negative_and_featureless() {
        let f = write_tmp("participant_id,diagnosis,f1\na,-1,x\nb,1,1\n");
        let err = load_dataset(f.path(), &Schema::default()).unwrap_err().to_string();
        assert!(err.contains("non-numeric") && err.contains("'f1'"), "{err}");

        let f = write_tmp("participant_id,diagnosis,f1\na,-1,1\nb,1,-0.5\n");
        let err = load_dataset(f.path(), &Schema::default()).unwrap_err().to_string();
        assert!(err.contains("negative") && err.contains("row 3"), "{err}");

        let f = write_tmp("participant_id,diagnosis,cov_age\na,-1,60\nb,1,70\n");
        let err = load_dataset(f.path(), &Schema::default()).unwrap_err().to_string();
        assert!(err.contains("no feature columns"), "{err}");
    }

    #[test]
    fn separates_covariates() {
        let f = write_tmp("participant_id,diagnosis,cov_age,f1,cov_sex\na,-1,60,1,0\nb,1,70,2,1\n");
        let ds = load_dataset(f.path(), &Schema::default()).unwrap();
        let cov = ds.covariates.unwrap();
        assert_eq!(cov.names, vec!["cov_age", "cov_sex"]);
        assert_eq!(ds.feature_names, vec!["f1"]);
        assert_eq!(cov.values, array![[60.0, 0.0], [70.0, 1.0]]);
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let ds = Dataset::new(
            vec!["s1".into(), "s2".into()],
            array![[0.1 + 0.2, 1.0 / 3.0], [1e-17, 12345.678901234567]],
            vec![Label::Control, Label::Patient],
            Some(Covariates {
                names: vec!["cov_age".into()],
                values: array![[61.123456789], [70.0]],
            }),
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_dataset(&ds, &p, &Schema::default()).unwrap();
        let back = load_dataset(&p, &Schema::default()).unwrap();
        assert_eq!(back, ds);
    }

    fn with_age(ages: &[f64], feats: &[f64], labels: &[Label]) -> Dataset {
        let n = ages.len();
        Dataset::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            Array2::from_shape_vec((n, 1), feats.to_vec()).unwrap(),
            labels.to_vec(),
            Some(Covariates {
                names: vec!["cov_age".into()],
                values: Array2::from_shape_vec((n, 1), ages.to_vec()).unwrap(),
            }),
            vec!["f".into()],
        )
        .unwrap()
    }

    #[test]
    fn two_point_ols_by_hand() {
        use Label::*;
        let ds = with_age(&[60.0, 80.0, 70.0], &[1.0, 3.0, 10.0], &[Control, Control, Patient]);
        let (out, model) = residualize_covariates(&ds).unwrap();
        assert!((model.slopes[0][0] - 0.1).abs() < 1e-12);
        assert!((out.features[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((out.features[[1, 0]] - 2.0).abs() < 1e-12);
        assert!((out.features[[2, 0]] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_effect_is_removed() {
        use Label::*;
        let ages = [55.0, 60.0, 65.0, 72.0, 80.0, 58.0, 77.0];
        let labels = [Control, Control, Control, Control, Control, Patient, Patient];
        let feats: Vec<f64> = ages
            .iter()
            .zip(&labels)
            .map(|(a, l)| 2.0 * a + if l.is_patient() { 5.0 } else { 0.0 })
            .collect();
        let ds = with_age(&ages, &feats, &labels);
        let (out, _) = residualize_covariates(&ds).unwrap();
        let cn_mean = feats[..5].iter().sum::<f64>() / 5.0;
        for i in 0..5 {
            assert!((out.features[[i, 0]] - cn_mean).abs() < 1e-9);
        }
        for i in 5..7 {
            assert!((out.features[[i, 0]] - (cn_mean + 5.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn no_covariates_is_identity() {
        let ds = Dataset::new(
            vec!["a".into(), "b".into()],
            array![[1.0], [2.0]],
            vec![Label::Control, Label::Patient],
            None,
            vec!["f".into()],
        )
        .unwrap();
        let (out, model) = residualize_covariates(&ds).unwrap();
        assert_eq!(out, ds);
        assert!(model.is_identity());
        assert!(model.slopes.iter().all(Vec::is_empty));
    }

    #[test]
    fn collinear_covariates_are_named() {
        use Label::*;
        let n = 4;
        let ds = Dataset::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            array![[1.0], [2.0], [3.0], [4.0]],
            vec![Control, Control, Control, Patient],
            Some(Covariates {
                names: vec!["cov_age".into(), "cov_age_months".into()],
                values: array![[60.0, 720.0], [70.0, 840.0], [65.0, 780.0], [50.0, 600.0]],
            }),
            vec!["f".into()],
        )
        .unwrap();
        let err = residualize_covariates(&ds).unwrap_err();
        assert!(matches!(&err, MagicError::RankDeficient(c) if c == &vec!["cov_age_months".to_string()]));
    }

    fn labels(n_cn: usize, n_pt: usize) -> Vec<Label> {
        let mut l = vec![Label::Control; n_cn];
        l.extend(vec![Label::Patient; n_pt]);
        l
    }

    #[test]
    fn stratified_split_exact_proportion() {
        let y = labels(10, 10);
        let s = stratified_holdout_split(&y, 0.2, 7).unwrap();
        let test_cn = s.test.iter().filter(|&&i| y[i] == Label::Control).count();
        assert_eq!(test_cn, 2);
        assert_eq!(s.test.len(), 4);
        assert_eq!(s, stratified_holdout_split(&y, 0.2, 7).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_split_uneven_cohort_sizes() {
        let y = labels(228, 191);
        let s = stratified_holdout_split(&y, 0.2, 1).unwrap();
        let cn = s.test.iter().filter(|&&i| y[i] == Label::Control).count();
        let pt = s.test.len() - cn;
        assert!(cn == 45 || cn == 46, "{cn}");
        assert!(pt == 38 || pt == 39, "{pt}");
    }

    #[test]
    fn stratified_split_rejects_empty_side() {
        let y = labels(3, 3);
        assert!(stratified_holdout_split(&y, 0.05, 0).is_err());
        assert!(stratified_holdout_split(&y, 0.95, 0).is_err());
    }
}
