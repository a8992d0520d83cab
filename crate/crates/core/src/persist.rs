//! On-disk formats for bases, models, reports and tables.
//!
//! Reals are written with Rust's shortest round-trip formatting, so saving
//! and loading reproduces every value bit for bit. Maps are ordered, so
//! repeated saves of the same object produce identical bytes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateModel, Label};
use crate::error::{MagicError, Result};
use crate::magic::MagicModel;
use crate::opnmf::{Decomposition, InitStrategy, MultiScaleBasis, OpnmfConfig};
use crate::polytope::{Hyperplane, Membership, PolytopeModel, Scaler};
use crate::selection::StabilityReport;
use crate::simulate::{GroundTruth, Mask};
use crate::stats::StatsTable;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MagicError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| MagicError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| MagicError::io(path, e))?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| MagicError::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> MagicError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MagicError::io(path, io),
        other => MagicError::Parse {
            path: path.display().to_string(),
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| MagicError::io(path, e))
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, column: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| MagicError::Parse {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        message: format!("cannot parse '{raw}'"),
    })
}

/// Reads a CSV whose first column is a row key and the rest are reals.
/// Returns (header, keys, values).
fn read_keyed_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let mut r = csv_reader(path)?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let width = header.len().saturating_sub(1);
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != header.len() {
            return Err(MagicError::Parse {
                path: path.display().to_string(),
                row: i + 2,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        keys.push(rec[0].to_string());
        for (j, raw) in rec.iter().enumerate().skip(1) {
            values.push(parse_field::<f64>(path, i + 2, &header[j], raw)?);
        }
    }
    let m = Array2::from_shape_vec((keys.len(), width), values).expect("rectangular csv");
    Ok((header, keys, m))
}

/// Reads a two-column `(id, value)` CSV.
fn read_pairs<T: std::str::FromStr>(path: &Path) -> Result<Vec<(String, T)>> {
    let (ids, cols) = read_id_columns(path)?;
    if cols.len() != 1 {
        return Err(MagicError::Parse {
            path: path.display().to_string(),
            row: 1,
            column: String::new(),
            message: "expected two columns".into(),
        });
    }
    let (name, raw) = &cols[0];
    ids.into_iter()
        .zip(raw)
        .enumerate()
        .map(|(i, (id, v))| Ok((id, parse_field(path, i + 2, name, v)?)))
        .collect()
}

/// Reads a CSV of string columns keyed by the first column.
fn read_id_columns(path: &Path) -> Result<(Vec<String>, Vec<(String, Vec<String>)>)> {
    let mut r = csv_reader(path)?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut cols: Vec<(String, Vec<String>)> = header.iter().skip(1).map(|h| (h.clone(), Vec::new())).collect();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        ids.push(rec[0].to_string());
        for (j, col) in cols.iter_mut().enumerate() {
            col.1.push(rec.get(j + 1).unwrap_or("").to_string());
        }
    }
    Ok((ids, cols))
}

// ---------------------------------------------------------------- basis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScaleEntry {
    k: usize,
    iterations: usize,
    converged: bool,
    orthogonality_init: f64,
    orthogonality_final: f64,
    objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BasisManifest {
    scales: Vec<usize>,
    n_features: usize,
    n_subjects: usize,
    total_psc_count: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
    init: InitStrategy,
    per_scale: Vec<ScaleEntry>,
    covariate_model: Option<CovariateModel>,
}

/// A basis together with the names needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisBundle {
    pub basis: MultiScaleBasis,
    pub feature_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub config: OpnmfConfig,
    /// Covariate effects removed before decomposition, if any.
    pub covariate_model: Option<CovariateModel>,
}

fn components_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("components_K{k}.csv"))
}

fn loadings_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("loadings_K{k}.csv"))
}

pub fn save_basis(bundle: &BasisBundle, dir: &Path) -> Result<()> {
    let basis = &bundle.basis;
    if bundle.feature_names.len() != basis.n_features() || bundle.subject_ids.len() != basis.n_subjects() {
        return Err(MagicError::InvalidInput("basis names do not match its dimensions".into()));
    }
    create_dir(dir)?;
    let manifest = BasisManifest {
        scales: basis.scales.clone(),
        n_features: basis.n_features(),
        n_subjects: basis.n_subjects(),
        total_psc_count: basis.total_psc_count,
        seed: bundle.config.seed,
        tol: bundle.config.tol,
        max_iter: bundle.config.max_iter,
        init: bundle.config.init,
        per_scale: basis
            .decompositions
            .values()
            .map(|d| ScaleEntry {
                k: d.scale_k,
                iterations: d.iterations,
                converged: d.converged,
                orthogonality_init: d.orthogonality_init,
                orthogonality_final: d.orthogonality_final,
                objective_trace: d.objective_trace.clone(),
            })
            .collect(),
        covariate_model: bundle.covariate_model.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    for dec in basis.decompositions.values() {
        let k = dec.scale_k;
        let path = components_path(dir, k);
        let mut w = csv_writer(&path)?;
        let mut header = vec!["feature".to_string()];
        header.extend((1..=k).map(|j| format!("psc_{j}")));
        w.write_record(&header)?;
        for (name, row) in bundle.feature_names.iter().zip(dec.components.rows()) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        finish(w, &path)?;

        let path = loadings_path(dir, k);
        let mut w = csv_writer(&path)?;
        let mut header = vec!["component".to_string()];
        header.extend(bundle.subject_ids.iter().cloned());
        w.write_record(&header)?;
        for (j, row) in dec.loadings.rows().into_iter().enumerate() {
            let mut rec = vec![format!("psc_{}", j + 1)];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        finish(w, &path)?;
    }
    Ok(())
}

pub fn load_basis(dir: &Path) -> Result<BasisBundle> {
    let manifest: BasisManifest = read_json(&dir.join("manifest.json"))?;
    let mut decs = Vec::with_capacity(manifest.per_scale.len());
    let mut feature_names = None;
    let mut subject_ids = None;
    for entry in &manifest.per_scale {
        let path = components_path(dir, entry.k);
        let (_, names, components) = read_keyed_matrix(&path)?;
        if components.dim() != (manifest.n_features, entry.k) {
            return Err(MagicError::DimensionMismatch {
                expected: manifest.n_features * entry.k,
                found: components.len(),
            });
        }
        let path = loadings_path(dir, entry.k);
        let (header, _, loadings) = read_keyed_matrix(&path)?;
        if loadings.dim() != (entry.k, manifest.n_subjects) {
            return Err(MagicError::DimensionMismatch {
                expected: entry.k * manifest.n_subjects,
                found: loadings.len(),
            });
        }
        feature_names.get_or_insert(names);
        subject_ids.get_or_insert_with(|| header[1..].to_vec());
        decs.push(Decomposition {
            scale_k: entry.k,
            components,
            loadings,
            objective_trace: entry.objective_trace.clone(),
            iterations: entry.iterations,
            converged: entry.converged,
            orthogonality_init: entry.orthogonality_init,
            orthogonality_final: entry.orthogonality_final,
        });
    }
    let basis = MultiScaleBasis::from_decompositions(decs)?;
    Ok(BasisBundle {
        basis,
        feature_names: feature_names.unwrap_or_default(),
        subject_ids: subject_ids.unwrap_or_default(),
        config: OpnmfConfig {
            init: manifest.init,
            tol: manifest.tol,
            max_iter: manifest.max_iter,
            seed: manifest.seed,
        },
        covariate_model: manifest.covariate_model,
    })
}

// ------------------------------------------------------------- polytope

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolytopeManifest {
    c: usize,
    scale_k: usize,
    reg_c: f64,
    control_weight: f64,
    scaler: Scaler,
    joint_objective: f64,
    objective_trace: Vec<f64>,
    n_alternations: usize,
    converged: bool,
}

/// Writes `polytope.json`, `hyperplanes.csv` and `assignments.csv`.
/// `patient_ids` name the rows of the membership.
pub fn save_polytope(model: &PolytopeModel, patient_ids: &[String], dir: &Path) -> Result<()> {
    if patient_ids.len() != model.membership.len() {
        return Err(MagicError::DimensionMismatch {
            expected: model.membership.len(),
            found: patient_ids.len(),
        });
    }
    create_dir(dir)?;
    let manifest = PolytopeManifest {
        c: model.c(),
        scale_k: model.scale_k,
        reg_c: model.reg_c,
        control_weight: model.control_weight,
        scaler: model.scaler.clone(),
        joint_objective: model.joint_objective,
        objective_trace: model.objective_trace.clone(),
        n_alternations: model.n_alternations,
        converged: model.converged,
    };
    write_json(&dir.join("polytope.json"), &manifest)?;

    let path = dir.join("hyperplanes.csv");
    let mut w = csv_writer(&path)?;
    let k = model.scaler.dim();
    let mut header = vec!["face".to_string()];
    header.extend((1..=k).map(|j| format!("w_{j}")));
    header.push("bias".into());
    w.write_record(&header)?;
    for (f, h) in model.hyperplanes.iter().enumerate() {
        let mut rec = vec![f.to_string()];
        rec.extend(h.weights.iter().map(f64::to_string));
        rec.push(h.bias.to_string());
        w.write_record(&rec)?;
    }
    finish(w, &path)?;

    let path = dir.join("assignments.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["participant_id", "cluster"])?;
    for (id, a) in patient_ids.iter().zip(&model.membership.assignments) {
        w.write_record([id.clone(), a.to_string()])?;
    }
    finish(w, &path)
}

/// Returns the model and the patient ids of its membership.
pub fn load_polytope(dir: &Path) -> Result<(PolytopeModel, Vec<String>)> {
    let manifest: PolytopeManifest = read_json(&dir.join("polytope.json"))?;
    let path = dir.join("hyperplanes.csv");
    let (_, _, m) = read_keyed_matrix(&path)?;
    let k = manifest.scaler.dim();
    if m.dim() != (manifest.c, k + 1) {
        return Err(MagicError::DimensionMismatch {
            expected: manifest.c * (k + 1),
            found: m.len(),
        });
    }
    let hyperplanes = m
        .rows()
        .into_iter()
        .map(|row| Hyperplane {
            weights: Array1::from_iter(row.iter().take(k).copied()),
            bias: row[k],
        })
        .collect();
    let pairs: Vec<(String, usize)> = read_pairs(&dir.join("assignments.csv"))?;
    if pairs.iter().any(|(_, a)| *a >= manifest.c) {
        return Err(MagicError::InvalidInput("assignment outside the face range".into()));
    }
    let (ids, assignments): (Vec<String>, Vec<usize>) = pairs.into_iter().unzip();
    let model = PolytopeModel {
        hyperplanes,
        membership: Membership::new(assignments, manifest.c),
        scale_k: manifest.scale_k,
        reg_c: manifest.reg_c,
        control_weight: manifest.control_weight,
        scaler: manifest.scaler,
        joint_objective: manifest.joint_objective,
        objective_trace: manifest.objective_trace,
        n_alternations: manifest.n_alternations,
        converged: manifest.converged,
    };
    Ok((model, ids))
}

// ---------------------------------------------------------------- magic

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MagicManifest {
    c: usize,
    k_set: Vec<usize>,
    best_init_scale: usize,
    selected_predict_scale: usize,
    polytope_scales: Vec<usize>,
}

fn polytope_dir(dir: &Path, k: usize) -> PathBuf {
    dir.join("polytopes").join(format!("K{k}"))
}

/// Writes `consensus.csv`, `per_init.csv`, `trace.json`, `magic.json` and one
/// polytope directory per scale under `polytopes/`.
pub fn save_magic(model: &MagicModel, patient_ids: &[String], dir: &Path) -> Result<()> {
    if patient_ids.len() != model.consensus_labels.len() {
        return Err(MagicError::DimensionMismatch {
            expected: model.consensus_labels.len(),
            found: patient_ids.len(),
        });
    }
    create_dir(dir)?;
    let path = dir.join("consensus.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["participant_id", "subtype"])?;
    for (id, s) in patient_ids.iter().zip(&model.consensus_labels) {
        w.write_record([id.clone(), s.to_string()])?;
    }
    finish(w, &path)?;

    let path = dir.join("per_init.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["participant_id".to_string()];
    header.extend(model.per_init_labels.keys().map(|k| format!("k_{k}")));
    w.write_record(&header)?;
    for (i, id) in patient_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(model.per_init_labels.values().map(|l| l[i].to_string()));
        w.write_record(&rec)?;
    }
    finish(w, &path)?;

    let trace: BTreeMap<String, &Vec<f64>> =
        model.cycle_ari_trace.iter().map(|(k, v)| (format!("k_{k}"), v)).collect();
    write_json(&dir.join("trace.json"), &trace)?;
    write_json(
        &dir.join("magic.json"),
        &MagicManifest {
            c: model.c,
            k_set: model.k_set.clone(),
            best_init_scale: model.best_init_scale,
            selected_predict_scale: model.selected_predict_scale,
            polytope_scales: model.per_scale_polytopes.keys().copied().collect(),
        },
    )?;
    for (&k, p) in &model.per_scale_polytopes {
        save_polytope(p, patient_ids, &polytope_dir(dir, k))?;
    }
    Ok(())
}

/// Returns the model and its patient ids.
pub fn load_magic(dir: &Path) -> Result<(MagicModel, Vec<String>)> {
    let manifest: MagicManifest = read_json(&dir.join("magic.json"))?;
    let consensus: Vec<(String, usize)> = read_pairs(&dir.join("consensus.csv"))?;
    let (ids, consensus_labels): (Vec<String>, Vec<usize>) = consensus.into_iter().unzip();

    let path = dir.join("per_init.csv");
    let (init_ids, cols) = read_id_columns(&path)?;
    if init_ids != ids {
        return Err(MagicError::InvalidInput("per_init.csv and consensus.csv list different patients".into()));
    }
    let mut per_init_labels = BTreeMap::new();
    for (name, raw) in cols {
        let k: usize = parse_field(&path, 1, &name, name.trim_start_matches("k_"))?;
        let labels = raw
            .iter()
            .enumerate()
            .map(|(i, v)| parse_field(&path, i + 2, &name, v))
            .collect::<Result<Vec<usize>>>()?;
        per_init_labels.insert(k, labels);
    }

    let trace: BTreeMap<String, Vec<f64>> = read_json(&dir.join("trace.json"))?;
    let cycle_ari_trace = trace
        .into_iter()
        .map(|(name, v)| Ok((parse_field(&dir.join("trace.json"), 0, &name, name.trim_start_matches("k_"))?, v)))
        .collect::<Result<BTreeMap<usize, Vec<f64>>>>()?;

    let mut per_scale_polytopes = BTreeMap::new();
    for &k in &manifest.polytope_scales {
        let (p, pids) = load_polytope(&polytope_dir(dir, k))?;
        if pids != ids {
            return Err(MagicError::InvalidInput(format!("polytope K{k} lists different patients")));
        }
        per_scale_polytopes.insert(k, p);
    }
    if !per_scale_polytopes.contains_key(&manifest.selected_predict_scale) {
        return Err(MagicError::InvalidInput(format!(
            "no polytope saved for the prediction scale {}",
            manifest.selected_predict_scale
        )));
    }
    let model = MagicModel {
        c: manifest.c,
        k_set: manifest.k_set,
        per_init_labels,
        consensus_labels,
        per_scale_polytopes,
        cycle_ari_trace,
        best_init_scale: manifest.best_init_scale,
        selected_predict_scale: manifest.selected_predict_scale,
    };
    Ok((model, ids))
}

/// Reads `participant_id,subtype` assignments, e.g. a saved `consensus.csv`.
pub fn load_assignments(path: &Path) -> Result<Vec<(String, usize)>> {
    read_pairs(path)
}

// ------------------------------------------------------------ stability

/// Writes `stability.json` and the long-format `stability.csv`.
pub fn save_stability(report: &StabilityReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join("stability.json"), report)?;
    let path = dir.join("stability.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["c", "k", "mean_ari", "std_ari"])?;
    for (i, c) in report.c_values.iter().enumerate() {
        for (j, k) in report.k_values.iter().enumerate() {
            w.write_record([
                c.to_string(),
                k.to_string(),
                report.mean_ari[i][j].to_string(),
                report.std_ari[i][j].to_string(),
            ])?;
        }
    }
    finish(w, &path)
}

pub fn load_stability(dir: &Path) -> Result<StabilityReport> {
    read_json(&dir.join("stability.json"))
}

// ---------------------------------------------------------------- stats

pub fn save_stats_table(table: &StatsTable, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "scale_k",
        "component_index",
        "subtype",
        "n_subtype",
        "n_cn",
        "t",
        "p",
        "bh_reject",
        "cohens_d",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.scale_k.to_string(),
            r.component_index.to_string(),
            r.subtype.to_string(),
            r.n_subtype.to_string(),
            r.n_cn.to_string(),
            r.t.to_string(),
            r.p.to_string(),
            u8::from(r.bh_reject).to_string(),
            r.cohens_d.to_string(),
        ])?;
    }
    finish(w, path)
}

/// `group` is `CN` for controls and the subtype id for patients.
pub fn save_mds(ids: &[String], groups: &[String], coords: &Array2<f64>, path: &Path) -> Result<()> {
    if ids.len() != coords.nrows() || groups.len() != coords.nrows() {
        return Err(MagicError::DimensionMismatch {
            expected: coords.nrows(),
            found: ids.len().min(groups.len()),
        });
    }
    let mut w = csv_writer(path)?;
    let mut header = vec!["participant_id".to_string(), "group".to_string()];
    header.extend((1..=coords.ncols()).map(|d| format!("dim{d}")));
    w.write_record(&header)?;
    for ((id, g), row) in ids.iter().zip(groups).zip(coords.rows()) {
        let mut rec = vec![id.clone(), g.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

// ------------------------------------------------------------- simulate

/// Writes `truth.csv` (participant_id, subtype_name) and `masks.csv`
/// (row, col, mask_name; one line per masked cell).
pub fn save_ground_truth(truth: &GroundTruth, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("truth.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["participant_id", "subtype_name"])?;
    for (id, name) in &truth.subtype_of_patient {
        w.write_record([id, name])?;
    }
    finish(w, &path)?;

    let path = dir.join("masks.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["row", "col", "mask_name"])?;
    for m in &truth.masks {
        for r in 0..m.rows {
            for c in (0..m.cols).filter(|&c| m.contains(r, c)) {
                w.write_record([r.to_string(), c.to_string(), m.name.clone()])?;
            }
        }
    }
    finish(w, &path)
}

/// Reads the files written by [`save_ground_truth`] for a `rows × cols` grid.
pub fn load_ground_truth(dir: &Path, rows: usize, cols: usize) -> Result<GroundTruth> {
    let subtype_of_patient = read_pairs::<String>(&dir.join("truth.csv"))?.into_iter().collect();
    let path = dir.join("masks.csv");
    let mut r = csv_reader(&path)?;
    let mut masks: Vec<Mask> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let row: usize = parse_field(&path, i + 2, "row", &rec[0])?;
        let col: usize = parse_field(&path, i + 2, "col", &rec[1])?;
        if row >= rows || col >= cols {
            return Err(MagicError::InvalidInput(format!("mask cell ({row},{col}) outside the grid")));
        }
        let name = &rec[2];
        let idx = match masks.iter().position(|m| m.name == name) {
            Some(idx) => idx,
            None => {
                masks.push(Mask {
                    name: name.to_string(),
                    rows,
                    cols,
                    cells: vec![false; rows * cols],
                });
                masks.len() - 1
            }
        };
        masks[idx].cells[row * cols + col] = true;
    }
    Ok(GroundTruth { subtype_of_patient, masks })
}

/// Labels written as `-1` / `1`, with an optional predicted subtype.
pub fn save_predictions(
    ids: &[String],
    predicted: &[Label],
    subtypes: &[usize],
    path: &Path,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["participant_id", "predicted_label", "subtype"])?;
    for ((id, l), s) in ids.iter().zip(predicted).zip(subtypes) {
        w.write_record([id.clone(), l.to_string(), s.to_string()])?;
    }
    finish(w, path)
}
