use magic_core::dataset::{residualize_covariates, Label};
use magic_core::magic::{fit_magic, predict_magic};
use magic_core::opnmf::{fit_multiscale, fit_opnmf, OpnmfConfig};
use magic_core::persist::{load_basis, load_magic, save_basis, save_magic, BasisBundle};
use magic_core::selection::adjusted_rand_index;
use magic_core::simulate::{generate_cohort, SimConfig};
use magic_core::stats::{subtype_mapping, TTestKind};
use magic_core::{PolytopeConfig, ScaleSchedule};
use ndarray::Array2;
use proptest::prelude::*;

fn small_cohort() -> SimConfig {
    SimConfig {
        n_cn: 40,
        n_pt: 40,
        grid: (12, 12),
        seed: 11,
        ..SimConfig::default()
    }
}

#[test]
fn planted_subtypes_survive_a_save_and_reload() {
    let (raw, truth) = generate_cohort(&small_cohort()).unwrap();
    let (ds, cov_model) = residualize_covariates(&raw).unwrap();
    let scales = [8, 12, 16];
    let basis = fit_multiscale(ds.feature_major(), &scales, &OpnmfConfig::default()).unwrap();
    let schedule = ScaleSchedule {
        k_set: scales.to_vec(),
        ..ScaleSchedule::default()
    };
    let model = fit_magic(&basis, &ds.labels, 2, &schedule, &PolytopeConfig::default(), 3).unwrap();

    let patient_ids: Vec<String> = ds.patient_indices().into_iter().map(|i| ds.subject_ids[i].clone()).collect();
    let planted = truth.subtype_indices(&patient_ids).unwrap();
    let ari = adjusted_rand_index(&model.consensus_labels, &planted).unwrap();
    assert!(ari >= 0.8, "ARI {ari}");

    let table = subtype_mapping(&basis, &ds.labels, &model.consensus_labels, 0.05, TTestKind::Pooled).unwrap();
    assert_eq!(table.rows.len(), 2 * basis.total_psc_count);
    assert!(table.survivors.iter().all(|&n| n > 0));

    let dir = tempfile::tempdir().unwrap();
    let bundle = BasisBundle {
        basis,
        feature_names: ds.feature_names.clone(),
        subject_ids: ds.subject_ids.clone(),
        config: OpnmfConfig::default(),
        covariate_model: Some(cov_model),
    };
    save_basis(&bundle, &dir.path().join("basis")).unwrap();
    save_magic(&model, &patient_ids, &dir.path().join("model")).unwrap();
    let bundle_back = load_basis(&dir.path().join("basis")).unwrap();
    let (model_back, ids_back) = load_magic(&dir.path().join("model")).unwrap();
    assert_eq!(bundle_back, bundle);
    assert_eq!(model_back, model);
    assert_eq!(ids_back, patient_ids);

    // Reloaded models predict exactly as the originals on fresh subjects.
    let (new_raw, _) = generate_cohort(&SimConfig { seed: 12, ..small_cohort() }).unwrap();
    let new = bundle_back
        .covariate_model
        .as_ref()
        .unwrap()
        .apply(&new_raw.features, new_raw.covariates.as_ref())
        .unwrap();
    let before = predict_magic(&model, &bundle.basis, new.view()).unwrap();
    let after = predict_magic(&model_back, &bundle_back.basis, new.view()).unwrap();
    assert_eq!(before, after);
    let hits = before.0.iter().zip(&new_raw.labels).filter(|(p, y)| p == y).count();
    assert!(hits as f64 / new_raw.labels.len() as f64 > 0.8);
    assert!(before.0.contains(&Label::Control) && before.0.contains(&Label::Patient));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn opnmf_invariants(
        d in 4usize..30,
        n in 4usize..30,
        k in 1usize..4,
        values in proptest::collection::vec(0.0f64..10.0, 900),
    ) {
        let x = Array2::from_shape_fn((d, n), |(i, j)| values[i * 30 + j]);
        let cfg = OpnmfConfig { max_iter: 300, ..OpnmfConfig::default() };
        let dec = fit_opnmf(x.view(), k, &cfg).unwrap();
        let trace = &dec.objective_trace;
        let slack = 1e-9 * trace[0].max(1.0);
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0] + slack));
        prop_assert!(dec.components.iter().all(|&v| v >= 0.0));
        for col in dec.components.columns() {
            let norm = col.dot(&col).sqrt();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-12);
        }
        prop_assert_eq!(&dec.loadings, &dec.components.t().dot(&x));
    }
}
