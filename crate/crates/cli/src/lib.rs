//! The `magic` command line: a file-based pipeline driver.
//!
//! Stages exchange data through directories: `simulate` writes a dataset,
//! `decompose` turns it into a multi-scale basis, `select` and `cluster`
//! consume the basis, `stats` maps the clusters back onto it and `predict`
//! applies a fitted model to new subjects.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use magic_core::dataset::{load_dataset, load_table, residualize_covariates, save_dataset, Dataset, Schema};
use magic_core::magic::{fit_magic, predict_magic, predict_with_polytope};
use magic_core::opnmf::{fit_multiscale, InitStrategy};
use magic_core::persist::{
    load_basis, load_magic, save_basis, save_ground_truth, save_magic, save_mds, save_predictions, save_stability,
    save_stats_table, BasisBundle,
};
use magic_core::polytope::{balanced_accuracy, fit_random_split_polytope};
use magic_core::selection::{select_num_clusters, stability_analysis, BasisSource, StabilityConfig};
use magic_core::simulate::{generate_cohort, SimConfig};
use magic_core::stats::{mds_embed, subtype_mapping, TTestKind};
use magic_core::{Label, MagicError, OpnmfConfig, PolytopeConfig, ScaleSchedule};

#[derive(Parser)]
#[command(name = "magic", version, about = "Multi-scale semi-supervised clustering of disease heterogeneity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Root seed for every random choice of the stage.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with planted subtypes.
    Simulate(SimulateArgs),
    /// Fit OPNMF at several scales.
    Decompose(DecomposeArgs),
    /// Estimate clustering stability over the number of clusters.
    Select(SelectArgs),
    /// Fit the multi-scale model.
    Cluster(ClusterArgs),
    /// Compare each subtype against controls, PSC by PSC.
    Stats(StatsArgs),
    /// Apply a fitted model to new subjects.
    Predict(PredictArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 100)]
    n_cn: usize,
    #[arg(long, default_value_t = 100)]
    n_pt: usize,
    #[arg(long, default_value_t = 20)]
    rows: usize,
    #[arg(long, default_value_t = 20)]
    cols: usize,
    /// Voxel-wise noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Standard deviation of the per-subject global scale factor.
    #[arg(long, default_value_t = 0.05)]
    subject_sd: f64,
    /// Fractional intensity loss inside a patient's mask.
    #[arg(long, default_value_t = 0.10)]
    atrophy: f64,
    /// Change per year of age, as a fraction of the base field.
    #[arg(long, default_value_t = -0.003, allow_hyphen_values = true)]
    age_slope: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Nndsvd,
    Random,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2, conflicts_with = "k_set")]
    k_min: usize,
    #[arg(long, default_value_t = 60, conflicts_with = "k_set")]
    k_max: usize,
    /// Scales as `start:end:step` (inclusive).
    #[arg(long, value_parser = parse_k_set)]
    k_set: Option<KSet>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Nndsvd)]
    init: InitArg,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    #[arg(long, default_value_t = 2)]
    c_min: usize,
    #[arg(long, default_value_t = 8)]
    c_max: usize,
    /// Scales evaluated, as `start:end:step`.
    #[arg(long, value_parser = parse_k_set, default_value = "25:60:5")]
    k_set: KSet,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    /// Fraction of each class held out per repetition.
    #[arg(long, default_value_t = 0.2)]
    test_size: f64,
    /// Scales averaged when choosing c; defaults to `--k-set`.
    #[arg(long, value_parser = parse_k_set)]
    k_plateau: Option<KSet>,
    /// Refit OPNMF on every repetition's training subjects.
    #[arg(long)]
    refit_basis: bool,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    /// Number of subtypes.
    #[arg(long)]
    c: usize,
    #[arg(long, value_parser = parse_k_set, default_value = "25:60:5")]
    k_set: KSet,
    #[arg(long, default_value_t = 10)]
    max_cycles: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum TTestArg {
    Pooled,
    Welch,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    /// Directory written by `cluster`.
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = TTestArg::Pooled)]
    ttest: TTestArg,
    /// MDS dimensions.
    #[arg(long, default_value_t = 2)]
    dims: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `cluster`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also fit a two-face polytope on a random patient split of these sizes.
    #[arg(long, value_parser = parse_split)]
    compare_split: Option<(usize, usize)>,
    /// Fail unless the input carries diagnosis labels.
    #[arg(long)]
    balanced_accuracy: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct KSet(Vec<usize>);

fn parse_k_set(s: &str) -> std::result::Result<KSet, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (start, end, step) = match nums[..] {
        [k] => (k, k, 1),
        [a, b] => (a, b, 1),
        [a, b, s] => (a, b, s),
        _ => return Err("expected start:end[:step]".into()),
    };
    if start == 0 || step == 0 || start > end {
        return Err(format!("invalid scale range {s}"));
    }
    Ok(KSet((start..=end).step_by(step).collect()))
}

fn parse_split(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected n1,n2")?;
    let n1 = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let n2 = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    if n1 == 0 || n2 == 0 {
        return Err("split sizes must be positive".into());
    }
    Ok((n1, n2))
}

/// Argument combinations that only become invalid once inputs are read.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<MagicError>() {
        Some(MagicError::Config(_)) => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status: 0 on success, 1 on data errors, 2 on usage errors.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return u8::try_from(err.exit_code()).unwrap_or(2);
        }
    };
    let jobs = match &cli.command {
        Command::Simulate(a) => a.common.jobs,
        Command::Decompose(a) => a.common.jobs,
        Command::Select(a) => a.common.jobs,
        Command::Cluster(a) => a.common.jobs,
        Command::Stats(a) => a.common.jobs,
        Command::Predict(a) => a.common.jobs,
    };
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs as usize)
        .build()
        .context("building worker pool")
        .and_then(|pool| pool.install(|| dispatch(cli.command)));
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Select(a) => cmd_select(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Predict(a) => cmd_predict(a),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = SimConfig {
        n_cn: a.n_cn,
        n_pt: a.n_pt,
        grid: (a.rows, a.cols),
        noise_sd: a.noise,
        subject_sd: a.subject_sd,
        atrophy_fraction: a.atrophy,
        age_slope: a.age_slope,
        seed: a.common.seed,
        ..SimConfig::default()
    };
    let (ds, truth) = generate_cohort(&cfg)?;
    create_out(&a.common.out)?;
    save_dataset(&ds, &a.common.out.join("dataset.csv"), &Schema::default())?;
    save_ground_truth(&truth, &a.common.out)?;
    println!(
        "{} controls, {} patients, {} features -> {}",
        a.n_cn,
        a.n_pt,
        ds.n_features(),
        a.common.out.display()
    );
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let ds = load_dataset(&a.data, &Schema::default())?;
    let scales = match a.k_set {
        Some(KSet(k)) => k,
        None if a.k_min >= 1 && a.k_min <= a.k_max => (a.k_min..=a.k_max).collect(),
        None => return Err(usage(format!("--k-min {} exceeds --k-max {}", a.k_min, a.k_max))),
    };
    let (resid, model) = residualize_covariates(&ds)?;
    let cfg = OpnmfConfig {
        init: match a.init {
            InitArg::Nndsvd => InitStrategy::Nndsvd,
            InitArg::Random => InitStrategy::Random,
        },
        tol: a.tol,
        max_iter: a.max_iter,
        seed: a.common.seed,
    };
    let basis = fit_multiscale(resid.feature_major(), &scales, &cfg)?;
    let n_scales = basis.scales.len();
    let total = basis.total_psc_count;
    let bundle = BasisBundle {
        basis,
        feature_names: ds.feature_names.clone(),
        subject_ids: ds.subject_ids.clone(),
        config: cfg,
        covariate_model: (!model.is_identity()).then_some(model),
    };
    save_basis(&bundle, &a.common.out)?;
    println!("{n_scales} decompositions, {total} PSCs -> {}", a.common.out.display());
    Ok(())
}

/// Loads the dataset and checks that it lists the basis subjects in order.
fn load_aligned(data: &Path, bundle: &BasisBundle) -> Result<Dataset> {
    let ds = load_dataset(data, &Schema::default())?;
    if ds.subject_ids != bundle.subject_ids {
        bail!(
            "{} does not list the {} subjects of the basis in the same order",
            data.display(),
            bundle.subject_ids.len()
        );
    }
    Ok(ds)
}

fn patient_ids(ds: &Dataset) -> Vec<String> {
    ds.patient_indices().into_iter().map(|i| ds.subject_ids[i].clone()).collect()
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    if a.c_min == 0 || a.c_min > a.c_max {
        return Err(usage(format!("invalid cluster range {}..{}", a.c_min, a.c_max)));
    }
    let bundle = load_basis(&a.basis)?;
    let ds = load_aligned(&a.data, &bundle)?;
    let plateau = a.k_plateau.unwrap_or_else(|| a.k_set.clone()).0;
    if let Some(k) = plateau.iter().find(|k| !a.k_set.0.contains(k)) {
        return Err(usage(format!("plateau scale {k} is not in --k-set")));
    }
    let cfg = StabilityConfig {
        c_values: (a.c_min..=a.c_max).collect(),
        k_values: a.k_set.0,
        repetitions: a.repetitions,
        test_fraction: a.test_size,
        polytope: PolytopeConfig::default(),
        seed: a.common.seed,
    };
    let report = if a.refit_basis {
        // Folds are decomposed from the same covariate-adjusted features the
        // full basis saw.
        let features = match &bundle.covariate_model {
            Some(m) => m.apply(&ds.features, ds.covariates.as_ref())?,
            None => ds.features.clone(),
        };
        let adjusted = Dataset { features, ..ds };
        stability_analysis(&adjusted, BasisSource::Refit(&bundle.config), &cfg)?
    } else {
        stability_analysis(&ds, BasisSource::Fixed(&bundle.basis), &cfg)?
    };
    save_stability(&report, &a.common.out)?;
    let c = select_num_clusters(&report, &plateau)?;
    println!("selected c = {c}");
    Ok(())
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let bundle = load_basis(&a.basis)?;
    let ds = load_aligned(&a.data, &bundle)?;
    let schedule = ScaleSchedule {
        k_set: a.k_set.0,
        max_cycles: a.max_cycles,
        restarts_at_init: a.restarts,
        ..ScaleSchedule::default()
    };
    let cfg = PolytopeConfig {
        restarts: a.restarts,
        ..PolytopeConfig::default()
    };
    let model = fit_magic(&bundle.basis, &ds.labels, a.c, &schedule, &cfg, a.common.seed)?;
    save_magic(&model, &patient_ids(&ds), &a.common.out)?;
    let sizes: Vec<String> = (0..a.c)
        .map(|s| model.consensus_labels.iter().filter(|&&l| l == s).count().to_string())
        .collect();
    println!(
        "subtype sizes {}; best init K={}, prediction scale K={}",
        sizes.join("/"),
        model.best_init_scale,
        model.selected_predict_scale
    );
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let bundle = load_basis(&a.basis)?;
    let ds = load_aligned(&a.data, &bundle)?;
    let (model, ids) = load_magic(&a.clusters)?;
    if ids != patient_ids(&ds) {
        bail!("{} was fitted on a different set of patients", a.clusters.display());
    }
    let kind = match a.ttest {
        TTestArg::Pooled => TTestKind::Pooled,
        TTestArg::Welch => TTestKind::Welch,
    };
    let table = subtype_mapping(&bundle.basis, &ds.labels, &model.consensus_labels, a.alpha, kind)?;
    create_out(&a.common.out)?;
    save_stats_table(&table, &a.common.out.join("stats.csv"))?;

    let features = bundle.basis.subject_features(model.selected_predict_scale)?;
    let coords = mds_embed(features.view(), a.dims)?;
    let mut next_patient = model.consensus_labels.iter();
    let groups: Vec<String> = ds
        .labels
        .iter()
        .map(|l| match l {
            Label::Control => "CN".to_string(),
            Label::Patient => next_patient.next().expect("one subtype per patient").to_string(),
        })
        .collect();
    save_mds(&ds.subject_ids, &groups, &coords, &a.common.out.join("mds.csv"))?;
    for (s, n) in table.survivors.iter().enumerate() {
        println!("subtype {s}: {n} of {} PSCs survive BH at alpha {}", bundle.basis.total_psc_count, a.alpha);
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let bundle = load_basis(&a.basis)?;
    let (model, train_patients) = load_magic(&a.model)?;
    if let Some((n1, n2)) = a.compare_split {
        let n_pt = train_patients.len();
        if n1 + n2 != n_pt {
            return Err(usage(format!(
                "--compare-split {n1},{n2} must sum to the {n_pt} training patients"
            )));
        }
    }
    let table = load_table(&a.data, &Schema::default())?;
    if a.balanced_accuracy && table.labels.is_none() {
        return Err(usage(format!(
            "--balanced-accuracy needs a diagnosis column in {}",
            a.data.display()
        )));
    }
    if table.feature_names != bundle.feature_names {
        bail!("{} does not have the basis feature columns", a.data.display());
    }
    let features = match &bundle.covariate_model {
        Some(m) => m.apply(&table.features, table.covariates.as_ref())?,
        None => table.features.clone(),
    };
    let (predicted, faces) = predict_magic(&model, &bundle.basis, features.view())?;
    create_out(&a.common.out)?;
    save_predictions(&table.subject_ids, &predicted, &faces, &a.common.out.join("predictions.csv"))?;

    let k = model.selected_predict_scale;
    let mut summary = json!({
        "n_subjects": table.subject_ids.len(),
        "predict_scale": k,
    });
    let magic_ba = match &table.labels {
        Some(y) => Some(balanced_accuracy(y, &predicted)?),
        None => None,
    };
    if let Some(ba) = magic_ba {
        summary["balanced_accuracy"] = json!(ba);
        println!("balanced accuracy {ba:.4}");
    }

    if let (Some((n1, n2)), Some(y)) = (a.compare_split, &table.labels) {
        let train_labels: Vec<Label> = bundle
            .subject_ids
            .iter()
            .map(|id| if train_patients.contains(id) { Label::Patient } else { Label::Control })
            .collect();
        let train = bundle.basis.subject_features(k)?;
        let split = fit_random_split_polytope(
            train.view(),
            &train_labels,
            (n1, n2),
            &PolytopeConfig::default(),
            a.common.seed,
        )?;
        let (split_pred, _) = predict_with_polytope(&split, bundle.basis.get(k)?, features.view())?;
        let ba = balanced_accuracy(y, &split_pred)?;
        summary["random_split_balanced_accuracy"] = json!(ba);
        println!("random-split polytope balanced accuracy {ba:.4}");
    }
    let path = a.common.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
