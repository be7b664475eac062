//! End-to-end experiment orchestration: the cluster-wise experiment
//! (standardize, PCA, elbow, K-Means, per-cluster models) and the age-group
//! experiment, plus report writing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::config::{AppConfig, PipelineConfig};
use crate::kmeans::{elbow_scan, kmeans_fit, suggest_k, ElbowCurve, KMeansError};
use crate::lasso::{
    cross_validate_lambda, fit_lasso_path_with_grid, predict_proba, CvResult, LambdaRule,
    LassoError,
};
use crate::metrics::{auc_trapezoid, confusion_at_threshold, roc_curve, tnr, tpr, MetricsError, RocCurve};
use crate::pca::{fit_pca, project, PcaError};
use crate::preprocess::{
    apply_standardizer, encode_design_matrix, fit_standardizer, impute_mother_age_clusterwise,
    impute_mother_age_global, outcome_labels, split_train_test, DesignMatrix, PreprocessError,
    CLUSTERING_COLUMNS,
};
use crate::schema::{validate_cohort, Cohort};
use crate::seeding::{derive_seed, derive_seed_for_rows};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// CLI exit code: 1 data, 2 config, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Data(_) | PipelineError::Io(_) => 1,
            PipelineError::Config(_) => 2,
            PipelineError::Numerical(_) => 3,
        }
    }
}

fn data_err<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{}: {}", stage, e))
}

fn numerical_err<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> PipelineError + '_ {
    move |e| PipelineError::Numerical(format!("{}: {}", stage, e))
}

/// One trained model's report row plus the artifacts dumped alongside it.
#[derive(Debug, Clone)]
pub struct ModelRow {
    pub model_id: String,
    pub n_train: usize,
    pub n_test: usize,
    pub selected_lambda: f64,
    pub auc: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub threshold: f64,
    pub intercept: f64,
    pub coefficients: Vec<(String, f64)>,
    pub roc: RocCurve,
    pub cv: CvResult,
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_digest: String,
    pub k_chosen: Option<usize>,
    pub components_selected: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: String,
    pub rows: Vec<ModelRow>,
    pub elbow: Option<ElbowCurve>,
    pub assignments: Option<Vec<usize>>,
    pub provenance: Provenance,
    pub notes: Vec<String>,
}

fn check_cohort(cohort: &Cohort) -> Result<(), PipelineError> {
    let violations = validate_cohort(cohort);
    if violations.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = violations
        .iter()
        .take(5)
        .map(|v| format!("record {} field {}: {}", v.record_index, v.field, v.description))
        .collect();
    Err(PipelineError::Data(format!(
        "cohort has {} invariant violations ({}{})",
        violations.len(),
        shown.join("; "),
        if violations.len() > 5 { "; ..." } else { "" }
    )))
}

fn lambda_rule(cfg: &PipelineConfig) -> Result<LambdaRule, PipelineError> {
    match cfg.lambda_rule.as_str() {
        "min" => Ok(LambdaRule::Min),
        "1se" => Ok(LambdaRule::OneSe),
        other => Err(PipelineError::Config(format!(
            "lambda_rule must be \"min\" or \"1se\", got {:?}",
            other
        ))),
    }
}

/// Trains one LASSO model on the given cohort rows: 70/30 split, CV lambda
/// selection, refit on the training split, test-set metrics. Sub-seeds are
/// keyed by the row set, so identical row sets give identical models.
fn train_model(
    model_id: &str,
    x: &DesignMatrix,
    y: &[f64],
    rows: &[usize],
    cfg: &PipelineConfig,
    master_seed: u64,
) -> Result<ModelRow, PipelineError> {
    let stage = format!("model {}", model_id);
    let rule = lambda_rule(cfg)?;
    let n = rows.len();
    let labels: Vec<u8> = rows.iter().map(|&i| y[i] as u8).collect();
    let split_seed = derive_seed_for_rows(master_seed, "model-split", rows);
    let cv_seed = derive_seed_for_rows(master_seed, "model-cv", rows);
    let split = split_train_test(
        n,
        cfg.train_fraction,
        split_seed,
        if cfg.stratify { Some(&labels) } else { None },
    )
    .map_err(data_err(&stage))?;

    let take = |idx: &[usize]| -> (Array2<f64>, Vec<f64>) {
        let mut m = Array2::zeros((idx.len(), x.n_cols()));
        let mut v = Vec::with_capacity(idx.len());
        for (out_i, &local) in idx.iter().enumerate() {
            let global = rows[local];
            m.row_mut(out_i).assign(&x.data.row(global));
            v.push(y[global]);
        }
        (m, v)
    };
    let (x_train, y_train) = take(&split.train);
    let (x_test, y_test) = take(&split.test);

    let cv = cross_validate_lambda(
        &x_train.view(),
        &y_train,
        cfg.n_lambda,
        cfg.lambda_min_ratio,
        cfg.folds,
        cv_seed,
        rule,
    )
    .map_err(data_err(&stage))?;
    let path =
        fit_lasso_path_with_grid(&x_train.view(), &y_train, &cv.lambdas).map_err(data_err(&stage))?;
    let fit = path.fits[cv.selected_index].clone();

    let probs = predict_proba(&fit, &x_test.view());
    let test_labels: Vec<u8> = y_test.iter().map(|&v| v as u8).collect();
    let roc = roc_curve(&probs, &test_labels).map_err(data_err(&stage))?;
    let auc = auc_trapezoid(&roc);
    let cm = confusion_at_threshold(&probs, &test_labels, cfg.threshold);
    let rate_err = |e: MetricsError| PipelineError::Data(format!("{}: {}", stage, e));
    Ok(ModelRow {
        model_id: model_id.to_string(),
        n_train: split.train.len(),
        n_test: split.test.len(),
        selected_lambda: cv.selected_lambda,
        auc,
        tpr: tpr(&cm).map_err(rate_err)?,
        tnr: tnr(&cm).map_err(rate_err)?,
        threshold: cfg.threshold,
        intercept: fit.intercept,
        coefficients: x
            .column_names
            .iter()
            .cloned()
            .zip(fit.coefficients.iter().copied())
            .collect(),
        roc,
        cv,
    })
}

/// The cluster-wise experiment: standardize the clustering variables, PCA +
/// Kaiser, elbow-selected (or overridden) K-Means, then one model for the
/// entire population and one per cluster.
pub fn run_cluster_experiment(
    cohort: &Cohort,
    cfg: &AppConfig,
    master_seed: u64,
    config_digest: &str,
) -> Result<ExperimentReport, PipelineError> {
    check_cohort(cohort)?;
    let pcfg = &cfg.pipeline;
    lambda_rule(pcfg)?;

    // Clustering path: global imputation, the seven clustering variables,
    // z-scores, PCA projection.
    let imputed = impute_mother_age_global(cohort).map_err(data_err("imputation"))?;
    let encoded = encode_design_matrix(&imputed).map_err(data_err("encoding"))?;
    let m7 = encoded
        .select_columns(&CLUSTERING_COLUMNS)
        .map_err(data_err("clustering variables"))?;
    let standardizer =
        fit_standardizer(&m7, &CLUSTERING_COLUMNS).map_err(data_err("standardization"))?;
    let z7 = apply_standardizer(&standardizer, &m7).map_err(data_err("standardization"))?;
    let pca = fit_pca(&z7).map_err(numerical_err("pca"))?;
    let n_components = pca.n_selected;
    if n_components == 0 {
        return Err(PipelineError::Numerical(
            "pca: no component has eigenvalue > 1 (NoComponents)".into(),
        ));
    }
    let scores = project(&pca, &z7, n_components).map_err(numerical_err("pca projection"))?;

    let curve = elbow_scan(
        &scores.view(),
        pcfg.k_max.min(scores.nrows()),
        pcfg.restarts,
        derive_seed(master_seed, "elbow", 0),
    )
    .map_err(numerical_err("elbow scan"))?;
    let k = match pcfg.k {
        Some(k) if k >= 1 && k <= scores.nrows() => k,
        Some(k) => {
            return Err(PipelineError::Config(format!(
                "k override {} outside 1..={}",
                k,
                scores.nrows()
            )))
        }
        None => suggest_k(&curve).map_err(numerical_err("elbow suggestion"))?,
    };
    let km = kmeans_fit(
        &scores.view(),
        k,
        pcfg.restarts,
        pcfg.max_iter,
        derive_seed(master_seed, "kmeans", 0),
    )
    .map_err(numerical_err("kmeans"))?;

    // Modelling path: cluster-wise imputation on the raw cohort, then the
    // full encoded predictor set.
    let cohort_cw = impute_mother_age_clusterwise(cohort, &km.assignment)
        .map_err(data_err("cluster-wise imputation"))?;
    let x = encode_design_matrix(&cohort_cw).map_err(data_err("encoding"))?;
    let y = outcome_labels(&cohort_cw);

    let n = x.n_rows();
    let mut rows = Vec::with_capacity(k + 1);
    let all: Vec<usize> = (0..n).collect();
    rows.push(train_model("entire_population", &x, &y, &all, pcfg, master_seed)?);
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| km.assignment[i] == c).collect();
        let id = format!("cluster_{}", c + 1);
        rows.push(train_model(&id, &x, &y, &members, pcfg, master_seed)?);
    }

    Ok(ExperimentReport {
        experiment: "cluster".into(),
        rows,
        elbow: Some(curve),
        assignments: Some(km.assignment),
        provenance: Provenance {
            master_seed,
            config_digest: config_digest.to_string(),
            k_chosen: Some(k),
            components_selected: Some(n_components),
        },
        notes: Vec::new(),
    })
}

/// Inclusive age bands, in report order.
pub const AGE_BANDS: [(&str, u8, u8); 6] = [
    ("newborn", 0, 0),
    ("newborn_to_five", 0, 5),
    ("newborn_to_ten", 0, 10),
    ("newborn_to_fifteen", 0, 15),
    ("six_to_ten", 6, 10),
    ("eleven_to_fifteen", 11, 15),
];

/// The age-group experiment: six age-filtered models, no clustering stage.
pub fn run_age_group_experiment(
    cohort: &Cohort,
    cfg: &AppConfig,
    master_seed: u64,
    config_digest: &str,
) -> Result<ExperimentReport, PipelineError> {
    check_cohort(cohort)?;
    let pcfg = &cfg.pipeline;
    lambda_rule(pcfg)?;

    let imputed = impute_mother_age_global(cohort).map_err(data_err("imputation"))?;
    let x = encode_design_matrix(&imputed).map_err(data_err("encoding"))?;
    let y = outcome_labels(&imputed);

    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for (id, lo, hi) in AGE_BANDS {
        let members: Vec<usize> = cohort
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| (lo..=hi).contains(&r.child_age))
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            notes.push(format!("{}: EmptyGroup (no records with age {}..={})", id, lo, hi));
            continue;
        }
        rows.push(train_model(id, &x, &y, &members, pcfg, master_seed)?);
    }

    Ok(ExperimentReport {
        experiment: "agegroups".into(),
        rows,
        elbow: None,
        assignments: None,
        provenance: Provenance {
            master_seed,
            config_digest: config_digest.to_string(),
            k_chosen: None,
            components_selected: None,
        },
        notes,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    master_seed: u64,
    config_digest: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_chosen: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    components_selected: Option<usize>,
    models: Vec<&'a str>,
    notes: &'a [String],
}

fn fmt_float(v: f64) -> String {
    // Shortest representation that round-trips; deterministic across runs.
    let mut s = format!("{}", v);
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Writes metrics.csv, elbow.csv, cluster_assignments.csv, per-model ROC,
/// coefficient and CV-deviance files, and a run manifest. Refuses to
/// overwrite a previous run unless `force` is set.
pub fn write_reports(
    report: &ExperimentReport,
    out_dir: &Path,
    force: bool,
) -> Result<(), PipelineError> {
    let manifest_path = out_dir.join("run_manifest.toml");
    if manifest_path.exists() && !force {
        return Err(PipelineError::Config(format!(
            "{} already holds a run (use --force to overwrite)",
            out_dir.display()
        )));
    }
    fs::create_dir_all(out_dir)?;

    let mut metrics = String::from("model,auc,tpr,tnr,n_train,n_test,selected_lambda,threshold\n");
    for row in &report.rows {
        let _ = writeln!(
            metrics,
            "{},{},{},{},{},{},{},{}",
            row.model_id,
            fmt_float(row.auc),
            fmt_float(row.tpr),
            fmt_float(row.tnr),
            row.n_train,
            row.n_test,
            fmt_float(row.selected_lambda),
            fmt_float(row.threshold)
        );
    }
    fs::write(out_dir.join("metrics.csv"), metrics)?;

    if let Some(curve) = &report.elbow {
        let mut text = String::from("k,wcss\n");
        for &(k, wcss) in &curve.points {
            let _ = writeln!(text, "{},{}", k, fmt_float(wcss));
        }
        fs::write(out_dir.join("elbow.csv"), text)?;
    }
    if let Some(assignment) = &report.assignments {
        let mut text = String::from("record_index,cluster\n");
        for (i, &c) in assignment.iter().enumerate() {
            let _ = writeln!(text, "{},{}", i, c + 1);
        }
        fs::write(out_dir.join("cluster_assignments.csv"), text)?;
    }

    for row in &report.rows {
        let mut roc = String::from("threshold,fpr,tpr\n");
        // points[0] is the (0,0) sentinel with no finite threshold.
        let _ = writeln!(roc, "inf,0.0,0.0");
        for (t, point) in row.roc.thresholds.iter().zip(&row.roc.points[1..]) {
            let _ = writeln!(roc, "{},{},{}", fmt_float(*t), fmt_float(point.0), fmt_float(point.1));
        }
        fs::write(out_dir.join(format!("roc_{}.csv", row.model_id)), roc)?;

        let mut coefs = String::from("predictor,coefficient\n");
        let _ = writeln!(coefs, "(intercept),{}", fmt_float(row.intercept));
        for (name, value) in &row.coefficients {
            let _ = writeln!(coefs, "{},{}", name, fmt_float(*value));
        }
        fs::write(
            out_dir.join(format!("coefficients_{}.csv", row.model_id)),
            coefs,
        )?;

        let mut cv = String::from("lambda,mean_deviance,se_deviance\n");
        for i in 0..row.cv.lambdas.len() {
            let _ = writeln!(
                cv,
                "{},{},{}",
                fmt_float(row.cv.lambdas[i]),
                fmt_float(row.cv.mean_deviance[i]),
                fmt_float(row.cv.se_deviance[i])
            );
        }
        fs::write(out_dir.join(format!("cv_{}.csv", row.model_id)), cv)?;
    }

    let manifest = Manifest {
        experiment: &report.experiment,
        master_seed: report.provenance.master_seed,
        config_digest: &report.provenance.config_digest,
        k_chosen: report.provenance.k_chosen,
        components_selected: report.provenance.components_selected,
        models: report.rows.iter().map(|r| r.model_id.as_str()).collect(),
        notes: &report.notes,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| PipelineError::Config(format!("manifest serialization: {}", e)))?;
    fs::write(manifest_path, text)?;
    Ok(())
}

impl From<KMeansError> for PipelineError {
    fn from(e: KMeansError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<PcaError> for PipelineError {
    fn from(e: PcaError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<LassoError> for PipelineError {
    fn from(e: LassoError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<PreprocessError> for PipelineError {
    fn from(e: PreprocessError) -> Self {
        PipelineError::Data(e.to_string())
    }
}
