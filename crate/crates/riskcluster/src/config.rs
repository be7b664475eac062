//! TOML configuration for the synthetic-cohort generator and the modelling
//! pipeline, with defaults matching the published cohort moments.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

/// One cluster archetype: mixing weight plus (mean, SD) for each of the
/// seven clustering variables, in `CLUSTERING_COLUMNS` order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterArchetype {
    pub weight: f64,
    pub means: [f64; 7],
    pub sds: [f64; 7],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub prevalence_target: f64,
    pub master_seed: u64,
    /// Completely-at-random missing rate for mother_age.
    pub mother_age_missing_rate: f64,
    pub clusters: Vec<ClusterArchetype>,
    /// Planted sparse logistic signal over encoded predictor names; the
    /// intercept is calibrated to hit `prevalence_target`.
    pub outcome_coefficients: BTreeMap<String, f64>,
    pub categorical: CategoricalConfig,
    pub flags: FlagRates,
}

/// Category probabilities in declared-domain order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategoricalConfig {
    pub gender: Vec<f64>,
    pub ethnic_group: Vec<f64>,
    pub deprivation_index: Vec<f64>,
    pub notifier_role: Vec<f64>,
    pub msd_ot_contact_level: Vec<f64>,
    pub mother_cps_contact_level: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagRates {
    pub prev_risk_safety: f64,
    pub prev_custody: f64,
    pub open_phase: f64,
    pub benefit_inclusion: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub train_fraction: f64,
    pub folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Fixed cluster count; `None` lets the elbow scan choose.
    pub k: Option<usize>,
    pub k_max: usize,
    pub threshold: f64,
    /// "min" or "1se".
    pub lambda_rule: String,
    pub stratify: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        // Cohort-wide archetypes: four subgroups with published means for
        // the seven clustering variables and dispersions chosen so the
        // planted structure is recoverable end to end.
        let means = [
            [3.44, 1.11, 193.90, 0.30, 28.41, 1.25, 2.31],
            [10.78, 12.50, 979.00, 6.21, 35.47, 2.14, 22.56],
            [11.18, 2.81, 1050.00, 0.70, 39.47, 1.24, 2.96],
            [6.92, 3.91, 594.10, 1.15, 34.10, 4.11, 21.96],
        ];
        let sds = [
            [11.71, 12.53, 914.9, 0.30, 4.10, 0.583, 29.79],
            [11.71, 12.53, 914.9, 1.20, 4.10, 0.583, 29.79],
            [11.71, 12.53, 914.9, 0.30, 4.10, 0.583, 29.79],
            [11.71, 12.53, 914.9, 0.30, 4.10, 0.583, 29.79],
        ];
        let sizes = [23658.0, 5544.0, 17901.0, 8187.0];
        let total: f64 = sizes.iter().sum();
        let clusters = (0..4)
            .map(|c| ClusterArchetype {
                weight: sizes[c] / total,
                means: means[c],
                sds: sds[c],
            })
            .collect();
        let outcome_coefficients = BTreeMap::from(
            [
                ("n_maltreatment_findings", 0.22),
                ("n_prev_notifications", 0.05),
                ("benefit_inclusion_flag", 0.55),
                ("msd_ot_contact_level", 0.28),
                ("child_age", -0.045),
                ("deprivation_index_10", 0.35),
            ]
            .map(|(k, v)| (k.to_string(), v)),
        );
        GeneratorConfig {
            n: 55_287,
            prevalence_target: 0.48,
            master_seed: 42,
            mother_age_missing_rate: 0.05,
            clusters,
            outcome_coefficients,
            categorical: CategoricalConfig::default(),
            flags: FlagRates::default(),
        }
    }
}

impl Default for CategoricalConfig {
    fn default() -> Self {
        CategoricalConfig {
            gender: vec![0.51, 0.48, 0.01],
            ethnic_group: vec![0.42, 0.08, 0.12, 0.28, 0.08, 0.02],
            deprivation_index: vec![
                0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.12, 0.17, 0.20, 0.02,
            ],
            notifier_role: vec![
                0.03, 0.02, 0.14, 0.13, 0.05, 0.04, 0.25, 0.09, 0.16, 0.03, 0.06,
            ],
            msd_ot_contact_level: vec![0.35, 0.30, 0.20, 0.15],
            mother_cps_contact_level: vec![0.55, 0.25, 0.12, 0.08],
        }
    }
}

impl Default for FlagRates {
    fn default() -> Self {
        FlagRates {
            prev_risk_safety: 0.30,
            prev_custody: 0.08,
            open_phase: 0.12,
            benefit_inclusion: 0.60,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_fraction: 0.7,
            folds: 10,
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            restarts: 10,
            max_iter: 300,
            k: None,
            k_max: 10,
            threshold: 0.5,
            lambda_rule: "min".to_string(),
            stratify: false,
        }
    }
}

fn check_probs(name: &str, p: &[f64], len: usize) -> Result<(), ConfigError> {
    if p.len() != len {
        return Err(ConfigError::Invalid(format!(
            "{} needs {} probabilities, got {}",
            name,
            len,
            p.len()
        )));
    }
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(ConfigError::Invalid(format!(
            "{} probabilities must lie in [0,1]",
            name
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ConfigError::Invalid(format!(
            "{} probabilities sum to {}, expected 1",
            name, sum
        )));
    }
    Ok(())
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: AppConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.generator;
        if g.n == 0 {
            return Err(ConfigError::Invalid("generator.n must be > 0".into()));
        }
        if !(0.0 < g.prevalence_target && g.prevalence_target < 1.0) {
            return Err(ConfigError::Invalid(
                "prevalence_target must lie in (0,1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&g.mother_age_missing_rate) {
            return Err(ConfigError::Invalid(
                "mother_age_missing_rate must lie in [0,1]".into(),
            ));
        }
        if g.clusters.is_empty() {
            return Err(ConfigError::Invalid("at least one cluster required".into()));
        }
        let wsum: f64 = g.clusters.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-6 {
            return Err(ConfigError::Invalid(format!(
                "cluster weights sum to {}, expected 1",
                wsum
            )));
        }
        for (i, c) in g.clusters.iter().enumerate() {
            if c.weight <= 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "cluster {} weight must be > 0",
                    i
                )));
            }
            if c.sds.iter().any(|&s| s <= 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "cluster {} SDs must all be > 0",
                    i
                )));
            }
        }
        let cat = &g.categorical;
        check_probs("categorical.gender", &cat.gender, 3)?;
        check_probs("categorical.ethnic_group", &cat.ethnic_group, 6)?;
        check_probs("categorical.deprivation_index", &cat.deprivation_index, 11)?;
        check_probs("categorical.notifier_role", &cat.notifier_role, 11)?;
        check_probs("categorical.msd_ot_contact_level", &cat.msd_ot_contact_level, 4)?;
        check_probs(
            "categorical.mother_cps_contact_level",
            &cat.mother_cps_contact_level,
            4,
        )?;
        for (name, rate) in [
            ("prev_risk_safety", g.flags.prev_risk_safety),
            ("prev_custody", g.flags.prev_custody),
            ("open_phase", g.flags.open_phase),
            ("benefit_inclusion", g.flags.benefit_inclusion),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(ConfigError::Invalid(format!(
                    "flags.{} must lie in [0,1]",
                    name
                )));
            }
        }

        let p = &self.pipeline;
        if !(0.0 < p.train_fraction && p.train_fraction < 1.0) {
            return Err(ConfigError::Invalid(
                "pipeline.train_fraction must lie in (0,1)".into(),
            ));
        }
        if p.folds < 2 {
            return Err(ConfigError::Invalid("pipeline.folds must be >= 2".into()));
        }
        if p.n_lambda == 0 {
            return Err(ConfigError::Invalid("pipeline.n_lambda must be > 0".into()));
        }
        if !(0.0 < p.lambda_min_ratio && p.lambda_min_ratio <= 1.0) {
            return Err(ConfigError::Invalid(
                "pipeline.lambda_min_ratio must lie in (0,1]".into(),
            ));
        }
        if p.k_max < 3 {
            return Err(ConfigError::Invalid("pipeline.k_max must be >= 3".into()));
        }
        if p.lambda_rule != "min" && p.lambda_rule != "1se" {
            return Err(ConfigError::Invalid(format!(
                "pipeline.lambda_rule must be \"min\" or \"1se\", got {:?}",
                p.lambda_rule
            )));
        }
        Ok(())
    }
}
