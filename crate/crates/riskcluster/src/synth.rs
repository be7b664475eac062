//! Seeded synthetic-cohort generator: per-cluster truncated/rounded normal
//! draws matched to configured moments, plus a planted logistic outcome with
//! a prevalence-calibrated intercept.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::{AppConfig, ConfigError, GeneratorConfig};
use crate::preprocess::{encode_design_matrix, PreprocessError};
use crate::schema::{Cohort, DeprivationIndex, EthnicGroup, Gender, NotificationRecord, NotifierRole};
use crate::seeding::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
    #[error("unknown predictor {0:?} in outcome coefficients")]
    UnknownPredictor(String),
    #[error("intercept calibration cannot reach prevalence {0}")]
    CalibrationFailure(f64),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// The true generating model, returned for oracle checks.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub intercept: f64,
    pub coefficients: Vec<(String, f64)>,
}

/// Domain of one clustering variable: bounds plus integer rounding.
struct VarDomain {
    lo: Option<f64>,
    hi: Option<f64>,
    integer: bool,
}

/// In CLUSTERING_COLUMNS order: child_age, n_prev_notifications,
/// days_since_last_intake, n_maltreatment_findings, mother_age,
/// n_children_reported, n_sibling_prev_notifications.
fn domains() -> [VarDomain; 7] {
    [
        VarDomain { lo: Some(0.0), hi: Some(15.0), integer: true },
        VarDomain { lo: Some(0.0), hi: None, integer: true },
        VarDomain { lo: Some(0.0), hi: None, integer: true },
        VarDomain { lo: Some(0.0), hi: None, integer: true },
        VarDomain { lo: Some(0.0), hi: None, integer: false },
        VarDomain { lo: Some(1.0), hi: None, integer: true },
        VarDomain { lo: Some(0.0), hi: None, integer: true },
    ]
}

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| <= 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// E[round(clamp(N(mu, sigma)))] over an integer domain [lo, hi], written as
/// lo + sum over thresholds t of P(X > t + 1/2).
fn expected_rounded(mu: f64, sigma: f64, lo: f64, hi: Option<f64>) -> f64 {
    let hi = hi.unwrap_or_else(|| (mu + 12.0 * sigma).ceil().max(lo));
    let mut e = lo;
    let mut t = lo;
    while t < hi {
        let z = (t + 0.5 - mu) / sigma;
        if z < -8.0 {
            e += 1.0;
        } else if z > 8.0 {
            break;
        } else {
            e += 1.0 - normal_cdf(z);
        }
        t += 1.0;
    }
    e
}

/// Pre-rounding mean that makes the rounded/clamped draw hit `target` in
/// expectation, found by bisection; falls back to `target` when the domain
/// cannot reach it.
fn calibrate_mean(target: f64, sigma: f64, dom: &VarDomain) -> f64 {
    if !dom.integer {
        return target;
    }
    let lo = dom.lo.unwrap_or(f64::NEG_INFINITY);
    let f = |m: f64| expected_rounded(m, sigma, lo, dom.hi) - target;
    let mut a = target - 12.0 * sigma;
    let mut b = target + 12.0 * sigma;
    if f(a) > 0.0 || f(b) < 0.0 {
        return target;
    }
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn apply_domain(x: f64, dom: &VarDomain) -> f64 {
    let mut v = if dom.integer { x.round() } else { x };
    if let Some(lo) = dom.lo {
        v = v.max(lo);
    }
    if let Some(hi) = dom.hi {
        v = v.min(hi);
    }
    v
}

/// Deterministic largest-remainder apportionment of n rows to cluster
/// weights; defines the canonical cluster-major record order.
pub fn cluster_sizes(cfg: &GeneratorConfig) -> Vec<usize> {
    let n = cfg.n as f64;
    let mut sizes: Vec<usize> = cfg.clusters.iter().map(|c| (c.weight * n) as usize).collect();
    let mut rema: Vec<(usize, f64)> = cfg
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.weight * n - (c.weight * n).floor()))
        .collect();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut short = cfg.n - sizes.iter().sum::<usize>();
    for (i, _) in rema {
        if short == 0 {
            break;
        }
        sizes[i] += 1;
        short -= 1;
    }
    sizes
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws records cluster-major with per-cluster sub-seeded streams, plants
/// the outcome, then masks mother_age completely at random.
pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<Cohort, SynthError> {
    AppConfig {
        generator: cfg.clone(),
        pipeline: Default::default(),
    }
    .validate()?;

    let doms = domains();
    let sizes = cluster_sizes(cfg);
    let mut records = Vec::with_capacity(cfg.n);
    for (c, arch) in cfg.clusters.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, "synth-cluster", c as u64));
        let mu: Vec<f64> = (0..7)
            .map(|j| calibrate_mean(arch.means[j], arch.sds[j], &doms[j]))
            .collect();
        for _ in 0..sizes[c] {
            let mut v = [0.0; 7];
            for j in 0..7 {
                let z: f64 = rng.sample(StandardNormal);
                v[j] = apply_domain(mu[j] + arch.sds[j] * z, &doms[j]);
            }
            let cat = &cfg.categorical;
            let gender = Gender::ALL[sample_categorical(&mut rng, &cat.gender)];
            let ethnic_group = EthnicGroup::ALL[sample_categorical(&mut rng, &cat.ethnic_group)];
            let deprivation_index =
                DeprivationIndex::all()[sample_categorical(&mut rng, &cat.deprivation_index)];
            let notifier_role =
                NotifierRole::ALL[sample_categorical(&mut rng, &cat.notifier_role)];
            let msd_ot_contact_level =
                sample_categorical(&mut rng, &cat.msd_ot_contact_level) as u8 + 1;
            let mother_cps_contact_level =
                sample_categorical(&mut rng, &cat.mother_cps_contact_level) as u8 + 1;
            let n_prev_notifications = v[1] as u32;
            let n_maltreatment_findings = v[3] as u32;
            records.push(NotificationRecord {
                child_age: v[0] as u8,
                gender,
                ethnic_group,
                prev_risk_safety_flag: (rng.random::<f64>() < cfg.flags.prev_risk_safety) as u8,
                n_prev_notifications,
                no_prev_notification_flag: (n_prev_notifications == 0) as u8,
                days_since_last_intake: v[2] as u32,
                no_prev_intake_flag: (n_prev_notifications == 0) as u8,
                n_maltreatment_findings,
                no_prev_maltreatment_flag: (n_maltreatment_findings == 0) as u8,
                prev_custody_flag: (rng.random::<f64>() < cfg.flags.prev_custody) as u8,
                open_phase_flag: (rng.random::<f64>() < cfg.flags.open_phase) as u8,
                benefit_inclusion_flag: (rng.random::<f64>() < cfg.flags.benefit_inclusion) as u8,
                msd_ot_contact_level,
                mother_age: Some(v[4]),
                mother_cps_contact_level,
                deprivation_index,
                n_children_reported: v[5] as u32,
                n_sibling_prev_notifications: v[6] as u32,
                notifier_role,
                outcome: 0,
            });
        }
    }

    let mut cohort = Cohort {
        records,
        source_id: format!("synthetic-n{}-seed{}", cfg.n, cfg.master_seed),
    };
    let (labels, _model) = planted_outcome(
        &cohort,
        &cfg.outcome_coefficients,
        cfg.prevalence_target,
        derive_seed(cfg.master_seed, "synth-outcome", 0),
    )?;
    for (r, y) in cohort.records.iter_mut().zip(labels) {
        r.outcome = y;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, "synth-missing", 0));
    for r in &mut cohort.records {
        if rng.random::<f64>() < cfg.mother_age_missing_rate {
            r.mother_age = None;
        }
    }
    Ok(cohort)
}

/// Bernoulli outcomes from sigmoid(b0 + x'beta) over the encoded predictor
/// space, with b0 bisected so the expected prevalence hits the target.
pub fn planted_outcome(
    cohort: &Cohort,
    coefficients: &BTreeMap<String, f64>,
    target_prevalence: f64,
    seed: u64,
) -> Result<(Vec<u8>, PlantedModel), SynthError> {
    if !(0.0 < target_prevalence && target_prevalence < 1.0) {
        return Err(SynthError::CalibrationFailure(target_prevalence));
    }
    // Encoding requires complete numerics; fill any missing mother_age from
    // the observed mean for the purpose of scoring.
    let complete = if cohort.records.iter().any(|r| r.mother_age.is_none()) {
        crate::preprocess::impute_mother_age_global(cohort)?
    } else {
        cohort.clone()
    };
    let m = encode_design_matrix(&complete)?;
    let mut eta = vec![0.0; m.n_rows()];
    for (name, &beta) in coefficients {
        let j = m
            .column_index(name)
            .ok_or_else(|| SynthError::UnknownPredictor(name.clone()))?;
        for (e, &x) in eta.iter_mut().zip(m.data.column(j)) {
            *e += beta * x;
        }
    }

    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mean_prob =
        |b0: f64| eta.iter().map(|&e| sigmoid(b0 + e)).sum::<f64>() / eta.len() as f64;
    // Bracket wide enough to drown out the linear score at both ends.
    let eta_min = eta.iter().cloned().fold(f64::INFINITY, f64::min);
    let eta_max = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut a, mut b) = (-eta_max - 40.0, -eta_min + 40.0);
    if !(a.is_finite() && b.is_finite())
        || mean_prob(a) > target_prevalence
        || mean_prob(b) < target_prevalence
    {
        return Err(SynthError::CalibrationFailure(target_prevalence));
    }
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if mean_prob(mid) < target_prevalence {
            a = mid;
        } else {
            b = mid;
        }
    }
    let intercept = 0.5 * (a + b);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = eta
        .iter()
        .map(|&e| (rng.random::<f64>() < sigmoid(intercept + e)) as u8)
        .collect();
    Ok((
        labels,
        PlantedModel {
            intercept,
            coefficients: coefficients.iter().map(|(k, &v)| (k.clone(), v)).collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc_concordance;
    use crate::schema::validate_cohort;

    fn small_config(n: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n,
            master_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_n_rejected() {
        let cfg = small_config(0, 1);
        assert!(matches!(
            generate_cohort(&cfg),
            Err(SynthError::InvalidConfig(_))
        ));
    }

    #[test]
    fn same_seed_identical_cohorts() {
        let cfg = small_config(500, 7);
        let a = generate_cohort(&cfg).unwrap();
        let b = generate_cohort(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        let other = generate_cohort(&small_config(500, 8)).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn generated_cohort_is_schema_valid() {
        let cohort = generate_cohort(&small_config(2000, 3)).unwrap();
        assert!(validate_cohort(&cohort).is_empty());
        assert!(cohort.records.iter().any(|r| r.mother_age.is_none()));
    }

    #[test]
    fn cluster_sizes_apportion_exactly() {
        let cfg = small_config(55_287, 1);
        let sizes = cluster_sizes(&cfg);
        assert_eq!(sizes.iter().sum::<usize>(), 55_287);
        for (s, c) in sizes.iter().zip(&cfg.clusters) {
            let exact = c.weight * 55_287.0;
            assert!((*s as f64 - exact).abs() < 1.0);
        }
    }

    #[test]
    fn per_cluster_means_match_archetypes() {
        let cfg = small_config(50_000, 11);
        let cohort = generate_cohort(&cfg).unwrap();
        let sizes = cluster_sizes(&cfg);
        let mut start = 0;
        for (c, arch) in cfg.clusters.iter().enumerate() {
            let rows = &cohort.records[start..start + sizes[c]];
            let vals = |f: &dyn Fn(&NotificationRecord) -> f64| {
                rows.iter().map(f).sum::<f64>() / rows.len() as f64
            };
            let got = [
                vals(&|r| r.child_age as f64),
                vals(&|r| r.n_prev_notifications as f64),
                vals(&|r| r.days_since_last_intake as f64),
                vals(&|r| r.n_maltreatment_findings as f64),
                // mother_age missingness is MCAR so the observed mean is unbiased
                rows.iter().filter_map(|r| r.mother_age).sum::<f64>()
                    / rows.iter().filter(|r| r.mother_age.is_some()).count() as f64,
                vals(&|r| r.n_children_reported as f64),
                vals(&|r| r.n_sibling_prev_notifications as f64),
            ];
            for j in 0..7 {
                let tol = 0.05 * arch.sds[j];
                assert!(
                    (got[j] - arch.means[j]).abs() <= tol,
                    "cluster {} var {}: mean {} vs target {} (tol {})",
                    c,
                    j,
                    got[j],
                    arch.means[j],
                    tol
                );
            }
            start += sizes[c];
        }
    }

    #[test]
    fn prevalence_calibrated_to_target() {
        let cohort = generate_cohort(&small_config(50_000, 5)).unwrap();
        let prevalence =
            cohort.records.iter().filter(|r| r.outcome == 1).count() as f64 / 50_000.0;
        assert!(
            (prevalence - 0.48).abs() <= 0.01,
            "prevalence {}",
            prevalence
        );
    }

    #[test]
    fn zero_coefficients_give_logit_intercept() {
        let cohort = generate_cohort(&small_config(20_000, 9)).unwrap();
        let (_, model) =
            planted_outcome(&cohort, &BTreeMap::new(), 0.48, 13).unwrap();
        let logit = (0.48f64 / 0.52).ln();
        assert!(
            (model.intercept - logit).abs() <= 1e-9,
            "intercept {} vs {}",
            model.intercept,
            logit
        );
    }

    #[test]
    fn strong_coefficient_gives_high_auc() {
        let cohort = generate_cohort(&small_config(20_000, 15)).unwrap();
        let coefs = BTreeMap::from([("mother_age".to_string(), 2.0)]);
        let (labels, model) = planted_outcome(&cohort, &coefs, 0.5, 17).unwrap();
        let scores: Vec<f64> = cohort
            .records
            .iter()
            .map(|r| model.intercept + 2.0 * r.mother_age.unwrap_or(33.7))
            .collect();
        let auc = auc_concordance(&scores, &labels).unwrap();
        assert!(auc > 0.9, "auc {}", auc);
    }

    #[test]
    fn unknown_predictor_rejected() {
        let cohort = generate_cohort(&small_config(200, 19)).unwrap();
        let coefs = BTreeMap::from([("no_such_column".to_string(), 1.0)]);
        assert!(matches!(
            planted_outcome(&cohort, &coefs, 0.5, 1),
            Err(SynthError::UnknownPredictor(_))
        ));
    }

    #[test]
    fn erf_reference_values() {
        // Compare against tabulated double-precision values.
        for (x, want) in [
            (0.0, 0.0),
            (0.5, 0.5204998778130465),
            (1.0, 0.8427007929497149),
            (2.0, 0.9953222650189527),
            (-1.0, -0.8427007929497149),
        ] {
            assert!((erf(x) - want).abs() <= 2e-7, "erf({}) = {}", x, erf(x));
        }
    }

    #[test]
    fn calibration_removes_truncation_bias() {
        // A count with most mass at the 0 boundary: naive rounding+clamping
        // would inflate the mean well above 0.30 at sigma 0.84.
        let dom = VarDomain { lo: Some(0.0), hi: None, integer: true };
        let mu = calibrate_mean(0.30, 0.84, &dom);
        assert!(mu < 0.30, "calibrated pre-round mean {}", mu);
        let realized = expected_rounded(mu, 0.84, 0.0, None);
        assert!((realized - 0.30).abs() <= 1e-9, "realized {}", realized);
    }
}
