//! Imputation, categorical encoding, z-standardization and train/test splits.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::schema::{Cohort, DeprivationIndex, EthnicGroup, Gender, NotifierRole};

/// The seven numerical variables used for clustering.
pub const CLUSTERING_COLUMNS: [&str; 7] = [
    "child_age",
    "n_prev_notifications",
    "days_since_last_intake",
    "n_maltreatment_findings",
    "mother_age",
    "n_children_reported",
    "n_sibling_prev_notifications",
];

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("no observed mother_age values to impute from")]
    AllMissing,
    #[error("record {0} still has a missing mother_age; impute before encoding")]
    UnimputedMissing(usize),
    #[error("column mismatch: {0}")]
    ColumnMismatch(String),
    #[error("split would leave an empty side (n={n}, fraction={fraction})")]
    DegenerateSplit { n: usize, fraction: f64 },
}

/// Fully encoded predictor matrix. The outcome never appears as a column.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub data: Array2<f64>,
    pub column_names: Vec<String>,
    /// Maps each matrix row to its record index in the source cohort.
    pub row_map: Vec<usize>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// New matrix holding only the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> Result<DesignMatrix, PreprocessError> {
        let mut idx = Vec::with_capacity(names.len());
        for name in names {
            idx.push(
                self.column_index(name)
                    .ok_or_else(|| PreprocessError::ColumnMismatch(name.to_string()))?,
            );
        }
        let mut data = Array2::zeros((self.n_rows(), names.len()));
        for (j, &src) in idx.iter().enumerate() {
            data.column_mut(j).assign(&self.data.column(src));
        }
        Ok(DesignMatrix {
            data,
            column_names: names.iter().map(|s| s.to_string()).collect(),
            row_map: self.row_map.clone(),
        })
    }

    /// New matrix holding only the given rows (indices into this matrix).
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let mut data = Array2::zeros((rows.len(), self.n_cols()));
        for (i, &r) in rows.iter().enumerate() {
            data.row_mut(i).assign(&self.data.row(r));
        }
        DesignMatrix {
            data,
            column_names: self.column_names.clone(),
            row_map: rows.iter().map(|&r| self.row_map[r]).collect(),
        }
    }
}

/// Per-column location/scale learned from data; scale is the sample
/// (n-1) standard deviation.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// True where the column was constant and the scale was replaced by 1.
    pub constant: Vec<bool>,
}

/// Train/test row partition.
#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Replaces every missing mother_age with the mean of the observed values.
pub fn impute_mother_age_global(cohort: &Cohort) -> Result<Cohort, PreprocessError> {
    let observed: Vec<f64> = cohort.records.iter().filter_map(|r| r.mother_age).collect();
    if observed.is_empty() {
        return Err(PreprocessError::AllMissing);
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let mut out = cohort.clone();
    for r in &mut out.records {
        if r.mother_age.is_none() {
            r.mother_age = Some(mean);
        }
    }
    Ok(out)
}

/// Replaces missing mother_age within each cluster by that cluster's observed
/// mean; clusters with no observed value fall back to the global mean.
pub fn impute_mother_age_clusterwise(
    cohort: &Cohort,
    assignment: &[usize],
) -> Result<Cohort, PreprocessError> {
    assert_eq!(
        assignment.len(),
        cohort.records.len(),
        "one cluster id per record"
    );
    let observed: Vec<f64> = cohort.records.iter().filter_map(|r| r.mother_age).collect();
    if observed.is_empty() {
        return Err(PreprocessError::AllMissing);
    }
    let global_mean = observed.iter().sum::<f64>() / observed.len() as f64;

    let n_clusters = assignment.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut sums = vec![0.0; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (r, &c) in cohort.records.iter().zip(assignment) {
        if let Some(a) = r.mother_age {
            sums[c] += a;
            counts[c] += 1;
        }
    }
    let cluster_mean: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { global_mean })
        .collect();

    let mut out = cohort.clone();
    for (r, &c) in out.records.iter_mut().zip(assignment) {
        if r.mother_age.is_none() {
            r.mother_age = Some(cluster_mean[c]);
        }
    }
    Ok(out)
}

fn one_hot<T: PartialEq>(value: &T, levels: &[T]) -> Vec<f64> {
    // First level is the reference and gets no column.
    levels[1..]
        .iter()
        .map(|l| if value == l { 1.0 } else { 0.0 })
        .collect()
}

/// Encodes a fully imputed cohort as a real design matrix: numeric, binary
/// and ordinal fields pass through; each categorical expands to one-hot
/// columns over its full declared domain with the first level dropped as
/// reference. The outcome is excluded.
pub fn encode_design_matrix(cohort: &Cohort) -> Result<DesignMatrix, PreprocessError> {
    let gender_levels: Vec<Gender> = Gender::ALL.to_vec();
    let ethnic_levels: Vec<EthnicGroup> = EthnicGroup::ALL.to_vec();
    let depr_levels: Vec<DeprivationIndex> = DeprivationIndex::all();
    let notifier_levels: Vec<NotifierRole> = NotifierRole::ALL.to_vec();

    let mut column_names: Vec<String> = vec!["child_age".into()];
    for l in &gender_levels[1..] {
        column_names.push(format!("gender_{}", l));
    }
    for l in &ethnic_levels[1..] {
        column_names.push(format!("ethnic_group_{}", l));
    }
    column_names.extend(
        [
            "prev_risk_safety_flag",
            "n_prev_notifications",
            "no_prev_notification_flag",
            "days_since_last_intake",
            "no_prev_intake_flag",
            "n_maltreatment_findings",
            "no_prev_maltreatment_flag",
            "prev_custody_flag",
            "open_phase_flag",
            "benefit_inclusion_flag",
            "msd_ot_contact_level",
            "mother_age",
            "mother_cps_contact_level",
        ]
        .map(String::from),
    );
    for l in &depr_levels[1..] {
        column_names.push(format!("deprivation_index_{}", l.label()));
    }
    column_names.extend(["n_children_reported", "n_sibling_prev_notifications"].map(String::from));
    for l in &notifier_levels[1..] {
        column_names.push(format!("notifier_role_{}", l));
    }

    let p = column_names.len();
    let n = cohort.records.len();
    let mut data = Array2::zeros((n, p));
    for (i, r) in cohort.records.iter().enumerate() {
        let mother_age = r
            .mother_age
            .ok_or(PreprocessError::UnimputedMissing(i))?;
        let mut row: Vec<f64> = Vec::with_capacity(p);
        row.push(r.child_age as f64);
        row.extend(one_hot(&r.gender, &gender_levels));
        row.extend(one_hot(&r.ethnic_group, &ethnic_levels));
        row.extend([
            r.prev_risk_safety_flag as f64,
            r.n_prev_notifications as f64,
            r.no_prev_notification_flag as f64,
            r.days_since_last_intake as f64,
            r.no_prev_intake_flag as f64,
            r.n_maltreatment_findings as f64,
            r.no_prev_maltreatment_flag as f64,
            r.prev_custody_flag as f64,
            r.open_phase_flag as f64,
            r.benefit_inclusion_flag as f64,
            r.msd_ot_contact_level as f64,
            mother_age,
            r.mother_cps_contact_level as f64,
        ]);
        row.extend(one_hot(&r.deprivation_index, &depr_levels));
        row.extend([
            r.n_children_reported as f64,
            r.n_sibling_prev_notifications as f64,
        ]);
        row.extend(one_hot(&r.notifier_role, &notifier_levels));
        debug_assert_eq!(row.len(), p);
        for (j, v) in row.into_iter().enumerate() {
            data[(i, j)] = v;
        }
    }

    Ok(DesignMatrix {
        data,
        column_names,
        row_map: (0..n).collect(),
    })
}

/// Outcome labels in row order, as 0.0/1.0.
pub fn outcome_labels(cohort: &Cohort) -> Vec<f64> {
    cohort.records.iter().map(|r| r.outcome as f64).collect()
}

/// Learns per-column mean and sample standard deviation for the named
/// columns. Constant columns get scale 1 and are flagged.
pub fn fit_standardizer(
    m: &DesignMatrix,
    columns: &[&str],
) -> Result<Standardizer, PreprocessError> {
    let n = m.n_rows() as f64;
    let mut means = Vec::with_capacity(columns.len());
    let mut scales = Vec::with_capacity(columns.len());
    let mut constant = Vec::with_capacity(columns.len());
    for name in columns {
        let j = m
            .column_index(name)
            .ok_or_else(|| PreprocessError::ColumnMismatch(name.to_string()))?;
        let col = m.data.column(j);
        let mean = col.sum() / n;
        let ss: f64 = col.iter().map(|&x| (x - mean) * (x - mean)).sum();
        let var = if n > 1.0 { ss / (n - 1.0) } else { 0.0 };
        let is_constant = var == 0.0;
        means.push(mean);
        scales.push(if is_constant { 1.0 } else { var.sqrt() });
        constant.push(is_constant);
    }
    Ok(Standardizer {
        columns: columns.iter().map(|s| s.to_string()).collect(),
        means,
        scales,
        constant,
    })
}

/// Transforms each fitted column to (x - mean) / scale; other columns are
/// left untouched.
pub fn apply_standardizer(
    s: &Standardizer,
    m: &DesignMatrix,
) -> Result<DesignMatrix, PreprocessError> {
    let mut out = m.clone();
    for (k, name) in s.columns.iter().enumerate() {
        let j = m
            .column_index(name)
            .ok_or_else(|| PreprocessError::ColumnMismatch(name.clone()))?;
        let mean = s.means[k];
        let scale = s.scales[k];
        out.data
            .column_mut(j)
            .mapv_inplace(|x| (x - mean) / scale);
    }
    Ok(out)
}

/// Randomly partitions `0..n` into train/test with `|train| = round(f*n)`.
/// With `stratify_by`, each label's train share stays within one record of
/// the fraction while the total train size is preserved.
pub fn split_train_test(
    n: usize,
    fraction: f64,
    seed: u64,
    stratify_by: Option<&[u8]>,
) -> Result<SplitIndices, PreprocessError> {
    assert!(fraction > 0.0 && fraction < 1.0, "fraction must be in (0,1)");
    let n_train = (fraction * n as f64).round() as usize;
    if n < 2 || n_train == 0 || n_train == n {
        return Err(PreprocessError::DegenerateSplit { n, fraction });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let train: Vec<usize> = match stratify_by {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n_train);
            idx
        }
        Some(labels) => {
            assert_eq!(labels.len(), n, "one label per row");
            // Group rows by label, shuffle within groups, then take a
            // per-group quota fixed by largest remainder so quotas sum
            // to n_train and each stays within 1 of fraction * group size.
            let mut label_values: Vec<u8> = labels.to_vec();
            label_values.sort_unstable();
            label_values.dedup();
            let mut groups: Vec<Vec<usize>> = label_values
                .iter()
                .map(|&l| (0..n).filter(|&i| labels[i] == l).collect())
                .collect();
            for g in &mut groups {
                g.shuffle(&mut rng);
            }
            let mut quotas: Vec<usize> = groups
                .iter()
                .map(|g| (fraction * g.len() as f64).floor() as usize)
                .collect();
            let mut remainders: Vec<(usize, f64)> = groups
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let exact = fraction * g.len() as f64;
                    (k, exact - exact.floor())
                })
                .collect();
            remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut short = n_train.saturating_sub(quotas.iter().sum::<usize>());
            for (k, _) in remainders {
                if short == 0 {
                    break;
                }
                if quotas[k] < groups[k].len() {
                    quotas[k] += 1;
                    short -= 1;
                }
            }
            groups
                .iter()
                .zip(&quotas)
                .flat_map(|(g, &q)| g[..q].iter().copied())
                .collect()
        }
    };

    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    let mut train = train;
    train.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(PreprocessError::DegenerateSplit { n, fraction });
    }
    Ok(SplitIndices { train, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::NotificationRecord;
    use proptest::prelude::*;

    fn record(mother_age: Option<f64>) -> NotificationRecord {
        NotificationRecord {
            child_age: 5,
            gender: Gender::Male,
            ethnic_group: EthnicGroup::European,
            prev_risk_safety_flag: 0,
            n_prev_notifications: 1,
            no_prev_notification_flag: 0,
            days_since_last_intake: 100,
            no_prev_intake_flag: 0,
            n_maltreatment_findings: 0,
            no_prev_maltreatment_flag: 1,
            prev_custody_flag: 0,
            open_phase_flag: 0,
            benefit_inclusion_flag: 0,
            msd_ot_contact_level: 1,
            mother_age,
            mother_cps_contact_level: 1,
            deprivation_index: DeprivationIndex::Decile(5),
            n_children_reported: 1,
            n_sibling_prev_notifications: 0,
            notifier_role: NotifierRole::Family,
            outcome: 0,
        }
    }

    fn cohort(ages: &[Option<f64>]) -> Cohort {
        Cohort {
            records: ages.iter().map(|&a| record(a)).collect(),
            source_id: "t".into(),
        }
    }

    #[test]
    fn global_imputation_uses_observed_mean() {
        let c = cohort(&[Some(20.0), Some(40.0), None]);
        let out = impute_mother_age_global(&c).unwrap();
        assert_eq!(out.records[2].mother_age, Some(30.0));
        assert_eq!(out.records[0].mother_age, Some(20.0));
    }

    #[test]
    fn global_imputation_identity_when_complete() {
        let c = cohort(&[Some(20.0), Some(40.0)]);
        let out = impute_mother_age_global(&c).unwrap();
        assert_eq!(out.records, c.records);
    }

    #[test]
    fn global_imputation_all_missing_errors() {
        let c = cohort(&[None, None]);
        assert!(matches!(
            impute_mother_age_global(&c),
            Err(PreprocessError::AllMissing)
        ));
    }

    #[test]
    fn clusterwise_imputation_uses_cluster_means() {
        let c = cohort(&[Some(30.0), None, Some(40.0), None]);
        let out = impute_mother_age_clusterwise(&c, &[0, 0, 1, 1]).unwrap();
        assert_eq!(out.records[1].mother_age, Some(30.0));
        assert_eq!(out.records[3].mother_age, Some(40.0));
    }

    #[test]
    fn clusterwise_empty_cluster_falls_back_to_global() {
        let c = cohort(&[Some(30.0), Some(50.0), None]);
        let out = impute_mother_age_clusterwise(&c, &[0, 0, 1]).unwrap();
        assert_eq!(out.records[2].mother_age, Some(40.0));
    }

    #[test]
    fn clusterwise_single_cluster_equals_global() {
        let c = cohort(&[Some(25.0), None, Some(35.0)]);
        let global = impute_mother_age_global(&c).unwrap();
        let clustered = impute_mother_age_clusterwise(&c, &[0, 0, 0]).unwrap();
        assert_eq!(global.records, clustered.records);
    }

    #[test]
    fn imputation_is_idempotent() {
        let c = cohort(&[Some(20.0), None, Some(40.0)]);
        let once = impute_mother_age_global(&c).unwrap();
        let twice = impute_mother_age_global(&once).unwrap();
        assert_eq!(once.records, twice.records);
    }

    #[test]
    fn encoded_width_counts_passthrough_and_one_hot() {
        // 16 numeric/binary/ordinal pass-through columns plus one-hot
        // expansions with the reference level dropped:
        // gender 3-1, ethnic 6-1, deprivation 11-1, notifier 11-1.
        let expected = 16 + (3 - 1) + (6 - 1) + (11 - 1) + (11 - 1);
        let c = cohort(&[Some(30.0)]);
        let m = encode_design_matrix(&c).unwrap();
        assert_eq!(m.n_cols(), expected);
        assert_eq!(m.n_cols(), 43);
    }

    #[test]
    fn unknown_category_gets_own_indicator() {
        let mut r = record(Some(30.0));
        r.gender = Gender::Unknown;
        let c = Cohort {
            records: vec![r],
            source_id: "t".into(),
        };
        let m = encode_design_matrix(&c).unwrap();
        let ju = m.column_index("gender_Unknown").unwrap();
        let jf = m.column_index("gender_Female").unwrap();
        assert_eq!(m.data[(0, ju)], 1.0);
        assert_eq!(m.data[(0, jf)], 0.0);
    }

    #[test]
    fn outcome_does_not_affect_rows() {
        let mut a = record(Some(30.0));
        let mut b = record(Some(30.0));
        a.outcome = 0;
        b.outcome = 1;
        let c = Cohort {
            records: vec![a, b],
            source_id: "t".into(),
        };
        let m = encode_design_matrix(&c).unwrap();
        assert_eq!(m.data.row(0), m.data.row(1));
    }

    #[test]
    fn unimputed_missing_rejected_by_encoder() {
        let c = cohort(&[None]);
        assert!(matches!(
            encode_design_matrix(&c),
            Err(PreprocessError::UnimputedMissing(0))
        ));
    }

    #[test]
    fn encoding_separates_any_predictor_difference() {
        let mut a = record(Some(30.0));
        let mut b = record(Some(30.0));
        b.deprivation_index = DeprivationIndex::Unknown;
        a.outcome = 1; // outcome difference must not matter
        let c = Cohort {
            records: vec![a, b],
            source_id: "t".into(),
        };
        let m = encode_design_matrix(&c).unwrap();
        assert_ne!(m.data.row(0), m.data.row(1));
    }

    fn matrix(cols: Vec<(&str, Vec<f64>)>) -> DesignMatrix {
        let n = cols[0].1.len();
        let mut data = Array2::zeros((n, cols.len()));
        for (j, (_, v)) in cols.iter().enumerate() {
            for (i, &x) in v.iter().enumerate() {
                data[(i, j)] = x;
            }
        }
        DesignMatrix {
            data,
            column_names: cols.iter().map(|(n, _)| n.to_string()).collect(),
            row_map: (0..n).collect(),
        }
    }

    #[test]
    fn standardizer_symmetric_three_point() {
        let m = matrix(vec![("x", vec![1.0, 2.0, 3.0])]);
        let s = fit_standardizer(&m, &["x"]).unwrap();
        let out = apply_standardizer(&s, &m).unwrap();
        let col: Vec<f64> = out.data.column(0).to_vec();
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn standardizer_constant_column_flagged() {
        let m = matrix(vec![("x", vec![5.0, 5.0, 5.0])]);
        let s = fit_standardizer(&m, &["x"]).unwrap();
        assert!(s.constant[0]);
        assert_eq!(s.scales[0], 1.0);
        let out = apply_standardizer(&s, &m).unwrap();
        assert!(out.data.column(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn standardizer_inverse_recovers_values() {
        let m = matrix(vec![("x", vec![3.0, -1.5, 8.25, 0.0])]);
        let s = fit_standardizer(&m, &["x"]).unwrap();
        let out = apply_standardizer(&s, &m).unwrap();
        for (i, &orig) in m.data.column(0).iter().enumerate() {
            let back = out.data[(i, 0)] * s.scales[0] + s.means[0];
            assert!((back - orig).abs() <= 1e-12);
        }
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let m = matrix(vec![("x", vec![4.0, 9.0, -2.0, 7.5, 0.25])]);
        let s = fit_standardizer(&m, &["x"]).unwrap();
        let out = apply_standardizer(&s, &m).unwrap();
        let n = out.n_rows() as f64;
        let mean = out.data.column(0).sum() / n;
        let var = out
            .data
            .column(0)
            .iter()
            .map(|&x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (n - 1.0);
        assert!(mean.abs() <= 1e-12);
        assert!((var - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let s = split_train_test(10, 0.7, 1, None).unwrap();
        assert_eq!(s.train.len(), 7);
        assert_eq!(s.test.len(), 3);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_train_test(100, 0.7, 42, None).unwrap();
        let b = split_train_test(100, 0.7, 42, None).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn stratified_split_preserves_prevalence() {
        let labels: Vec<u8> = (0..100).map(|i| if i < 48 { 1 } else { 0 }).collect();
        let s = split_train_test(100, 0.7, 7, Some(&labels)).unwrap();
        let pos_train = s.train.iter().filter(|&&i| labels[i] == 1).count();
        assert!((33..=35).contains(&pos_train), "got {}", pos_train);
        assert_eq!(s.train.len(), 70);
    }

    #[test]
    fn degenerate_split_rejected() {
        assert!(matches!(
            split_train_test(1, 0.7, 0, None),
            Err(PreprocessError::DegenerateSplit { .. })
        ));
    }

    proptest! {
        #[test]
        fn split_partitions_rows(n in 2usize..500, seed in 0u64..1000, stratified in any::<bool>()) {
            let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
            let s = split_train_test(n, 0.7, seed, if stratified { Some(&labels) } else { None });
            prop_assume!(s.is_ok());
            let s = s.unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(s.test.iter()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len(), (0.7 * n as f64).round() as usize);
        }
    }
}
