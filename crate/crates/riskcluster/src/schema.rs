//! Cohort data model and CSV ingestion.
//!
//! A [`NotificationRecord`] describes one child's care-and-protection
//! notification: child, caregiver, family and notifier predictors plus the
//! binary two-year outcome. Cohorts are read from and written to a fixed
//! 21-column CSV layout (see [`CSV_COLUMNS`]).

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// CSV column names, in on-disk order.
pub const CSV_COLUMNS: [&str; 21] = [
    "child_age",
    "gender",
    "ethnic_group",
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
    "deprivation_index",
    "n_children_reported",
    "n_sibling_prev_notifications",
    "notifier_role",
    "outcome",
];

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} value {:?}", stringify!($name), other)),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum!(Gender {
    Male => "Male",
    Female => "Female",
    Unknown => "Unknown",
});

string_enum!(EthnicGroup {
    Maori => "Maori",
    MaoriAndPacific => "MaoriAndPacific",
    Pacific => "Pacific",
    European => "European",
    Other => "Other",
    Unknown => "Unknown",
});

string_enum!(NotifierRole {
    Anonymous => "Anonymous",
    Court => "Court",
    Family => "Family",
    HealthProfessionals => "HealthProfessionals",
    MidwifeOrPlunket => "MidwifeOrPlunket",
    NeighboursOrFriends => "NeighboursOrFriends",
    PoliceFVI => "PoliceFVI",
    PoliceOther => "PoliceOther",
    SchoolOrECC => "SchoolOrECC",
    Unknown => "Unknown",
    Others => "Others",
});

/// NZ deprivation decile 1..10, or Unknown for a missing census link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeprivationIndex {
    Decile(u8),
    Unknown,
}

impl DeprivationIndex {
    /// All eleven levels in declared order: 1..10 then Unknown.
    pub fn all() -> Vec<DeprivationIndex> {
        let mut v: Vec<_> = (1..=10).map(DeprivationIndex::Decile).collect();
        v.push(DeprivationIndex::Unknown);
        v
    }

    pub fn label(&self) -> String {
        match self {
            DeprivationIndex::Decile(d) => d.to_string(),
            DeprivationIndex::Unknown => "Unknown".to_string(),
        }
    }
}

impl FromStr for DeprivationIndex {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "Unknown" {
            return Ok(DeprivationIndex::Unknown);
        }
        match s.parse::<u8>() {
            Ok(d) if (1..=10).contains(&d) => Ok(DeprivationIndex::Decile(d)),
            _ => Err(format!("deprivation_index must be 1..10 or Unknown, got {:?}", s)),
        }
    }
}

impl fmt::Display for DeprivationIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One child's notification with predictors and the binary two-year outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct NotificationRecord {
    /// Age in whole years at notification, 0..=15.
    pub child_age: u8,
    pub gender: Gender,
    pub ethnic_group: EthnicGroup,
    pub prev_risk_safety_flag: u8,
    pub n_prev_notifications: u32,
    pub no_prev_notification_flag: u8,
    pub days_since_last_intake: u32,
    pub no_prev_intake_flag: u8,
    pub n_maltreatment_findings: u32,
    pub no_prev_maltreatment_flag: u8,
    pub prev_custody_flag: u8,
    pub open_phase_flag: u8,
    pub benefit_inclusion_flag: u8,
    /// Combined MSD/OT contact history level, 1..=4.
    pub msd_ot_contact_level: u8,
    /// Mother's age in years; `None` marks a missing value.
    pub mother_age: Option<f64>,
    /// Mother's own childhood CPS contact level, 1..=4.
    pub mother_cps_contact_level: u8,
    pub deprivation_index: DeprivationIndex,
    /// Children on the notification including the index child, >= 1.
    pub n_children_reported: u32,
    pub n_sibling_prev_notifications: u32,
    pub notifier_role: NotifierRole,
    /// 1 iff a care-and-protection event occurred within two years.
    pub outcome: u8,
}

/// An ordered, immutable collection of notification records.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub records: Vec<NotificationRecord>,
    pub source_id: String,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}, column {column}: {reason}")]
    BadValue {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One invariant violation found by [`validate_cohort`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub record_index: usize,
    pub field: &'static str,
    pub description: String,
}

fn parse_field<T: FromStr>(
    raw: &str,
    row: usize,
    column: &str,
) -> Result<T, SchemaError>
where
    T::Err: fmt::Display,
{
    raw.trim().parse::<T>().map_err(|e| SchemaError::BadValue {
        row,
        column: column.to_string(),
        reason: e.to_string(),
    })
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8, SchemaError> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(SchemaError::BadValue {
            row,
            column: column.to_string(),
            reason: format!("expected 0 or 1, got {:?}", other),
        }),
    }
}

fn parse_level(raw: &str, row: usize, column: &str) -> Result<u8, SchemaError> {
    let v: u8 = parse_field(raw, row, column)?;
    if (1..=4).contains(&v) {
        Ok(v)
    } else {
        Err(SchemaError::BadValue {
            row,
            column: column.to_string(),
            reason: format!("level must be 1..4, got {}", v),
        })
    }
}

/// Parses a cohort CSV. Every row becomes a validated record; an empty
/// `mother_age` cell becomes the missing marker. Row order is preserved.
pub fn parse_cohort_csv(path: &Path) -> Result<Cohort, SchemaError> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));

    let headers = reader.headers()?.clone();
    let mut column_pos = Vec::with_capacity(CSV_COLUMNS.len());
    for name in CSV_COLUMNS {
        match headers.iter().position(|h| h == name) {
            Some(pos) => column_pos.push(pos),
            None => return Err(SchemaError::MissingColumn(name.to_string())),
        }
    }

    let mut records = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let raw = result?;
        let cell = |col: usize| raw.get(column_pos[col]).unwrap_or("");

        let child_age: u8 = parse_field(cell(0), row, "child_age")?;
        if child_age > 15 {
            return Err(SchemaError::BadValue {
                row,
                column: "child_age".to_string(),
                reason: format!("child_age must be 0..15, got {}", child_age),
            });
        }
        let mother_age = {
            let s = cell(14).trim();
            if s.is_empty() {
                None
            } else {
                Some(parse_field::<f64>(s, row, "mother_age")?)
            }
        };
        records.push(NotificationRecord {
            child_age,
            gender: parse_field(cell(1), row, "gender")?,
            ethnic_group: parse_field(cell(2), row, "ethnic_group")?,
            prev_risk_safety_flag: parse_binary(cell(3), row, "prev_risk_safety_flag")?,
            n_prev_notifications: parse_field(cell(4), row, "n_prev_notifications")?,
            no_prev_notification_flag: parse_binary(cell(5), row, "no_prev_notification_flag")?,
            days_since_last_intake: parse_field(cell(6), row, "days_since_last_intake")?,
            no_prev_intake_flag: parse_binary(cell(7), row, "no_prev_intake_flag")?,
            n_maltreatment_findings: parse_field(cell(8), row, "n_maltreatment_findings")?,
            no_prev_maltreatment_flag: parse_binary(cell(9), row, "no_prev_maltreatment_flag")?,
            prev_custody_flag: parse_binary(cell(10), row, "prev_custody_flag")?,
            open_phase_flag: parse_binary(cell(11), row, "open_phase_flag")?,
            benefit_inclusion_flag: parse_binary(cell(12), row, "benefit_inclusion_flag")?,
            msd_ot_contact_level: parse_level(cell(13), row, "msd_ot_contact_level")?,
            mother_age,
            mother_cps_contact_level: parse_level(cell(15), row, "mother_cps_contact_level")?,
            deprivation_index: parse_field(cell(16), row, "deprivation_index")?,
            n_children_reported: {
                let n: u32 = parse_field(cell(17), row, "n_children_reported")?;
                if n == 0 {
                    return Err(SchemaError::BadValue {
                        row,
                        column: "n_children_reported".to_string(),
                        reason: "n_children_reported must be >= 1".to_string(),
                    });
                }
                n
            },
            n_sibling_prev_notifications: parse_field(
                cell(18),
                row,
                "n_sibling_prev_notifications",
            )?,
            notifier_role: parse_field(cell(19), row, "notifier_role")?,
            outcome: parse_binary(cell(20), row, "outcome")?,
        });
    }

    if records.is_empty() {
        return Err(SchemaError::EmptyFile);
    }
    let source_id = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cohort".to_string());
    Ok(Cohort { records, source_id })
}

/// Writes a cohort in the canonical CSV layout. Missing `mother_age` becomes
/// an empty cell; re-parsing yields field-identical records.
pub fn write_cohort_csv(cohort: &Cohort, path: &Path) -> Result<(), SchemaError> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in &cohort.records {
        let mother_age = match r.mother_age {
            Some(a) => format_f64(a),
            None => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.child_age,
            r.gender,
            r.ethnic_group,
            r.prev_risk_safety_flag,
            r.n_prev_notifications,
            r.no_prev_notification_flag,
            r.days_since_last_intake,
            r.no_prev_intake_flag,
            r.n_maltreatment_findings,
            r.no_prev_maltreatment_flag,
            r.prev_custody_flag,
            r.open_phase_flag,
            r.benefit_inclusion_flag,
            r.msd_ot_contact_level,
            mother_age,
            r.mother_cps_contact_level,
            r.deprivation_index,
            r.n_children_reported,
            r.n_sibling_prev_notifications,
            r.notifier_role,
            r.outcome,
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Round-trippable decimal formatting for f64 values.
pub(crate) fn format_f64(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    let mut s = format!("{}", v);
    if s.parse::<f64>() != Ok(v) {
        s = format!("{:?}", v);
    }
    s
}

/// Checks every record against the type invariants. An empty result means
/// the cohort is valid; violations are data, not failures.
pub fn validate_cohort(cohort: &Cohort) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, r) in cohort.records.iter().enumerate() {
        let mut push = |field: &'static str, description: String| {
            out.push(Violation {
                record_index: i,
                field,
                description,
            });
        };
        if r.child_age > 15 {
            push("child_age", format!("child_age {} out of 0..15", r.child_age));
        }
        if (r.no_prev_notification_flag == 1) != (r.n_prev_notifications == 0) {
            push(
                "no_prev_notification_flag",
                format!(
                    "flag {} inconsistent with n_prev_notifications {}",
                    r.no_prev_notification_flag, r.n_prev_notifications
                ),
            );
        }
        if (r.no_prev_maltreatment_flag == 1) != (r.n_maltreatment_findings == 0) {
            push(
                "no_prev_maltreatment_flag",
                format!(
                    "flag {} inconsistent with n_maltreatment_findings {}",
                    r.no_prev_maltreatment_flag, r.n_maltreatment_findings
                ),
            );
        }
        for (field, v) in [
            ("prev_risk_safety_flag", r.prev_risk_safety_flag),
            ("no_prev_notification_flag", r.no_prev_notification_flag),
            ("no_prev_intake_flag", r.no_prev_intake_flag),
            ("no_prev_maltreatment_flag", r.no_prev_maltreatment_flag),
            ("prev_custody_flag", r.prev_custody_flag),
            ("open_phase_flag", r.open_phase_flag),
            ("benefit_inclusion_flag", r.benefit_inclusion_flag),
            ("outcome", r.outcome),
        ] {
            if v > 1 {
                push(field, format!("binary field has value {}", v));
            }
        }
        if !(1..=4).contains(&r.msd_ot_contact_level) {
            push(
                "msd_ot_contact_level",
                format!("level {} out of 1..4", r.msd_ot_contact_level),
            );
        }
        if !(1..=4).contains(&r.mother_cps_contact_level) {
            push(
                "mother_cps_contact_level",
                format!("level {} out of 1..4", r.mother_cps_contact_level),
            );
        }
        if r.n_children_reported == 0 {
            push("n_children_reported", "count must be >= 1".to_string());
        }
        if let Some(a) = r.mother_age {
            if !a.is_finite() || a < 0.0 {
                push("mother_age", format!("mother_age {} not a valid age", a));
            }
        }
    }
    out
}
