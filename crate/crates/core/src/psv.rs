//! Challenge-format pipe-separated patient files.
//!
//! Each file holds one patient: a header line naming the 40 clinical variables
//! and `SepsisLabel`, then one line per hour. Missing values are spelled `NaN`.
//! Columns are bound by header name, so files with a different column order
//! parse to the same record.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const N_NUMERIC: usize = 37;
pub const N_CATEGORICAL: usize = 3;
pub const N_VARIABLES: usize = N_NUMERIC + N_CATEGORICAL;

pub const LABEL_COLUMN: &str = "SepsisLabel";
pub const MISSING_TOKEN: &str = "NaN";
pub const PREDICTION_HEADER: &str = "PredictedProbability|PredictedLabel";

/// The 37 numeric variables in canonical order: 8 vitals, 26 labs, then
/// Age, HospAdmTime and ICULOS.
pub const NUMERIC_NAMES: [&str; N_NUMERIC] = [
    "HR",
    "O2Sat",
    "Temp",
    "SBP",
    "MAP",
    "DBP",
    "Resp",
    "EtCO2",
    "BaseExcess",
    "HCO3",
    "FiO2",
    "pH",
    "PaCO2",
    "SaO2",
    "AST",
    "BUN",
    "Alkalinephos",
    "Calcium",
    "Chloride",
    "Creatinine",
    "Bilirubin_direct",
    "Glucose",
    "Lactate",
    "Magnesium",
    "Phosphate",
    "Potassium",
    "Bilirubin_total",
    "TroponinI",
    "Hct",
    "Hgb",
    "PTT",
    "WBC",
    "Fibrinogen",
    "Platelets",
    "Age",
    "HospAdmTime",
    "ICULOS",
];

/// Binary variables, in the order used for categorical relabeling.
pub const CATEGORICAL_NAMES: [&str; N_CATEGORICAL] = ["Gender", "Unit1", "Unit2"];

/// Column order used when this crate writes a patient file.
pub const CHALLENGE_COLUMN_ORDER: [&str; N_VARIABLES + 1] = [
    "HR",
    "O2Sat",
    "Temp",
    "SBP",
    "MAP",
    "DBP",
    "Resp",
    "EtCO2",
    "BaseExcess",
    "HCO3",
    "FiO2",
    "pH",
    "PaCO2",
    "SaO2",
    "AST",
    "BUN",
    "Alkalinephos",
    "Calcium",
    "Chloride",
    "Creatinine",
    "Bilirubin_direct",
    "Glucose",
    "Lactate",
    "Magnesium",
    "Phosphate",
    "Potassium",
    "Bilirubin_total",
    "TroponinI",
    "Hct",
    "Hgb",
    "PTT",
    "WBC",
    "Fibrinogen",
    "Platelets",
    "Age",
    "Gender",
    "Unit1",
    "Unit2",
    "HospAdmTime",
    "ICULOS",
    LABEL_COLUMN,
];

#[derive(Debug, Clone, PartialEq)]
pub struct HourRow {
    pub numeric: [Option<f64>; N_NUMERIC],
    pub categorical: [Option<u8>; N_CATEGORICAL],
    pub label: bool,
}

impl HourRow {
    pub fn empty() -> Self {
        HourRow {
            numeric: [None; N_NUMERIC],
            categorical: [None; N_CATEGORICAL],
            label: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub rows: Vec<HourRow>,
}

impl PatientRecord {
    pub fn n_hours(&self) -> usize {
        self.rows.len()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn is_septic(&self) -> bool {
        self.rows.iter().any(|r| r.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DatasetSummary {
    pub n_patients: usize,
    pub n_septic: usize,
    pub n_rows: usize,
    pub n_positive_rows: usize,
}

impl DatasetSummary {
    pub fn positive_row_fraction(&self) -> f64 {
        if self.n_rows == 0 {
            0.0
        } else {
            self.n_positive_rows as f64 / self.n_rows as f64
        }
    }

    pub fn add_record(&mut self, record: &PatientRecord) {
        self.n_patients += 1;
        self.n_rows += record.n_hours();
        let positives = record.rows.iter().filter(|r| r.label).count();
        self.n_positive_rows += positives;
        if positives > 0 {
            self.n_septic += 1;
        }
    }

    pub fn merge(self, other: DatasetSummary) -> DatasetSummary {
        DatasetSummary {
            n_patients: self.n_patients + other.n_patients,
            n_septic: self.n_septic + other.n_septic,
            n_rows: self.n_rows + other.n_rows,
            n_positive_rows: self.n_positive_rows + other.n_positive_rows,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Numeric(usize),
    Categorical(usize),
    Label,
}

fn slot_for(name: &str) -> Option<Slot> {
    if name == LABEL_COLUMN {
        return Some(Slot::Label);
    }
    if let Some(i) = NUMERIC_NAMES.iter().position(|n| *n == name) {
        return Some(Slot::Numeric(i));
    }
    CATEGORICAL_NAMES
        .iter()
        .position(|n| *n == name)
        .map(Slot::Categorical)
}

fn bind_header(header: &str) -> Result<Vec<Slot>> {
    let mut slots = Vec::new();
    let mut seen = HashMap::new();
    for (col, name) in header.split('|').enumerate() {
        let name = name.trim();
        let slot = slot_for(name)
            .ok_or_else(|| Error::Schema(format!("unknown column `{name}` at position {col}")))?;
        if seen.insert(name.to_string(), col).is_some() {
            return Err(Error::Schema(format!("duplicate column `{name}`")));
        }
        slots.push(slot);
    }
    if !seen.contains_key(LABEL_COLUMN) {
        return Err(Error::Schema(format!("missing label column `{LABEL_COLUMN}`")));
    }
    let missing: Vec<&str> = NUMERIC_NAMES
        .iter()
        .chain(CATEGORICAL_NAMES.iter())
        .filter(|n| !seen.contains_key(**n))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing variable columns: {}",
            missing.join(", ")
        )));
    }
    Ok(slots)
}

fn parse_number(token: &str, line: usize, column: &str) -> Result<Option<f64>> {
    if token == MISSING_TOKEN {
        return Ok(None);
    }
    let value: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("non-numeric token `{token}` in column `{column}`"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value `{token}` in column `{column}`"),
        });
    }
    Ok(Some(value))
}

fn parse_binary(token: &str, line: usize, column: &str) -> Result<Option<u8>> {
    match parse_number(token, line, column)? {
        None => Ok(None),
        Some(0.0) => Ok(Some(0)),
        Some(1.0) => Ok(Some(1)),
        Some(v) => Err(Error::Parse {
            line,
            message: format!("column `{column}` must be 0 or 1, got {v}"),
        }),
    }
}

/// Parses one patient file. Line numbers in errors are 1-based and count the header.
pub fn parse_patient_file(patient_id: &str, text: &str) -> Result<PatientRecord> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => return Err(Error::Schema("empty file, no header".into())),
        }
    };
    let slots = bind_header(header.trim_end_matches('\r'))?;
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != slots.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", slots.len(), fields.len()),
            });
        }
        let mut row = HourRow::empty();
        for (slot, token) in slots.iter().zip(fields) {
            let token = token.trim();
            match *slot {
                Slot::Numeric(j) => row.numeric[j] = parse_number(token, line_no, NUMERIC_NAMES[j])?,
                Slot::Categorical(c) => {
                    row.categorical[c] = parse_binary(token, line_no, CATEGORICAL_NAMES[c])?
                }
                Slot::Label => {
                    row.label = parse_binary(token, line_no, LABEL_COLUMN)?
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            message: "label is missing".into(),
                        })?
                        == 1
                }
            }
        }
        rows.push(row);
    }
    Ok(PatientRecord {
        patient_id: patient_id.to_string(),
        rows,
    })
}

/// Derives the patient id from a file name: `p000123.psv` becomes `p000123`.
pub fn patient_id_from_filename(name: &str) -> String {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    match base.rfind('.') {
        Some(dot) if dot > 0 => base[..dot].to_string(),
        _ => base.to_string(),
    }
}

/// Writes a record in the challenge column order. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_patient_file(record: &PatientRecord) -> String {
    let mut out = CHALLENGE_COLUMN_ORDER.join("|");
    out.push('\n');
    for row in &record.rows {
        let mut first = true;
        for name in CHALLENGE_COLUMN_ORDER {
            if !first {
                out.push('|');
            }
            first = false;
            match slot_for(name).expect("canonical column") {
                Slot::Numeric(j) => match row.numeric[j] {
                    Some(v) => write!(out, "{v}").unwrap(),
                    None => out.push_str(MISSING_TOKEN),
                },
                Slot::Categorical(c) => match row.categorical[c] {
                    Some(v) => write!(out, "{v}").unwrap(),
                    None => out.push_str(MISSING_TOKEN),
                },
                Slot::Label => out.push(if row.label { '1' } else { '0' }),
            }
        }
        out.push('\n');
    }
    out
}

/// Aggregates counts over `(file name, file text)` pairs.
pub fn scan_dataset<S: AsRef<str>, T: AsRef<str>>(files: &[(S, T)]) -> Result<DatasetSummary> {
    let mut summary = DatasetSummary::default();
    for (name, text) in files {
        let name = name.as_ref();
        let record = parse_patient_file(&patient_id_from_filename(name), text.as_ref())
            .map_err(|e| e.in_file(name))?;
        summary.add_record(&record);
    }
    Ok(summary)
}

pub fn write_prediction_file(probs: &[f64], labels: &[bool]) -> Result<String> {
    if probs.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut out = String::with_capacity(16 * (probs.len() + 2));
    out.push_str(PREDICTION_HEADER);
    out.push('\n');
    for (p, &l) in probs.iter().zip(labels) {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::contract(format!("probability {p} outside [0, 1]")));
        }
        writeln!(out, "{p:.4}|{}", u8::from(l)).unwrap();
    }
    Ok(out)
}

/// Reads a prediction file back into `(probabilities, binary predictions)`.
pub fn parse_prediction_file(text: &str) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == PREDICTION_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Schema(format!(
                "expected header `{PREDICTION_HEADER}`, found `{h}`"
            )))
        }
        None => return Err(Error::Schema("empty prediction file".into())),
    }
    let mut probs = Vec::new();
    let mut preds = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut parts = line.split('|');
        let (Some(p), Some(l), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected 2 fields".into(),
            });
        };
        let p = parse_number(p.trim(), line_no, "PredictedProbability")?.ok_or(Error::Parse {
            line: line_no,
            message: "missing probability".into(),
        })?;
        let l = parse_binary(l.trim(), line_no, "PredictedLabel")?.ok_or(Error::Parse {
            line: line_no,
            message: "missing label".into(),
        })?;
        probs.push(p);
        preds.push(l == 1);
    }
    Ok((probs, preds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        CHALLENGE_COLUMN_ORDER.join("|")
    }

    fn full_line(label: u8) -> String {
        let mut fields: Vec<String> = (0..N_VARIABLES).map(|i| format!("{}", i as f64 + 0.5)).collect();
        // Gender, Unit1, Unit2 sit at positions 35..38 in the challenge order.
        fields[35] = "1".into();
        fields[36] = "0".into();
        fields[37] = "1".into();
        fields.push(label.to_string());
        fields.join("|")
    }

    #[test]
    fn minimal_file_has_one_hour() {
        let text = format!("{}\n{}\n", header(), full_line(0));
        let rec = parse_patient_file("p1", &text).unwrap();
        assert_eq!(rec.n_hours(), 1);
        assert_eq!(rec.rows[0].numeric[0], Some(0.5));
        assert_eq!(rec.rows[0].categorical, [Some(1), Some(0), Some(1)]);
        assert!(!rec.rows[0].label);
    }

    #[test]
    fn nan_token_becomes_absent() {
        let line = full_line(1).replacen("0.5", "NaN", 1);
        let text = format!("{}\n{}\n", header(), line);
        let rec = parse_patient_file("p1", &text).unwrap();
        assert_eq!(rec.rows[0].numeric[0], None);
        assert!(rec.rows[0].label);
    }

    #[test]
    fn missing_label_column_is_schema_error() {
        let hdr = CHALLENGE_COLUMN_ORDER[..N_VARIABLES].join("|");
        let err = parse_patient_file("p1", &format!("{hdr}\n")).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let text = format!("{}\n{}\n1|2|3\n", header(), full_line(0));
        match parse_patient_file("p1", &text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_numeric_and_infinite_tokens_rejected() {
        let bad = full_line(0).replacen("0.5", "abc", 1);
        assert!(matches!(
            parse_patient_file("p", &format!("{}\n{bad}\n", header())),
            Err(Error::Parse { line: 2, .. })
        ));
        let inf = full_line(0).replacen("0.5", "inf", 1);
        assert!(parse_patient_file("p", &format!("{}\n{inf}\n", header())).is_err());
    }

    #[test]
    fn scientific_notation_accepted() {
        let line = full_line(0).replacen("0.5", "1.5e2", 1);
        let rec = parse_patient_file("p", &format!("{}\n{line}\n", header())).unwrap();
        assert_eq!(rec.rows[0].numeric[0], Some(150.0));
    }

    #[test]
    fn column_order_is_bound_by_name() {
        let text = format!("{}\n{}\n", header(), full_line(1));
        let rec = parse_patient_file("p", &text).unwrap();
        // Reverse every column.
        let rev = |l: &str| l.split('|').rev().collect::<Vec<_>>().join("|");
        let shuffled = format!("{}\n{}\n", rev(&header()), rev(&full_line(1)));
        assert_eq!(parse_patient_file("p", &shuffled).unwrap(), rec);
    }

    #[test]
    fn categorical_must_be_binary() {
        let mut fields: Vec<String> = full_line(0).split('|').map(String::from).collect();
        fields[35] = "2".into();
        let text = format!("{}\n{}\n", header(), fields.join("|"));
        assert!(parse_patient_file("p", &text).is_err());
    }

    #[test]
    fn prediction_file_examples() {
        assert_eq!(
            write_prediction_file(&[0.5], &[true]).unwrap(),
            "PredictedProbability|PredictedLabel\n0.5000|1\n"
        );
        assert_eq!(
            write_prediction_file(&[], &[]).unwrap(),
            "PredictedProbability|PredictedLabel\n"
        );
        let three = write_prediction_file(&[0.1, 0.9], &[false, true]).unwrap();
        let lines: Vec<&str> = three.lines().collect();
        assert_eq!(lines, vec![PREDICTION_HEADER, "0.1000|0", "0.9000|1"]);
        assert!(matches!(
            write_prediction_file(&[0.1], &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn prediction_file_parses_back() {
        let text = write_prediction_file(&[0.25, 0.75], &[false, true]).unwrap();
        let (p, l) = parse_prediction_file(&text).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
        assert_eq!(l, vec![false, true]);
    }

    #[test]
    fn scan_counts_and_empty_listing() {
        let empty: [(&str, &str); 0] = [];
        assert_eq!(scan_dataset(&empty).unwrap(), DatasetSummary::default());
        let a = format!("{}\n{}\n{}\n", header(), full_line(0), full_line(1));
        let b = format!("{}\n{}\n", header(), full_line(0));
        let s = scan_dataset(&[("a.psv", a.as_str()), ("b.psv", b.as_str())]).unwrap();
        assert_eq!(s.n_patients, 2);
        assert_eq!(s.n_septic, 1);
        assert_eq!(s.n_rows, 3);
        assert!((s.positive_row_fraction() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scan_error_names_file() {
        let bad = format!("{}\n1|2\n", header());
        let err = scan_dataset(&[("broken.psv", bad.as_str())]).unwrap_err();
        assert!(err.to_string().starts_with("broken.psv"), "{err}");
    }

    #[test]
    fn patient_id_is_file_stem() {
        assert_eq!(patient_id_from_filename("data/p000042.psv"), "p000042");
        assert_eq!(patient_id_from_filename("p7"), "p7");
    }
}
