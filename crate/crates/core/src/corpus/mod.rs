//! Note ingestion, cohort selection and per-patient document assembly.

mod synth;

pub use synth::{synth_corpus, MarkerReport, MarkerToken, SynthConfig, DEATH_MARKERS, SURVIVAL_MARKERS};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Free-text note categories found in the source database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    NursingOther,
    Nursing,
    Radiology,
    Physician,
    Respiratory,
    General,
    Nutrition,
    RehabServices,
    SocialWork,
    CaseManagement,
    Consult,
    Pharmacy,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::NursingOther,
        Category::Nursing,
        Category::Radiology,
        Category::Physician,
        Category::Respiratory,
        Category::General,
        Category::Nutrition,
        Category::RehabServices,
        Category::SocialWork,
        Category::CaseManagement,
        Category::Consult,
        Category::Pharmacy,
    ];

    pub fn is_nursing(self) -> bool {
        matches!(self, Category::Nursing | Category::NursingOther)
    }

    /// Display name as it appears in the source database.
    pub fn label(self) -> &'static str {
        match self {
            Category::NursingOther => "Nursing/other",
            Category::Nursing => "Nursing",
            Category::Radiology => "Radiology",
            Category::Physician => "Physician",
            Category::Respiratory => "Respiratory",
            Category::General => "General",
            Category::Nutrition => "Nutrition",
            Category::RehabServices => "Rehab Services",
            Category::SocialWork => "Social Work",
            Category::CaseManagement => "Case Management",
            Category::Consult => "Consult",
            Category::Pharmacy => "Pharmacy",
        }
    }

    /// Case-insensitive parse that ignores spaces and punctuation, so
    /// `"Nursing/other"`, `"nursing_other"` and `"NursingOther"` agree.
    pub fn parse(raw: &str) -> Option<Category> {
        let key: String = raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Category::ALL.into_iter().find(|c| {
            let canon: String = c
                .label()
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            canon == key
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One free-text note. Timestamps are UTC seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub patient_id: String,
    pub stay_id: String,
    pub admit_time: i64,
    pub chart_time: i64,
    pub category: Category,
    pub text: String,
}

impl Note {
    pub fn hours_since_admit(&self) -> f64 {
        (self.chart_time - self.admit_time) as f64 / 3600.0
    }
}

/// Stay-level attributes of a patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub stay_id: String,
    pub admit_time: i64,
    pub los_hours: f64,
    pub age_years: f64,
    /// 1 = death, 0 = survival.
    pub outcome: u8,
    /// 1 for the first ICU admission.
    pub admission_ordinal: u32,
}

/// Column names of the interchange CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub patient_id: String,
    pub stay_id: String,
    pub admit_time: String,
    pub chart_time: String,
    pub category: String,
    pub text: String,
    pub outcome: String,
    pub los_hours: String,
    pub age: String,
    pub admission_ordinal: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            patient_id: "patient_id".into(),
            stay_id: "stay_id".into(),
            admit_time: "admit_time".into(),
            chart_time: "chart_time".into(),
            category: "category".into(),
            text: "text".into(),
            outcome: "outcome".into(),
            los_hours: "los_hours".into(),
            age: "age".into(),
            admission_ordinal: "admission_ordinal".into(),
        }
    }
}

impl ColumnMap {
    /// Overrides one column name by its logical key (e.g. `"text"`).
    pub fn set(&mut self, key: &str, column: &str) -> Result<()> {
        let slot = match key {
            "patient_id" => &mut self.patient_id,
            "stay_id" => &mut self.stay_id,
            "admit_time" => &mut self.admit_time,
            "chart_time" => &mut self.chart_time,
            "category" => &mut self.category,
            "text" => &mut self.text,
            "outcome" => &mut self.outcome,
            "los_hours" => &mut self.los_hours,
            "age" => &mut self.age,
            "admission_ordinal" => &mut self.admission_ordinal,
            other => return Err(Error::Config(format!("unknown column key `{other}`"))),
        };
        *slot = column.to_owned();
        Ok(())
    }

    fn names(&self) -> [&str; 10] {
        [
            &self.patient_id,
            &self.stay_id,
            &self.admit_time,
            &self.chart_time,
            &self.category,
            &self.text,
            &self.outcome,
            &self.los_hours,
            &self.age,
            &self.admission_ordinal,
        ]
    }
}

/// A skipped input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowWarning {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub message: String,
}

/// Notes plus the stay records they belong to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoteStore {
    pub notes: Vec<Note>,
    /// One record per `(patient_id, stay_id)`, in first-seen order.
    pub stays: Vec<PatientRecord>,
    pub rows_read: usize,
    pub warnings: Vec<RowWarning>,
}

impl NoteStore {
    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut counts = BTreeMap::new();
        for n in &self.notes {
            *counts.entry(n.category).or_insert(0) += 1;
        }
        counts
    }

    fn stay_index(&self) -> HashMap<(&str, &str), &PatientRecord> {
        self.stays
            .iter()
            .map(|s| ((s.patient_id.as_str(), s.stay_id.as_str()), s))
            .collect()
    }

    /// Writes the store in the default interchange schema, one row per note.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let cols = ColumnMap::default();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(cols.names())?;
        let stays = self.stay_index();
        for n in &self.notes {
            let s = stays
                .get(&(n.patient_id.as_str(), n.stay_id.as_str()))
                .ok_or_else(|| Error::Data(format!("note for unknown stay {}", n.stay_id)))?;
            w.write_record([
                n.patient_id.clone(),
                n.stay_id.clone(),
                n.admit_time.to_string(),
                n.chart_time.to_string(),
                n.category.label().to_owned(),
                n.text.clone(),
                s.outcome.to_string(),
                s.los_hours.to_string(),
                s.age_years.to_string(),
                s.admission_ordinal.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Reads a note CSV from disk. See [`read_notes`].
pub fn load_notes(path: &Path, columns: &ColumnMap) -> Result<NoteStore> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_notes(file, columns)
}

/// Parses an RFC-4180 CSV with a header row.
///
/// Rows that fail to parse (bad timestamp, unknown category, empty text, ...)
/// are skipped and reported in [`NoteStore::warnings`]; a missing required
/// column fails the whole load.
pub fn read_notes<R: Read>(reader: R, columns: &ColumnMap) -> Result<NoteStore> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 10];
    for (slot, name) in idx.iter_mut().zip(columns.names()) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))?;
    }

    let mut store = NoteStore::default();
    let mut stay_pos: HashMap<(String, String), usize> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        store.rows_read += 1;
        let parsed = record
            .map_err(|e| e.to_string())
            .and_then(|r| parse_row(&r, &idx));
        match parsed {
            Ok((note, stay)) => {
                let key = (stay.patient_id.clone(), stay.stay_id.clone());
                match stay_pos.get(&key) {
                    Some(&p) => {
                        let known = &store.stays[p];
                        if known.outcome != stay.outcome
                            || known.admit_time != stay.admit_time
                            || known.admission_ordinal != stay.admission_ordinal
                        {
                            store.warnings.push(RowWarning {
                                row,
                                message: format!(
                                    "stay {} attributes disagree with an earlier row; keeping the first",
                                    stay.stay_id
                                ),
                            });
                        }
                    }
                    None => {
                        stay_pos.insert(key, store.stays.len());
                        store.stays.push(stay);
                    }
                }
                store.notes.push(note);
            }
            Err(message) => store.warnings.push(RowWarning { row, message }),
        }
    }
    if !store.warnings.is_empty() {
        log::warn!(
            "skipped {} of {} rows while loading notes",
            store.rows_read - store.notes.len(),
            store.rows_read
        );
    }
    Ok(store)
}

fn parse_row(r: &csv::StringRecord, idx: &[usize; 10]) -> Result<(Note, PatientRecord), String> {
    let field = |k: usize| r.get(idx[k]).map(str::trim).unwrap_or("");
    let patient_id = field(0);
    let stay_id = field(1);
    if patient_id.is_empty() || stay_id.is_empty() {
        return Err("empty patient or stay id".into());
    }
    let admit_time = parse_timestamp(field(2)).map_err(|e| format!("admit_time: {e}"))?;
    let chart_time = parse_timestamp(field(3)).map_err(|e| format!("chart_time: {e}"))?;
    let category =
        Category::parse(field(4)).ok_or_else(|| format!("unknown category `{}`", field(4)))?;
    let text = r.get(idx[5]).unwrap_or("");
    if text.trim().is_empty() {
        return Err("empty note text".into());
    }
    let outcome = match field(6) {
        "1" | "1.0" | "true" | "True" => 1,
        "0" | "0.0" | "false" | "False" => 0,
        other => return Err(format!("outcome `{other}` is not binary")),
    };
    let los_hours = parse_nonneg(field(7)).map_err(|e| format!("los_hours: {e}"))?;
    let age_years = parse_nonneg(field(8)).map_err(|e| format!("age: {e}"))?;
    let admission_ordinal: u32 = field(9)
        .parse()
        .ok()
        .filter(|&o| o >= 1)
        .ok_or_else(|| format!("admission_ordinal `{}` is not a positive integer", field(9)))?;
    Ok((
        Note {
            patient_id: patient_id.to_owned(),
            stay_id: stay_id.to_owned(),
            admit_time,
            chart_time,
            category,
            text: text.to_owned(),
        },
        PatientRecord {
            patient_id: patient_id.to_owned(),
            stay_id: stay_id.to_owned(),
            admit_time,
            los_hours,
            age_years,
            outcome,
            admission_ordinal,
        },
    ))
}

/// Integer UTC seconds, or `YYYY-MM-DD HH:MM:SS` (also with `T`) read as UTC.
pub fn parse_timestamp(raw: &str) -> Result<i64, String> {
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(secs);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(format!("unparseable timestamp `{raw}`"))
}

fn parse_nonneg(raw: &str) -> Result<f64, String> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("`{raw}` is not a non-negative number")),
    }
}

/// Counts of stays kept and dropped by each cohort rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub min_stay_hours: f64,
    pub require_nursing: bool,
    pub stays_considered: usize,
    pub retained: usize,
    pub dropped_readmission: usize,
    pub dropped_short_stay: usize,
    pub dropped_no_notes: usize,
    pub dropped_no_nursing: usize,
    pub dropped_duplicate_patient: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Patients passing the cohort rules with their notes in chart-time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub docs: BTreeMap<String, Vec<Note>>,
    pub summary: CohortSummary,
}

impl Cohort {
    /// Flattens the cohort back into a store (e.g. to re-apply the rules).
    pub fn to_store(&self) -> NoteStore {
        let notes: Vec<Note> = self
            .patients
            .iter()
            .flat_map(|p| self.docs[&p.patient_id].iter().cloned())
            .collect();
        NoteStore {
            rows_read: notes.len(),
            notes,
            stays: self.patients.clone(),
            warnings: Vec::new(),
        }
    }
}

/// Applies the cohort rules: first admission only, stay strictly longer than
/// `min_stay_hours`, at least one note, and (optionally) at least one nursing
/// note.
pub fn build_cohort(store: &NoteStore, min_stay_hours: f64, require_nursing: bool) -> Result<Cohort> {
    if !(min_stay_hours > 0.0) {
        return Err(Error::Config(format!(
            "min_stay_hours must be positive, got {min_stay_hours}"
        )));
    }
    let mut by_stay: HashMap<(&str, &str), Vec<&Note>> = HashMap::new();
    for n in &store.notes {
        by_stay
            .entry((n.patient_id.as_str(), n.stay_id.as_str()))
            .or_default()
            .push(n);
    }

    let mut summary = CohortSummary {
        min_stay_hours,
        require_nursing,
        stays_considered: store.stays.len(),
        ..CohortSummary::default()
    };
    let mut kept: BTreeMap<String, (PatientRecord, Vec<Note>)> = BTreeMap::new();
    for stay in &store.stays {
        if stay.admission_ordinal != 1 {
            summary.dropped_readmission += 1;
            continue;
        }
        if !(stay.los_hours > min_stay_hours) {
            summary.dropped_short_stay += 1;
            continue;
        }
        let notes = by_stay
            .get(&(stay.patient_id.as_str(), stay.stay_id.as_str()))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        if notes.is_empty() {
            summary.dropped_no_notes += 1;
            continue;
        }
        if require_nursing && !notes.iter().any(|n| n.category.is_nursing()) {
            summary.dropped_no_nursing += 1;
            continue;
        }
        let mut notes: Vec<Note> = notes.iter().map(|&n| n.clone()).collect();
        notes.sort_by_key(|n| n.chart_time);
        match kept.get(&stay.patient_id) {
            Some((prev, _)) if prev.admit_time <= stay.admit_time => {
                summary.dropped_duplicate_patient += 1;
            }
            Some(_) => {
                summary.dropped_duplicate_patient += 1;
                kept.insert(stay.patient_id.clone(), (stay.clone(), notes));
            }
            None => {
                kept.insert(stay.patient_id.clone(), (stay.clone(), notes));
            }
        }
    }

    let mut patients = Vec::with_capacity(kept.len());
    let mut docs = BTreeMap::new();
    for (pid, (rec, notes)) in kept {
        if rec.outcome == 1 {
            summary.positives += 1;
        } else {
            summary.negatives += 1;
        }
        patients.push(rec);
        docs.insert(pid, notes);
    }
    summary.retained = patients.len();
    Ok(Cohort {
        patients,
        docs,
        summary,
    })
}

/// A patient's nursing notes inside the time window, joined into one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDoc {
    pub patient_id: String,
    pub text: String,
    pub outcome: u8,
    pub n_notes: usize,
}

impl PatientDoc {
    /// Whitespace-delimited word count of the raw text.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDocs {
    pub window_hours: f64,
    pub docs: Vec<PatientDoc>,
    /// Patients without any nursing note inside the window.
    pub dropped_empty: usize,
}

/// Concatenates, per patient, the nursing notes charted within
/// `[admit, admit + window_hours]` in chronological order, separated by a
/// single space.
pub fn window_docs(cohort: &Cohort, window_hours: f64) -> WindowedDocs {
    let limit = (window_hours * 3600.0).floor() as i64;
    let mut docs = Vec::with_capacity(cohort.patients.len());
    let mut dropped_empty = 0;
    for p in &cohort.patients {
        let texts: Vec<&str> = cohort.docs[&p.patient_id]
            .iter()
            .filter(|n| n.category.is_nursing())
            .filter(|n| {
                let dt = n.chart_time - n.admit_time;
                (0..=limit).contains(&dt)
            })
            .map(|n| n.text.as_str())
            .collect();
        if texts.is_empty() {
            dropped_empty += 1;
            continue;
        }
        docs.push(PatientDoc {
            patient_id: p.patient_id.clone(),
            n_notes: texts.len(),
            text: texts.join(" "),
            outcome: p.outcome,
        });
    }
    WindowedDocs {
        window_hours,
        docs,
        dropped_empty,
    }
}
