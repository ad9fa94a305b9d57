//! Episodic treatment logs: data model, ingestion, validation and splitting.
//!
//! One [`Transition`] is one clinician decision window. Transitions are grouped
//! into per-patient [`Episode`]s, each of which ends in discharge or death.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed leading CSV columns, before the `f_0..f_{d-1}` feature columns.
pub const CSV_FIXED_COLUMNS: [&str; 6] = [
    "patient_id",
    "step_index",
    "terminal",
    "clinical_label",
    "fluid_ml",
    "vis",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    None,
    Discharge,
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Discharge,
    Death,
}

impl Outcome {
    pub fn is_death(self) -> bool {
        matches!(self, Outcome::Death)
    }
}

impl From<Outcome> for Terminal {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Discharge => Terminal::Discharge,
            Outcome::Death => Terminal::Death,
        }
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ClinicalLabel {
    #[default]
    NonSepsis,
    Sepsis,
    SepticShock,
}

impl ClinicalLabel {
    pub const ALL: [ClinicalLabel; 3] = [
        ClinicalLabel::NonSepsis,
        ClinicalLabel::Sepsis,
        ClinicalLabel::SepticShock,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_shock(self) -> bool {
        matches!(self, ClinicalLabel::SepticShock)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClinicalLabel::NonSepsis => "non_sepsis",
            ClinicalLabel::Sepsis => "sepsis",
            ClinicalLabel::SepticShock => "septic_shock",
        }
    }
}

impl fmt::Display for ClinicalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClinicalLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "" | "non_sepsis" => Ok(ClinicalLabel::NonSepsis),
            "sepsis" => Ok(ClinicalLabel::Sepsis),
            "septic_shock" => Ok(ClinicalLabel::SepticShock),
            other => Err(format!("unknown clinical_label `{other}`")),
        }
    }
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::None => "none",
            Terminal::Discharge => "discharge",
            Terminal::Death => "death",
        }
    }

    pub fn outcome(self) -> Option<Outcome> {
        match self {
            Terminal::None => None,
            Terminal::Discharge => Some(Outcome::Discharge),
            Terminal::Death => Some(Outcome::Death),
        }
    }
}

impl FromStr for Terminal {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Terminal::None),
            "discharge" => Ok(Terminal::Discharge),
            "death" => Ok(Terminal::Death),
            other => Err(format!("unknown terminal `{other}`")),
        }
    }
}

/// One decision window of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub patient_id: String,
    pub step_index: u32,
    pub features: Vec<f64>,
    pub fluid_ml: f64,
    pub vis: f64,
    #[serde(default)]
    pub clinical_label: ClinicalLabel,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub patient_id: String,
    pub transitions: Vec<Transition>,
    pub outcome: Outcome,
}

impl Episode {
    /// Builds an episode from transitions of one patient, sorting by step.
    pub fn new(mut transitions: Vec<Transition>) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::InvalidData("empty episode".into()))?;
        let patient_id = first.patient_id.clone();
        transitions.sort_by_key(|t| t.step_index);
        let outcome = transitions
            .last()
            .and_then(|t| t.terminal.outcome())
            .ok_or_else(|| {
                Error::InvalidData(format!("patient {patient_id}: episode without terminal row"))
            })?;
        let ep = Episode {
            patient_id,
            transitions,
            outcome,
        };
        if let Some(issue) = episode_issues(&ep).into_iter().next() {
            return Err(Error::InvalidData(issue));
        }
        Ok(ep)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Patient-keyed collection of episodes, sorted by patient id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    /// Checks every invariant and sorts episodes by patient id.
    pub fn new(mut episodes: Vec<Episode>, feature_names: Vec<String>) -> Result<Self> {
        episodes.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        let ds = Dataset {
            episodes,
            feature_names,
        };
        let report = validate_dataset(&ds);
        if let Some(issue) = report.issues.iter().find(|i| i.severity == Severity::Error) {
            return Err(Error::InvalidData(issue.to_string()));
        }
        Ok(ds)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_patients(&self) -> usize {
        self.episodes.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }

    /// A subset (or multiset) of episodes by index, keeping feature names.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            episodes: indices.iter().map(|&i| self.episodes[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

pub fn default_feature_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("f_{i}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// Guesses from a file extension; anything but `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => LogFormat::Jsonl,
            _ => LogFormat::Csv,
        }
    }
}

#[derive(Debug, Deserialize)]
struct JsonRow {
    patient_id: String,
    step_index: u32,
    terminal: Terminal,
    #[serde(default)]
    clinical_label: Option<String>,
    fluid_ml: f64,
    vis: f64,
    features: Vec<f64>,
}

/// Parses a CSV or JSONL transition log into a validated [`Dataset`].
pub fn parse_transition_log<R: Read>(reader: R, format: LogFormat) -> Result<Dataset> {
    let (rows, names) = match format {
        LogFormat::Csv => parse_csv_rows(reader)?,
        LogFormat::Jsonl => parse_jsonl_rows(reader)?,
    };
    assemble(rows, names)
}

fn parse_number(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("column `{name}`: `{field}` is not a number")))?;
    if v.is_nan() {
        return Err(Error::parse(line, format!("column `{name}`: NaN is not accepted")));
    }
    Ok(v)
}

fn check_doses(fluid: f64, vis: f64, line: usize) -> Result<()> {
    if !(fluid >= 0.0 && fluid.is_finite()) {
        return Err(Error::parse(line, format!("fluid_ml must be finite and >= 0, got {fluid}")));
    }
    if !(vis >= 0.0 && vis.is_finite()) {
        return Err(Error::parse(line, format!("vis must be finite and >= 0, got {vis}")));
    }
    Ok(())
}

type Rows = Vec<(usize, Transition)>;

fn parse_csv_rows<R: Read>(reader: R) -> Result<(Rows, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < CSV_FIXED_COLUMNS.len() {
        return Err(Error::parse(1, "header has too few columns"));
    }
    for (i, want) in CSV_FIXED_COLUMNS.iter().enumerate() {
        if &header[i] != *want {
            return Err(Error::parse(
                1,
                format!("header column {i} must be `{want}`, found `{}`", &header[i]),
            ));
        }
    }
    let d = header.len() - CSV_FIXED_COLUMNS.len();
    for j in 0..d {
        let want = format!("f_{j}");
        let got = &header[CSV_FIXED_COLUMNS.len() + j];
        if got != want {
            return Err(Error::parse(
                1,
                format!("feature column {j} must be `{want}`, found `{got}`"),
            ));
        }
    }
    let names = default_feature_names(d);

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::parse(
                line,
                format!(
                    "feature dimension mismatch: expected {d} features, row has {}",
                    rec.len().saturating_sub(CSV_FIXED_COLUMNS.len())
                ),
            ));
        }
        let patient_id = rec[0].to_string();
        if patient_id.is_empty() {
            return Err(Error::parse(line, "empty patient_id"));
        }
        let step_index: u32 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("bad step_index `{}`", &rec[1])))?;
        let terminal: Terminal = rec[2].parse().map_err(|e: String| Error::parse(line, e))?;
        let clinical_label: ClinicalLabel =
            rec[3].parse().map_err(|e: String| Error::parse(line, e))?;
        let fluid_ml = parse_number(&rec[4], "fluid_ml", line)?;
        let vis = parse_number(&rec[5], "vis", line)?;
        check_doses(fluid_ml, vis, line)?;
        let features = (0..d)
            .map(|j| parse_number(&rec[6 + j], &names[j], line))
            .collect::<Result<Vec<_>>>()?;
        rows.push((
            line,
            Transition {
                patient_id,
                step_index,
                features,
                fluid_ml,
                vis,
                clinical_label,
                terminal,
            },
        ));
    }
    Ok((rows, names))
}

fn parse_jsonl_rows<R: Read>(reader: R) -> Result<(Rows, Vec<String>)> {
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonRow = serde_json::from_str(&line)
            .map_err(|e| Error::parse(lineno, format!("malformed JSON: {e}")))?;
        match dim {
            None => dim = Some(raw.features.len()),
            Some(d) if d != raw.features.len() => {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "feature dimension mismatch: expected {d} features, row has {}",
                        raw.features.len()
                    ),
                ))
            }
            _ => {}
        }
        if raw.features.iter().any(|v| v.is_nan()) {
            return Err(Error::parse(lineno, "NaN feature value is not accepted"));
        }
        check_doses(raw.fluid_ml, raw.vis, lineno)?;
        let clinical_label = match raw.clinical_label.as_deref() {
            None => ClinicalLabel::default(),
            Some(s) => s.parse().map_err(|e: String| Error::parse(lineno, e))?,
        };
        rows.push((
            lineno,
            Transition {
                patient_id: raw.patient_id,
                step_index: raw.step_index,
                features: raw.features,
                fluid_ml: raw.fluid_ml,
                vis: raw.vis,
                clinical_label,
                terminal: raw.terminal,
            },
        ));
    }
    Ok((rows, default_feature_names(dim.unwrap_or(0))))
}

fn assemble(rows: Rows, names: Vec<String>) -> Result<Dataset> {
    let mut by_patient: BTreeMap<String, Vec<(usize, Transition)>> = BTreeMap::new();
    for (line, t) in rows {
        by_patient
            .entry(t.patient_id.clone())
            .or_default()
            .push((line, t));
    }
    let mut episodes = Vec::with_capacity(by_patient.len());
    for (pid, mut rows) in by_patient {
        rows.sort_by_key(|(_, t)| t.step_index);
        for w in rows.windows(2) {
            if w[0].1.step_index == w[1].1.step_index {
                return Err(Error::parse(
                    w[1].0,
                    format!("duplicate (patient_id, step_index) = ({pid}, {})", w[1].1.step_index),
                ));
            }
        }
        let n = rows.len();
        for (i, (line, t)) in rows.iter().enumerate() {
            if i + 1 < n && t.terminal != Terminal::None {
                return Err(Error::parse(
                    *line,
                    format!("patient {pid}: terminal before end of episode"),
                ));
            }
        }
        let (last_line, last) = &rows[n - 1];
        if last.terminal == Terminal::None {
            return Err(Error::parse(
                *last_line,
                format!("patient {pid}: episode without terminal row"),
            ));
        }
        episodes.push(Episode::new(rows.into_iter().map(|(_, t)| t).collect())?);
    }
    Dataset::new(episodes, names)
}

fn fmt_f64(v: f64) -> String {
    // Debug formatting is the shortest representation that round-trips.
    format!("{v:?}")
}

/// Writes the dataset in the CSV interchange format.
pub fn write_csv<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let mut header: Vec<String> = CSV_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(default_feature_names(ds.feature_dim()));
    writeln!(w, "{}", header.join(","))?;
    for t in ds.transitions() {
        write!(
            w,
            "{},{},{},{},{},{}",
            t.patient_id,
            t.step_index,
            t.terminal.as_str(),
            t.clinical_label.as_str(),
            fmt_f64(t.fluid_ml),
            fmt_f64(t.vis)
        )?;
        for v in &t.features {
            write!(w, ",{}", fmt_f64(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes the dataset in the JSONL interchange format (one transition per line).
pub fn write_jsonl<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    for t in ds.transitions() {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub patient_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.patient_id {
            Some(p) => write!(f, "patient {p}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMissing {
    pub name: String,
    pub nan_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub episodes: usize,
    pub transitions: usize,
    pub discharges: usize,
    pub deaths: usize,
    pub feature_dim: usize,
    pub missing: Vec<FeatureMissing>,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn error_count(&self) -> usize {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Error)
            .count()
    }

    pub fn warning_count(&self) -> usize {
        self.issues.len() - self.error_count()
    }
}

fn episode_issues(ep: &Episode) -> Vec<String> {
    let mut out = Vec::new();
    if ep.transitions.is_empty() {
        out.push("empty episode".to_string());
        return out;
    }
    let n = ep.transitions.len();
    for (i, t) in ep.transitions.iter().enumerate() {
        if t.patient_id != ep.patient_id {
            out.push(format!("transition carries patient id {}", t.patient_id));
        }
        if i + 1 < n && t.terminal != Terminal::None {
            out.push(format!("terminal before end (step {})", t.step_index));
        }
        if i > 0 && ep.transitions[i - 1].step_index >= t.step_index {
            out.push(format!("step_index not strictly increasing at step {}", t.step_index));
        }
        if !(t.fluid_ml >= 0.0) || !(t.vis >= 0.0) {
            out.push(format!("negative or NaN dose at step {}", t.step_index));
        }
    }
    match ep.transitions[n - 1].terminal.outcome() {
        None => out.push("episode without terminal row".to_string()),
        Some(o) if o != ep.outcome => {
            out.push("outcome does not match last transition".to_string())
        }
        _ => {}
    }
    out
}

/// Summarises a dataset and lists every invariant violation.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let d = ds.feature_dim();
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    let mut nan = vec![0usize; d];
    let (mut discharges, mut deaths) = (0, 0);
    for ep in &ds.episodes {
        if !seen.insert(ep.patient_id.as_str()) {
            issues.push(Issue {
                severity: Severity::Error,
                patient_id: Some(ep.patient_id.clone()),
                message: "duplicate patient id".into(),
            });
        }
        match ep.outcome {
            Outcome::Discharge => discharges += 1,
            Outcome::Death => deaths += 1,
        }
        for message in episode_issues(ep) {
            issues.push(Issue {
                severity: Severity::Error,
                patient_id: Some(ep.patient_id.clone()),
                message,
            });
        }
        for t in &ep.transitions {
            if t.features.len() != d {
                issues.push(Issue {
                    severity: Severity::Error,
                    patient_id: Some(ep.patient_id.clone()),
                    message: format!(
                        "feature dimension mismatch at step {}: expected {d}, got {}",
                        t.step_index,
                        t.features.len()
                    ),
                });
                continue;
            }
            for (j, v) in t.features.iter().enumerate() {
                if v.is_nan() {
                    nan[j] += 1;
                }
            }
        }
    }
    let missing: Vec<FeatureMissing> = ds
        .feature_names
        .iter()
        .zip(&nan)
        .map(|(name, &nan_count)| FeatureMissing {
            name: name.clone(),
            nan_count,
        })
        .collect();
    for m in missing.iter().filter(|m| m.nan_count > 0) {
        issues.push(Issue {
            severity: Severity::Warning,
            patient_id: None,
            message: format!("feature {} has {} NaN values", m.name, m.nan_count),
        });
    }
    ValidationReport {
        episodes: ds.episodes.len(),
        transitions: ds.n_transitions(),
        discharges,
        deaths,
        feature_dim: d,
        missing,
        issues,
    }
}

/// Partitions patients into (train, holdout), deterministic given `seed`.
pub fn split_by_patient(ds: &Dataset, holdout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.n_patients();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "split needs at least 2 patients, dataset has {n}"
        )));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let n_holdout = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut holdout = idx[..n_holdout].to_vec();
    let mut train = idx[n_holdout..].to_vec();
    holdout.sort_unstable();
    train.sort_unstable();
    Ok((ds.select(&train), ds.select(&holdout)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pid: &str, step: u32, term: &str, f: [f64; 2]) -> String {
        format!("{pid},{step},{term},sepsis,100.0,0.0,{},{}\n", f[0], f[1])
    }

    fn small_csv() -> String {
        let mut s = String::from("patient_id,step_index,terminal,clinical_label,fluid_ml,vis,f_0,f_1\n");
        s += &row("a", 0, "none", [0.1, 0.2]);
        s += &row("b", 0, "none", [1.0, 2.0]);
        s += &row("a", 1, "none", [0.3, 0.4]);
        s += &row("b", 1, "none", [3.0, 4.0]);
        s += &row("a", 2, "discharge", [0.5, 0.6]);
        s += &row("b", 2, "death", [5.0, 6.0]);
        s
    }

    #[test]
    fn parses_two_patients() {
        let ds = parse_transition_log(small_csv().as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(ds.n_patients(), 2);
        assert_eq!(ds.n_transitions(), 6);
        assert_eq!(ds.episodes[0].outcome, Outcome::Discharge);
        assert_eq!(ds.episodes[1].outcome, Outcome::Death);
        assert_eq!(ds.episodes[1].transitions[1].features, vec![3.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch_names_row() {
        let mut s = small_csv();
        s += "c,0,discharge,,0,0,1.0\n";
        let err = parse_transition_log(s.as_bytes(), LogFormat::Csv).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 8);
                assert!(message.contains("dimension"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_missing_terminal_and_duplicates() {
        let s = "patient_id,step_index,terminal,clinical_label,fluid_ml,vis,f_0\na,0,none,,0,0,1\n";
        let err = parse_transition_log(s.as_bytes(), LogFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("without terminal"), "{err}");

        let s = "patient_id,step_index,terminal,clinical_label,fluid_ml,vis,f_0\na,0,none,,0,0,1\na,0,death,,0,0,1\n";
        let err = parse_transition_log(s.as_bytes(), LogFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let s = "patient_id,step_index,terminal,clinical_label,fluid_ml,vis,f_0\na,0,death,,0,0,1\na,1,death,,0,0,1\n";
        let err = parse_transition_log(s.as_bytes(), LogFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("terminal before end"), "{err}");
    }

    #[test]
    fn rejects_nan_and_negative_dose() {
        let s = "patient_id,step_index,terminal,clinical_label,fluid_ml,vis,f_0\na,0,death,,0,0,NaN\n";
        assert!(parse_transition_log(s.as_bytes(), LogFormat::Csv).is_err());
        let s = "patient_id,step_index,terminal,clinical_label,fluid_ml,vis,f_0\na,0,death,,-1,0,1\n";
        assert!(parse_transition_log(s.as_bytes(), LogFormat::Csv).is_err());
    }

    #[test]
    fn label_defaults_to_non_sepsis() {
        let s = "patient_id,step_index,terminal,clinical_label,fluid_ml,vis,f_0\na,0,death,,0,0,1\n";
        let ds = parse_transition_log(s.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(ds.episodes[0].transitions[0].clinical_label, ClinicalLabel::NonSepsis);
    }

    #[test]
    fn jsonl_matches_csv() {
        let ds = parse_transition_log(small_csv().as_bytes(), LogFormat::Csv).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf).unwrap();
        let back = parse_transition_log(buf.as_slice(), LogFormat::Jsonl).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn validate_reports() {
        let ds = parse_transition_log(small_csv().as_bytes(), LogFormat::Csv).unwrap();
        let r = validate_dataset(&ds);
        assert_eq!(r.error_count(), 0);
        assert_eq!((r.episodes, r.transitions, r.discharges, r.deaths), (2, 6, 1, 1));

        let mut bad = ds.clone();
        bad.episodes[1].transitions[1].terminal = Terminal::Death;
        let r = validate_dataset(&bad);
        assert!(r.issues.iter().any(|i| i.message.contains("terminal before end")));

        let mut nan = ds.clone();
        nan.episodes[0].transitions[0].features[1] = f64::NAN;
        nan.episodes[1].transitions[2].features[1] = f64::NAN;
        let r = validate_dataset(&nan);
        assert_eq!(r.error_count(), 0);
        assert_eq!(r.missing[1].nan_count, 2);
        assert!(r
            .issues
            .iter()
            .any(|i| i.severity == Severity::Warning && i.message.contains("f_1")));
    }

    fn n_patient_dataset(n: usize) -> Dataset {
        let eps = (0..n)
            .map(|i| {
                Episode::new(vec![Transition {
                    patient_id: format!("p{i:03}"),
                    step_index: 0,
                    features: vec![i as f64],
                    fluid_ml: 0.0,
                    vis: 0.0,
                    clinical_label: ClinicalLabel::NonSepsis,
                    terminal: Terminal::Discharge,
                }])
                .unwrap()
            })
            .collect();
        Dataset::new(eps, default_feature_names(1)).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = n_patient_dataset(10);
        let (a, b) = split_by_patient(&ds, 0.3, 1).unwrap();
        assert_eq!((a.n_patients(), b.n_patients()), (7, 3));
        let (a2, b2) = split_by_patient(&ds, 0.3, 1).unwrap();
        assert_eq!((a, b), (a2, b2));
        assert!(split_by_patient(&n_patient_dataset(1), 0.5, 0).is_err());
    }

    #[test]
    fn split_is_partition() {
        let ds = n_patient_dataset(100);
        let (a, b) = split_by_patient(&ds, 0.5, 9).unwrap();
        for ep in &ds.episodes {
            let in_a = a.episodes.iter().filter(|e| e.patient_id == ep.patient_id).count();
            let in_b = b.episodes.iter().filter(|e| e.patient_id == ep.patient_id).count();
            assert_eq!(in_a + in_b, 1, "{}", ep.patient_id);
        }
    }
}
