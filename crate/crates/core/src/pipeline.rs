//! Long-format trial data: ingestion, per-trial metrics and aggregate reports.
//!
//! One row per subject × round. A trial is a `(dataset_id, group_id, task_id)`
//! triple; round 0 holds the independent estimate and each subject's highest
//! round holds the final one.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, Outcome};
use crate::error::{Error, Result};
use crate::heuristic::{self, Majority};
use crate::simlab::{self, Condition, TrialRecord};
use crate::statkit::{self, LogisticReport, ProportionTestResult};

/// Fits on fewer trials than this are skipped.
pub const MIN_TRIALS_FOR_FIT: usize = 10;

const REQUIRED_COLUMNS: [&str; 8] = [
    "dataset_id",
    "condition",
    "group_id",
    "task_id",
    "subject_id",
    "round",
    "estimate",
    "truth",
];

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub dataset_id: String,
    pub condition: Condition,
    pub group_id: String,
    pub task_id: String,
    pub subject_id: String,
    pub round: u32,
    pub estimate: f64,
    pub truth: f64,
    pub messages_sent: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialKey {
    pub dataset_id: String,
    pub group_id: String,
    pub task_id: String,
}

impl std::fmt::Display for TrialKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.dataset_id, self.group_id, self.task_id)
    }
}

/// All rounds of one subject in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub subject_id: String,
    pub estimates: BTreeMap<u32, f64>,
    /// Largest count reported on any of the subject's rows.
    pub messages_sent: Option<u64>,
}

impl SubjectSeries {
    pub fn initial(&self) -> f64 {
        self.estimates[&0]
    }

    pub fn final_round(&self) -> u32 {
        *self.estimates.keys().next_back().expect("round 0 is always present")
    }

    pub fn final_estimate(&self) -> f64 {
        self.estimates[&self.final_round()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialData {
    pub key: TrialKey,
    pub condition: Condition,
    pub truth: f64,
    /// Sorted by subject id, numerically when every id is an integer.
    pub subjects: Vec<SubjectSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    /// Sorted by key.
    pub trials: Vec<TrialData>,
    pub rows: usize,
}

fn column_index(headers: &csv::StringRecord) -> Result<(Vec<usize>, Option<usize>)> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = REQUIRED_COLUMNS
        .iter()
        .map(|&name| find(name).ok_or_else(|| Error::Schema(format!("missing column `{name}`"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((required, find("messages_sent")))
}

fn parse_row(record: &csv::StringRecord, cols: &[usize], messages_col: Option<usize>, line: u64) -> Result<Observation> {
    let field = |i: usize| record.get(cols[i]).unwrap_or("").trim();
    let bad = |what: &str, value: &str| Error::Parse {
        line,
        message: format!("invalid {what} `{value}`"),
    };
    let number = |i: usize, what: &str| -> Result<f64> {
        let raw = field(i);
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(what, raw))
    };
    let text = |i: usize, what: &str| -> Result<String> {
        let raw = field(i);
        if raw.is_empty() {
            Err(bad(what, raw))
        } else {
            Ok(raw.to_string())
        }
    };
    let condition = field(1)
        .parse::<Condition>()
        .map_err(|_| bad("condition", field(1)))?;
    let round = field(5).parse::<u32>().map_err(|_| bad("round", field(5)))?;
    let messages_sent = match messages_col.and_then(|c| record.get(c)).map(str::trim) {
        None | Some("") => None,
        Some(raw) => Some(raw.parse::<u64>().map_err(|_| bad("messages_sent", raw))?),
    };
    Ok(Observation {
        dataset_id: text(0, "dataset_id")?,
        condition,
        group_id: text(2, "group_id")?,
        task_id: text(3, "task_id")?,
        subject_id: text(4, "subject_id")?,
        round,
        estimate: number(6, "estimate")?,
        truth: number(7, "truth")?,
        messages_sent,
    })
}

/// Reads and validates a long-format CSV stream.
pub fn load_csv<R: Read>(reader: R) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let (cols, messages_col) = column_index(&headers)?;
    let mut rows = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push(parse_row(&record, &cols, messages_col, line)?);
    }
    dataset_from_rows(rows)
}

pub fn load_csv_path(path: impl AsRef<Path>) -> Result<TrialDataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_csv(std::io::BufReader::new(file))
}

fn sort_subject_ids(subjects: &mut [SubjectSeries]) {
    let numeric: Option<Vec<u64>> = subjects.iter().map(|s| s.subject_id.parse().ok()).collect();
    match numeric {
        Some(_) => subjects.sort_by_key(|s| s.subject_id.parse::<u64>().unwrap_or(u64::MAX)),
        None => subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id)),
    }
}

/// Groups rows into trials and checks the dataset invariants.
pub fn dataset_from_rows(rows: Vec<Observation>) -> Result<TrialDataset> {
    if rows.is_empty() {
        return Err(Error::Invariant("dataset has no trials".into()));
    }
    let n_rows = rows.len();
    let mut truths: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut trials: BTreeMap<TrialKey, (Condition, f64, BTreeMap<String, SubjectSeries>)> = BTreeMap::new();
    for row in rows {
        let task = (row.dataset_id.clone(), row.task_id.clone());
        match truths.get(&task) {
            Some(&t) if t != row.truth => {
                return Err(Error::Invariant(format!(
                    "truth varies within task `{}` of dataset `{}` ({t} vs {})",
                    row.task_id, row.dataset_id, row.truth
                )))
            }
            Some(_) => {}
            None => {
                truths.insert(task, row.truth);
            }
        }
        let key = TrialKey {
            dataset_id: row.dataset_id,
            group_id: row.group_id,
            task_id: row.task_id,
        };
        let entry = trials
            .entry(key.clone())
            .or_insert_with(|| (row.condition, row.truth, BTreeMap::new()));
        if entry.0 != row.condition {
            return Err(Error::Invariant(format!("condition varies within trial {key}")));
        }
        let subject = entry.2.entry(row.subject_id.clone()).or_insert_with(|| SubjectSeries {
            subject_id: row.subject_id.clone(),
            estimates: BTreeMap::new(),
            messages_sent: None,
        });
        if subject.estimates.insert(row.round, row.estimate).is_some() {
            return Err(Error::Invariant(format!(
                "duplicate row for subject `{}` round {} in trial {key}",
                row.subject_id, row.round
            )));
        }
        if let Some(m) = row.messages_sent {
            subject.messages_sent = Some(subject.messages_sent.map_or(m, |old| old.max(m)));
        }
    }
    let trials = trials
        .into_iter()
        .map(|(key, (condition, truth, subjects))| {
            let mut subjects: Vec<SubjectSeries> = subjects.into_values().collect();
            if let Some(s) = subjects.iter().find(|s| !s.estimates.contains_key(&0)) {
                return Err(Error::Invariant(format!(
                    "subject `{}` has no round-0 estimate in trial {key}",
                    s.subject_id
                )));
            }
            sort_subject_ids(&mut subjects);
            Ok(TrialData { key, condition, truth, subjects })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialDataset { trials, rows: n_rows })
}

/// Long-format rows for simulated trials: group `g{trial:06}`, task `task`,
/// subjects numbered from 0, one row per subject and recorded state.
pub fn records_to_rows(records: &[TrialRecord], dataset_id: &str) -> Vec<Observation> {
    let mut rows = Vec::new();
    for rec in records {
        let group_id = format!("g{:06}", rec.trial);
        for (round, state) in rec.trajectory.iter().enumerate() {
            for (i, &estimate) in state.iter().enumerate() {
                rows.push(Observation {
                    dataset_id: dataset_id.to_string(),
                    condition: rec.condition,
                    group_id: group_id.clone(),
                    task_id: "task".into(),
                    subject_id: i.to_string(),
                    round: round as u32,
                    estimate,
                    truth: rec.truth,
                    messages_sent: rec.messages.as_ref().map(|m| u64::from(m[i])),
                });
            }
        }
    }
    rows
}

/// Writes rows with the canonical header.
pub fn write_csv<W: Write>(rows: &[Observation], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(REQUIRED_COLUMNS.iter().copied().chain(["messages_sent"]))
        .map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        let messages = r.messages_sent.map(|m| m.to_string()).unwrap_or_default();
        wtr.write_record([
            r.dataset_id.as_str(),
            r.condition.as_str(),
            &r.group_id,
            &r.task_id,
            &r.subject_id,
            &r.round.to_string(),
            &r.estimate.to_string(),
            &r.truth.to_string(),
            &messages,
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: String,
    pub pre_estimate: f64,
    pub pre_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub messages: Option<u64>,
    /// Revision from round 0 to round 1 against the round-0 peer mean.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stubbornness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub key: TrialKey,
    pub condition: Condition,
    pub truth: f64,
    pub pre_mean: f64,
    pub post_mean: f64,
    pub phi: f64,
    pub majority: Majority,
    pub phi_degenerate: bool,
    pub outcome: Outcome,
    /// Gini of message counts with silent subjects included.
    pub gini_messages: Option<f64>,
    /// Most messages; ties go to the first subject in id order.
    pub top_talker: Option<String>,
    pub top_talker_toward: Option<bool>,
    pub subjects: Vec<SubjectMetrics>,
    pub warnings: Vec<String>,
}

/// True when `x` and `truth` lie strictly on the same side of `mean`.
pub(crate) fn same_side(x: f64, truth: f64, mean: f64) -> bool {
    let a = x - mean;
    let b = truth - mean;
    a != 0.0 && b != 0.0 && a.signum() == b.signum()
}

fn trial_metrics(trial: &TrialData) -> Result<TrialMetrics> {
    let mut warnings = Vec::new();
    let pre: Vec<f64> = trial.subjects.iter().map(SubjectSeries::initial).collect();
    let last_round = trial.subjects.iter().map(SubjectSeries::final_round).max().unwrap_or(0);
    for s in &trial.subjects {
        if s.final_round() < last_round {
            warnings.push(format!(
                "subject `{}` has no round {last_round}; using round {}",
                s.subject_id,
                s.final_round()
            ));
        }
    }
    let post: Vec<f64> = trial.subjects.iter().map(SubjectSeries::final_estimate).collect();
    let summary = heuristic::phi(&pre, trial.truth)?;
    let outcome = dynamics::improvement(&pre, &post, trial.truth)?;
    let pre_mean = dynamics::mean(&pre);

    let mut gini_messages = None;
    let mut top_talker = None;
    let mut top_talker_toward = None;
    let has_messages = trial.subjects.iter().any(|s| s.messages_sent.is_some());
    if trial.condition == Condition::Discussion && has_messages {
        let missing = trial.subjects.iter().filter(|s| s.messages_sent.is_none()).count();
        if missing > 0 {
            warnings.push(format!("{missing} subject(s) without messages_sent counted as silent"));
        }
        let counts: Vec<u64> = trial.subjects.iter().map(|s| s.messages_sent.unwrap_or(0)).collect();
        let as_f64: Vec<f64> = counts.iter().map(|&m| m as f64).collect();
        match statkit::gini(&as_f64) {
            Ok(g) => {
                gini_messages = Some(g);
                let max = *counts.iter().max().expect("trial has subjects");
                let top = counts.iter().position(|&m| m == max).expect("max is present");
                top_talker = Some(trial.subjects[top].subject_id.clone());
                top_talker_toward = Some(same_side(pre[top], trial.truth, pre_mean));
            }
            Err(Error::AllZero) => warnings.push("every subject sent zero messages; no gini".into()),
            Err(e) => return Err(e),
        }
    }

    let total: f64 = pre.iter().sum();
    let n = pre.len();
    let subjects = trial
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let stubbornness = match (trial.condition, s.estimates.get(&1)) {
                (Condition::Delphi, Some(&first)) if n > 1 => {
                    let peer_mean = (total - pre[i]) / (n - 1) as f64;
                    simlab::empirical_stubbornness(pre[i], first, peer_mean)
                }
                _ => None,
            };
            SubjectMetrics {
                subject_id: s.subject_id.clone(),
                pre_estimate: pre[i],
                pre_error: (pre[i] - trial.truth).abs(),
                messages: s.messages_sent,
                stubbornness,
            }
        })
        .collect();

    Ok(TrialMetrics {
        key: trial.key.clone(),
        condition: trial.condition,
        truth: trial.truth,
        pre_mean,
        post_mean: dynamics::mean(&post),
        phi: summary.phi,
        majority: summary.label,
        phi_degenerate: summary.degenerate,
        outcome,
        gini_messages,
        top_talker,
        top_talker_toward,
        subjects,
        warnings,
    })
}

/// Metrics for every trial, in key order.
pub fn per_trial_metrics(ds: &TrialDataset) -> Result<Vec<TrialMetrics>> {
    ds.trials.par_iter().map(trial_metrics).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    /// Cluster by group when some group appears in more than one trial.
    #[default]
    Auto,
    Group,
    None,
}

impl std::str::FromStr for ClusterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(ClusterMode::Auto),
            "group" => Ok(ClusterMode::Group),
            "none" => Ok(ClusterMode::None),
            other => Err(Error::Schema(format!("unknown cluster mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportOptions {
    pub clusters: ClusterMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityRow {
    pub dataset_id: String,
    pub condition: Condition,
    pub toward: usize,
    pub away: usize,
    pub split: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub trials: usize,
    pub improved: usize,
    pub proportion: Option<f64>,
    /// Against 0.5.
    pub test: Option<ProportionTestResult>,
}

impl BucketStat {
    fn new(outcomes: impl Iterator<Item = bool>) -> Result<Self> {
        let (mut trials, mut improved) = (0usize, 0usize);
        for hit in outcomes {
            trials += 1;
            improved += usize::from(hit);
        }
        let test = if trials > 0 {
            Some(statkit::proportion_test(improved as u64, trials as u64, 0.5)?)
        } else {
            None
        };
        Ok(BucketStat {
            trials,
            improved,
            proportion: (trials > 0).then(|| improved as f64 / trials as f64),
            test,
        })
    }
}

fn compare(a: &BucketStat, b: &BucketStat) -> Result<Option<ProportionTestResult>> {
    if a.trials == 0 || b.trials == 0 {
        return Ok(None);
    }
    statkit::proportion_test_2(a.improved as u64, a.trials as u64, b.improved as u64, b.trials as u64).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure2Cell {
    pub dataset_id: String,
    pub condition: Condition,
    pub toward: BucketStat,
    pub away: BucketStat,
    pub split: BucketStat,
    pub toward_vs_away: Option<ProportionTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableA1Row {
    pub majority: Majority,
    pub condition: Condition,
    pub dataset_id: String,
    pub trials: usize,
    pub improved: usize,
    pub pct_improved: f64,
    pub p_value: f64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBlock {
    pub condition: Condition,
    pub n_trials: usize,
    pub fit: Option<LogisticReport>,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure3Cell {
    pub dataset_id: String,
    pub top_talker_toward: BucketStat,
    pub top_talker_away: BucketStat,
    pub toward_vs_away: Option<ProportionTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalkAccuracy {
    pub dataset_id: String,
    pub n_subjects: usize,
    pub correlation: Option<f64>,
    pub p_value: Option<f64>,
    pub method: String,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub majority_table: Vec<MajorityRow>,
    pub figure2: Vec<Figure2Cell>,
    #[serde(rename = "tableA1")]
    pub table_a1: Vec<TableA1Row>,
    #[serde(rename = "tableA2")]
    pub table_a2: Vec<FitBlock>,
    #[serde(rename = "tableA3")]
    pub table_a3: FitBlock,
    pub figure3: Vec<Figure3Cell>,
    pub talk_accuracy: Vec<TalkAccuracy>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

fn cells(metrics: &[TrialMetrics]) -> BTreeMap<(String, Condition), Vec<&TrialMetrics>> {
    let mut out: BTreeMap<(String, Condition), Vec<&TrialMetrics>> = BTreeMap::new();
    for m in metrics {
        out.entry((m.key.dataset_id.clone(), m.condition)).or_default().push(m);
    }
    out
}

fn cluster_labels(trials: &[&TrialMetrics], mode: ClusterMode) -> Option<Vec<usize>> {
    let groups: Vec<(&str, &str)> = trials
        .iter()
        .map(|m| (m.key.dataset_id.as_str(), m.key.group_id.as_str()))
        .collect();
    let distinct: BTreeSet<(&str, &str)> = groups.iter().copied().collect();
    let use_clusters = match mode {
        ClusterMode::None => false,
        ClusterMode::Group => true,
        ClusterMode::Auto => distinct.len() < groups.len(),
    };
    if !use_clusters {
        return None;
    }
    let index: BTreeMap<(&str, &str), usize> = distinct.into_iter().enumerate().map(|(i, g)| (g, i)).collect();
    Some(groups.iter().map(|g| index[g]).collect())
}

fn fit_block(
    condition: Condition,
    trials: &[&TrialMetrics],
    names: &[&str],
    row: impl Fn(&TrialMetrics) -> Vec<f64>,
    options: ReportOptions,
) -> FitBlock {
    let n = trials.len();
    let skipped = |notice: String| FitBlock { condition, n_trials: n, fit: None, notice: Some(notice) };
    if n < MIN_TRIALS_FOR_FIT {
        return skipped(format!("skipped: {n} trials, need at least {MIN_TRIALS_FOR_FIT}"));
    }
    let k = names.len();
    let values: Vec<f64> = trials.iter().flat_map(|m| row(m)).collect();
    let design = DMatrix::from_row_slice(n, k, &values);
    let y: Vec<bool> = trials.iter().map(|m| m.outcome.improved()).collect();
    let clusters = cluster_labels(trials, options.clusters);
    match statkit::logistic_fit(&design, &y, clusters.as_deref()) {
        Ok(fit) => {
            let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
            FitBlock { condition, n_trials: n, fit: Some(fit.report(&names)), notice: None }
        }
        Err(e) => skipped(format!("skipped: {e}")),
    }
}

fn talk_accuracy(metrics: &[TrialMetrics]) -> Vec<TalkAccuracy> {
    const METHOD: &str = "pearson on quartile scores; normal-approx p";
    let mut by_dataset: BTreeMap<&str, Vec<(&str, f64, f64)>> = BTreeMap::new();
    for m in metrics.iter().filter(|m| m.condition == Condition::Discussion && m.gini_messages.is_some()) {
        let entry = by_dataset.entry(m.key.dataset_id.as_str()).or_default();
        for s in &m.subjects {
            entry.push((m.key.task_id.as_str(), s.pre_error, s.messages.unwrap_or(0) as f64));
        }
    }
    by_dataset
        .into_iter()
        .map(|(dataset_id, subjects)| {
            let n = subjects.len();
            let result = (|| -> Result<(f64, f64)> {
                let talk: Vec<f64> = statkit::quartile_bins(&subjects.iter().map(|s| s.2).collect::<Vec<_>>())?
                    .into_iter()
                    .map(f64::from)
                    .collect();
                let mut error_q = vec![0.0; n];
                let tasks: BTreeSet<&str> = subjects.iter().map(|s| s.0).collect();
                for task in tasks {
                    let idx: Vec<usize> = (0..n).filter(|&i| subjects[i].0 == task).collect();
                    let bins = statkit::quartile_bins(&idx.iter().map(|&i| subjects[i].1).collect::<Vec<_>>())?;
                    for (&i, b) in idx.iter().zip(bins) {
                        error_q[i] = f64::from(b);
                    }
                }
                let r = statkit::correlation(&error_q, &talk)?;
                Ok((r, statkit::correlation_p_value(r, n)))
            })();
            match result {
                Ok((r, p)) => TalkAccuracy {
                    dataset_id: dataset_id.to_string(),
                    n_subjects: n,
                    correlation: Some(r),
                    p_value: Some(p),
                    method: METHOD.into(),
                    notice: None,
                },
                Err(e) => TalkAccuracy {
                    dataset_id: dataset_id.to_string(),
                    n_subjects: n,
                    correlation: None,
                    p_value: None,
                    method: METHOD.into(),
                    notice: Some(format!("skipped: {e}")),
                },
            }
        })
        .collect()
}

/// Aggregate tables and fits over trial metrics.
pub fn aggregate_report(metrics: &[TrialMetrics], options: ReportOptions) -> Result<AnalysisReport> {
    if metrics.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cells = cells(metrics);
    let bucket = |trials: &[&TrialMetrics], label: Majority| {
        BucketStat::new(trials.iter().filter(|m| m.majority == label).map(|m| m.outcome.improved()))
    };

    let mut majority_table = Vec::new();
    let mut figure2 = Vec::new();
    let mut table_a1 = Vec::new();
    for ((dataset_id, condition), trials) in &cells {
        let count = |label| trials.iter().filter(|m| m.majority == label).count();
        majority_table.push(MajorityRow {
            dataset_id: dataset_id.clone(),
            condition: *condition,
            toward: count(Majority::Toward),
            away: count(Majority::Away),
            split: count(Majority::Split),
            total: trials.len(),
        });
        let toward = bucket(trials, Majority::Toward)?;
        let away = bucket(trials, Majority::Away)?;
        let split = bucket(trials, Majority::Split)?;
        for (label, stat) in [(Majority::Away, &away), (Majority::Toward, &toward)] {
            if let (Some(p), Some(test)) = (stat.proportion, &stat.test) {
                table_a1.push(TableA1Row {
                    majority: label,
                    condition: *condition,
                    dataset_id: dataset_id.clone(),
                    trials: stat.trials,
                    improved: stat.improved,
                    pct_improved: p,
                    p_value: test.p_value,
                    method: test.method.as_str().into(),
                });
            }
        }
        figure2.push(Figure2Cell {
            dataset_id: dataset_id.clone(),
            condition: *condition,
            toward_vs_away: compare(&toward, &away)?,
            toward,
            away,
            split,
        });
    }
    table_a1.sort_by(|a, b| {
        (a.majority.as_str(), a.condition, &a.dataset_id).cmp(&(b.majority.as_str(), b.condition, &b.dataset_id))
    });

    let conditions: BTreeSet<Condition> = metrics.iter().map(|m| m.condition).collect();
    let table_a2 = conditions
        .into_iter()
        .map(|c| {
            let trials: Vec<&TrialMetrics> = metrics.iter().filter(|m| m.condition == c).collect();
            fit_block(c, &trials, &["intercept", "phi"], |m| vec![1.0, m.phi], options)
        })
        .collect();

    let with_gini: Vec<&TrialMetrics> = metrics
        .iter()
        .filter(|m| m.condition == Condition::Discussion && m.gini_messages.is_some())
        .collect();
    let table_a3 = fit_block(
        Condition::Discussion,
        &with_gini,
        &["intercept", "phi", "gini", "gini_x_phi"],
        |m| {
            let g = m.gini_messages.unwrap_or(0.0);
            vec![1.0, m.phi, g, g * m.phi]
        },
        options,
    );

    let mut talkers: BTreeMap<&str, Vec<&TrialMetrics>> = BTreeMap::new();
    for m in metrics.iter().filter(|m| m.top_talker_toward.is_some()) {
        talkers.entry(m.key.dataset_id.as_str()).or_default().push(m);
    }
    let figure3 = talkers
        .into_iter()
        .map(|(dataset_id, trials)| {
            let side = |want: bool| {
                BucketStat::new(
                    trials
                        .iter()
                        .filter(|m| m.top_talker_toward == Some(want))
                        .map(|m| m.outcome.improved()),
                )
            };
            let toward = side(true)?;
            let away = side(false)?;
            Ok(Figure3Cell {
                dataset_id: dataset_id.to_string(),
                toward_vs_away: compare(&toward, &away)?,
                top_talker_toward: toward,
                top_talker_away: away,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AnalysisReport {
        majority_table,
        figure2,
        table_a1,
        table_a2,
        table_a3,
        figure3,
        talk_accuracy: talk_accuracy(metrics),
    })
}
