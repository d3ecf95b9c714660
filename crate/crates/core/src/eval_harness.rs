//! Scoring of model predictions against gold answers.
//!
//! Closed-set: the normalized prediction must mention exactly one label, the
//! gold one. Open-set: some synonym of the gold label must occur and no
//! synonym of any other label. Binary: the first `yes`/`no` word decides.
//! Overall accuracy is micro-averaged over all samples.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction_builder::{InstructionRecord, TaskKind, TaskSpec};
use crate::text::{find_phrase, tokens};

/// Label → synonym list for open-set matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon(pub BTreeMap<String, Vec<String>>);

impl Lexicon {
    /// Every label maps to itself plus its listed synonyms.
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(label, mut syns)| {
                if !syns.iter().any(|s| s.eq_ignore_ascii_case(&label)) {
                    syns.insert(0, label.clone());
                }
                (label, syns)
            })
            .collect();
        Self(entries)
    }

    pub fn default_emotions() -> Self {
        let table: [(&str, &[&str]); 6] = [
            (
                "anger",
                &[
                    "angry",
                    "anger",
                    "mad",
                    "furious",
                    "rage",
                    "annoyed",
                    "irritated",
                ],
            ),
            (
                "disgust",
                &[
                    "disgust",
                    "disgusted",
                    "disgusting",
                    "revulsion",
                    "repulsed",
                    "gross",
                ],
            ),
            (
                "fear",
                &[
                    "fear",
                    "afraid",
                    "scared",
                    "frightened",
                    "fearful",
                    "terrified",
                    "anxious",
                ],
            ),
            (
                "joy",
                &[
                    "joy",
                    "happy",
                    "happiness",
                    "joyful",
                    "delighted",
                    "cheerful",
                    "glad",
                ],
            ),
            (
                "sadness",
                &[
                    "sadness",
                    "sad",
                    "unhappy",
                    "sorrow",
                    "sorrowful",
                    "depressed",
                    "grief",
                ],
            ),
            (
                "surprise",
                &[
                    "surprise",
                    "surprised",
                    "astonished",
                    "amazed",
                    "shocked",
                    "startled",
                ],
            ),
        ];
        Self::new(
            table
                .iter()
                .map(|(l, s)| ((*l).to_owned(), s.iter().map(|x| (*x).to_owned()).collect()))
                .collect(),
        )
    }

    fn hits(&self, prediction: &[String]) -> Vec<&str> {
        self.0
            .iter()
            .filter(|(_, syns)| {
                syns.iter()
                    .any(|s| find_phrase(prediction, &tokens(s)).is_some())
            })
            .map(|(label, _)| label.as_str())
            .collect()
    }
}

/// The single label mentioned by the prediction, if exactly one is.
pub fn resolve_closed<'a>(prediction: &str, label_set: &'a [String]) -> Option<&'a str> {
    let words = tokens(prediction);
    let mut hits = label_set
        .iter()
        .filter(|l| find_phrase(&words, &tokens(l)).is_some());
    match (hits.next(), hits.next()) {
        (Some(only), None) => Some(only.as_str()),
        _ => None,
    }
}

pub fn score_closed(prediction: &str, gold: &str, label_set: &[String]) -> bool {
    resolve_closed(prediction, label_set).is_some_and(|m| m.eq_ignore_ascii_case(gold))
}

/// The single lexicon label whose synonyms occur in the prediction.
pub fn resolve_open<'a>(prediction: &str, lexicon: &'a Lexicon) -> Option<&'a str> {
    match lexicon.hits(&tokens(prediction)).as_slice() {
        [only] => Some(only),
        _ => None,
    }
}

pub fn score_open(prediction: &str, gold: &str, lexicon: &Lexicon) -> Result<bool> {
    let gold_key = lexicon
        .0
        .keys()
        .find(|k| k.eq_ignore_ascii_case(gold))
        .ok_or_else(|| Error::Config(format!("lexicon has no entry for gold label '{gold}'")))?;
    Ok(resolve_open(prediction, lexicon) == Some(gold_key.as_str()))
}

/// `Yes` or `No` from the first yes/no word of the prediction.
pub fn resolve_binary(prediction: &str) -> Option<&'static str> {
    tokens(prediction).iter().find_map(|w| match w.as_str() {
        "yes" => Some("Yes"),
        "no" => Some("No"),
        _ => None,
    })
}

pub fn score_binary(prediction: &str, gold: &str) -> bool {
    resolve_binary(prediction).is_some_and(|m| m.eq_ignore_ascii_case(gold.trim()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub data_ref: String,
    pub prediction: String,
    pub gold: String,
    pub matched: Option<String>,
    pub correct: bool,
}

/// Scores one prediction under the rules of its task kind. Open-set tasks use
/// `lexicon`.
pub fn score_record(
    spec: &TaskSpec,
    lexicon: &Lexicon,
    data_ref: &str,
    prediction: &str,
    gold: &str,
) -> Result<EvalRecord> {
    let gold = spec
        .canonical_label(gold)
        .ok_or_else(|| {
            Error::Parameter(format!(
                "gold '{gold}' not in the label set of '{}'",
                spec.task_id
            ))
        })?
        .to_owned();
    let matched = match spec.kind {
        TaskKind::Classification => resolve_closed(prediction, &spec.label_set).map(str::to_owned),
        TaskKind::Open => {
            score_open("", &gold, lexicon)?;
            resolve_open(prediction, lexicon).map(str::to_owned)
        }
        TaskKind::Binary => resolve_binary(prediction).map(str::to_owned),
    };
    let correct = matched
        .as_deref()
        .is_some_and(|m| m.eq_ignore_ascii_case(&gold));
    Ok(EvalRecord {
        task_id: spec.task_id.clone(),
        data_ref: data_ref.to_owned(),
        prediction: prediction.to_owned(),
        gold,
        matched,
        correct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub correct: usize,
    pub count: usize,
    /// Percent.
    pub accuracy: f64,
}

impl TaskScore {
    fn from_counts(correct: usize, count: usize) -> Self {
        Self {
            correct,
            count,
            accuracy: correct as f64 / count as f64 * 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_task: BTreeMap<String, TaskScore>,
    pub overall: TaskScore,
}

pub fn aggregate(records: &[EvalRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::Parameter("no records to aggregate".into()));
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let entry = counts.entry(r.task_id.clone()).or_default();
        entry.0 += usize::from(r.correct);
        entry.1 += 1;
    }
    let total_correct = counts.values().map(|c| c.0).sum();
    let per_task = counts
        .into_iter()
        .map(|(task, (c, n))| (task, TaskScore::from_counts(c, n)))
        .collect();
    Ok(Metrics {
        per_task,
        overall: TaskScore::from_counts(total_correct, records.len()),
    })
}

/// Column order of the summary table; unknown tasks follow alphabetically.
pub const TABLE_ORDER: [(&str, &str); 6] = [
    ("emo-c", "Emo-C"),
    ("emo-o", "Emo-O"),
    ("intention", "Intention"),
    ("hate", "Hate"),
    ("humor", "Humor"),
    ("sarcasm", "Sarcasm"),
];

/// Aligned plain-text table: one accuracy row and one sample-count row.
pub fn render_table(metrics: &Metrics) -> String {
    let mut columns: Vec<(String, TaskScore)> = Vec::new();
    for (id, title) in TABLE_ORDER {
        if let Some(s) = metrics.per_task.get(id) {
            columns.push((title.to_owned(), *s));
        }
    }
    for (id, s) in &metrics.per_task {
        if !TABLE_ORDER.iter().any(|(known, _)| known == id) {
            columns.push((id.clone(), *s));
        }
    }
    columns.push(("Overall".to_owned(), metrics.overall));

    let widths: Vec<usize> = columns.iter().map(|(t, _)| t.len().max(7)).collect();
    let mut out = String::new();
    let mut line = |label: &str, cells: Vec<String>| {
        let _ = write!(out, "{label:<8}");
        for (cell, w) in cells.iter().zip(&widths) {
            let _ = write!(out, " | {cell:>w$}");
        }
        out.push('\n');
    };
    line("", columns.iter().map(|(t, _)| t.clone()).collect());
    line(
        "Accuracy",
        columns
            .iter()
            .map(|(_, s)| format!("{:.2}", s.accuracy))
            .collect(),
    );
    line(
        "Samples",
        columns.iter().map(|(_, s)| s.count.to_string()).collect(),
    );
    out
}

/// A prediction line: `{"task": ..., "data_ref": ..., "prediction": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub task: String,
    pub data_ref: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRun {
    pub records: Vec<EvalRecord>,
    /// Gold items without a prediction (scored as wrong).
    pub missing: usize,
    /// Predictions with no gold item (ignored).
    pub unmatched: usize,
}

/// Pairs predictions with gold records on `(task, data_ref)`, in order of
/// appearance for repeated keys, and scores each gold record.
pub fn score_predictions(
    gold: &[InstructionRecord],
    predictions: &[PredictionRow],
    tasks: &[TaskSpec],
    lexicon: &Lexicon,
) -> Result<ScoreRun> {
    let mut queue: HashMap<(&str, &str), VecDeque<&str>> = HashMap::new();
    for p in predictions {
        queue
            .entry((p.task.as_str(), p.data_ref.as_str()))
            .or_default()
            .push_back(p.prediction.as_str());
    }
    let mut missing = 0;
    let mut records = Vec::with_capacity(gold.len());
    for g in gold {
        let spec = crate::instruction_builder::find_task(tasks, &g.task)?;
        let prediction = queue
            .get_mut(&(g.task.as_str(), g.data_ref.as_str()))
            .and_then(VecDeque::pop_front);
        if prediction.is_none() {
            missing += 1;
        }
        records.push(score_record(
            spec,
            lexicon,
            &g.data_ref,
            prediction.unwrap_or(""),
            &g.answer,
        )?);
    }
    let unmatched = queue.values().map(VecDeque::len).sum();
    Ok(ScoreRun {
        records,
        missing,
        unmatched,
    })
}
